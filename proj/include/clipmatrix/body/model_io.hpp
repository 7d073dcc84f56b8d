#pragma once

#include "clipmatrix/body/model.hpp"
#include "clipmatrix/io/binary.hpp"

#include <filesystem>

namespace clipmatrix::body {

inline constexpr std::string_view kModelMagic = "MMX1";

/// Encodes a model in the MMX1 container. Values are stored as 32-bit floats.
inline std::string serialize_model(const TemplateModel<double>& model) {
  const std::size_t n = model.vertex_count();
  const std::size_t j_count = model.joint_count();
  io::PayloadWriter payload;

  std::vector<double> flat;
  flat.reserve(n * 3);
  for (const auto& v : model.template_vertices) flat.insert(flat.end(), {v.x(), v.y(), v.z()});
  payload.add_f32("template_vertices", flat);

  flat.clear();
  for (const auto& field : model.shape_basis) {
    for (const auto& v : field) flat.insert(flat.end(), {v.x(), v.y(), v.z()});
  }
  payload.add_f32("shape_basis", flat);

  payload.add_f32("joint_regressor", std::span<const double>(model.joint_regressor.data(), j_count * n));
  payload.add_f32("skin_weights", std::span<const double>(model.skin_weights.data(), n * j_count));

  flat.clear();
  for (const auto& uv : model.uv_coords) flat.insert(flat.end(), {uv.x(), uv.y()});
  payload.add_f32("uv_coords", flat);

  std::vector<std::uint32_t> face_indices;
  face_indices.reserve(model.face_count() * 3);
  for (const auto& f : model.faces) face_indices.insert(face_indices.end(), f.begin(), f.end());
  payload.add_u32("faces", face_indices);

  nlohmann::json header;
  header["format"] = std::string(kModelMagic);
  header["N"] = n;
  header["F"] = model.face_count();
  header["K"] = model.shape_count();
  header["J"] = j_count;
  header["parent"] = model.parent;
  header["vertex_groups"] = model.vertex_groups;
  header["fields"] = payload.fields();
  return io::assemble_container(kModelMagic, header, payload.payload());
}

inline TemplateModel<double> parse_model(std::string bytes) {
  const io::Container c = io::parse_container(std::move(bytes), kModelMagic);
  const auto& h = c.header;
  auto count = [&](const char* key) -> std::size_t {
    if (!h.contains(key) || !h.at(key).is_number_unsigned()) {
      throw LoadError(std::string("header.") + key + ": missing or not a nonnegative integer");
    }
    return h.at(key).get<std::size_t>();
  };
  const std::size_t n = count("N"), f = count("F"), k = count("K"), j_count = count("J");

  TemplateModel<double> model;
  try {
    model.parent = h.at("parent").get<std::vector<int>>();
    model.vertex_groups = h.at("vertex_groups").get<std::map<std::string, std::vector<std::uint32_t>>>();
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("header: ") + e.what());
  }
  if (model.parent.size() != j_count) throw LoadError("parent: length does not match J");

  const auto verts = c.f32_array("template_vertices", n * 3);
  model.template_vertices.resize(n);
  for (std::size_t i = 0; i < n; ++i) model.template_vertices[i] = {verts[3 * i], verts[3 * i + 1], verts[3 * i + 2]};

  const auto basis = c.f32_array("shape_basis", k * n * 3);
  model.shape_basis.assign(k, std::vector<Vec3d>(n));
  for (std::size_t s = 0; s < k; ++s) {
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t base = (s * n + i) * 3;
      model.shape_basis[s][i] = {basis[base], basis[base + 1], basis[base + 2]};
    }
  }

  const auto regressor = c.f32_array("joint_regressor", j_count * n);
  model.joint_regressor = Eigen::Map<const RowMatrix<double>>(regressor.data(), static_cast<Eigen::Index>(j_count),
                                                              static_cast<Eigen::Index>(n));
  const auto weights = c.f32_array("skin_weights", n * j_count);
  model.skin_weights = Eigen::Map<const RowMatrix<double>>(weights.data(), static_cast<Eigen::Index>(n),
                                                           static_cast<Eigen::Index>(j_count));

  const auto uvs = c.f32_array("uv_coords", n * 2);
  model.uv_coords.resize(n);
  for (std::size_t i = 0; i < n; ++i) model.uv_coords[i] = {uvs[2 * i], uvs[2 * i + 1]};

  const auto faces = c.u32_array("faces", f * 3);
  model.faces.resize(f);
  for (std::size_t i = 0; i < f; ++i) model.faces[i] = {faces[3 * i], faces[3 * i + 1], faces[3 * i + 2]};

  if (auto problem = find_invariant_violation(model)) throw LoadError(*problem);
  return model;
}

inline void save_model(const TemplateModel<double>& model, const std::filesystem::path& path) {
  io::write_file_atomic(path, serialize_model(model));
}

inline TemplateModel<double> load_model(const std::filesystem::path& path) {
  return parse_model(io::read_file(path));
}

}  // namespace clipmatrix::body
