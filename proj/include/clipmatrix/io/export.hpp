#pragma once

#include "clipmatrix/io/binary.hpp"
#include "clipmatrix/io/png.hpp"
#include "clipmatrix/raster/types.hpp"

#include <fmt/format.h>

#include <filesystem>
#include <span>
#include <string>

namespace clipmatrix::io {

/// Triangle mesh with per-vertex UVs, as written to OBJ.
struct ExportMesh {
  std::vector<Vec3d> vertices;
  std::vector<Vec2d> uv_coords;
  std::vector<Face> faces;
};

inline std::string format_obj(const ExportMesh& mesh, std::string_view mtl_name) {
  if (mesh.uv_coords.size() != mesh.vertices.size()) throw ConfigError("export: uv count does not match vertex count");
  std::string out;
  fmt::format_to(std::back_inserter(out), "# {} vertices, {} faces\nmtllib {}\n", mesh.vertices.size(),
                 mesh.faces.size(), mtl_name);
  for (const auto& v : mesh.vertices) fmt::format_to(std::back_inserter(out), "v {:.8g} {:.8g} {:.8g}\n", v.x(), v.y(), v.z());
  for (const auto& t : mesh.uv_coords) fmt::format_to(std::back_inserter(out), "vt {:.8g} {:.8g}\n", t.x(), t.y());
  out += "usemtl material0\n";
  for (const auto& f : mesh.faces) {
    if (f[0] >= mesh.vertices.size() || f[1] >= mesh.vertices.size() || f[2] >= mesh.vertices.size()) {
      throw ConfigError("export: face index out of range");
    }
    const auto a = f[0] + 1, b = f[1] + 1, c = f[2] + 1;
    fmt::format_to(std::back_inserter(out), "f {}/{} {}/{} {}/{}\n", a, a, b, b, c, c);
  }
  return out;
}

inline std::string format_mtl(const raster::Material& m, std::string_view texture_name) {
  return fmt::format(
      "newmtl material0\n"
      "Ka {:.8g} {:.8g} {:.8g}\n"
      "Kd {:.8g} {:.8g} {:.8g}\n"
      "Ks {:.8g} {:.8g} {:.8g}\n"
      "Ns {:.8g}\n"
      "illum 2\n"
      "map_Kd {}\n",
      m.ambient.x(), m.ambient.y(), m.ambient.z(), m.diffuse.x(), m.diffuse.y(), m.diffuse.z(), m.specular.x(),
      m.specular.y(), m.specular.z(), m.shininess, texture_name);
}

/// Writes mesh.obj, mesh.mtl and texture.png into `out_dir` (created if needed).
inline void export_obj(const ExportMesh& mesh, const raster::Texture& texture, const raster::Material& material,
                       const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError(fmt::format("cannot create {}: {}", out_dir.string(), ec.message()));
  write_file_atomic(out_dir / "mesh.obj", format_obj(mesh, "mesh.mtl"));
  write_file_atomic(out_dir / "mesh.mtl", format_mtl(material, "texture.png"));
  write_png(out_dir / "texture.png", texture);
}

}  // namespace clipmatrix::io
