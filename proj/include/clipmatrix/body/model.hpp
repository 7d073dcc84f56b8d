#pragma once

#include "clipmatrix/common.hpp"

#include <fmt/format.h>

#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace clipmatrix::body {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Static data of a rigged template mesh: rest shape, shape blend basis,
/// kinematic tree, joint regressor and linear-blend-skinning weights.
template <typename T = double>
struct TemplateModel {
  std::vector<Vec3<T>> template_vertices;
  std::vector<Face> faces;
  std::vector<Vec2<T>> uv_coords;
  // K displacement fields, each with one 3-vector per vertex.
  std::vector<std::vector<Vec3<T>>> shape_basis;
  // parent[0] == -1; parent[j] < j for every other joint.
  std::vector<int> parent;
  RowMatrix<T> joint_regressor;  // J x N
  RowMatrix<T> skin_weights;     // N x J
  std::map<std::string, std::vector<std::uint32_t>> vertex_groups;

  std::size_t vertex_count() const { return template_vertices.size(); }
  std::size_t face_count() const { return faces.size(); }
  std::size_t shape_count() const { return shape_basis.size(); }
  std::size_t joint_count() const { return parent.size(); }

  bool operator==(const TemplateModel& o) const {
    return template_vertices == o.template_vertices && faces == o.faces &&
           uv_coords == o.uv_coords && shape_basis == o.shape_basis && parent == o.parent &&
           joint_regressor == o.joint_regressor && skin_weights == o.skin_weights &&
           vertex_groups == o.vertex_groups;
  }
};

/// Articulation state: shape coefficients, per-joint axis-angle pose and
/// per-vertex displacement.
template <typename T = double>
struct BodyParams {
  std::vector<T> beta;
  std::vector<Vec3<T>> theta;
  std::vector<Vec3<T>> delta;

  static BodyParams zeros(const TemplateModel<T>& model) {
    BodyParams p;
    p.beta.assign(model.shape_count(), T(0));
    p.theta.assign(model.joint_count(), Vec3<T>::Zero());
    p.delta.assign(model.vertex_count(), Vec3<T>::Zero());
    return p;
  }
};

/// World-space mesh produced by skinning, with per-vertex normals.
template <typename T = double>
struct PosedMesh {
  std::vector<Vec3<T>> vertices;
  std::vector<Face> faces;
  std::vector<Vec2<T>> uv_coords;
  std::vector<Vec3<T>> vertex_normals;
};

/// Checks every TemplateModel invariant. Returns a description of the first
/// violation (naming the field and row), or nothing if the model is valid.
template <typename T>
std::optional<std::string> find_invariant_violation(const TemplateModel<T>& m) {
  const std::size_t n = m.vertex_count();
  const std::size_t j_count = m.joint_count();
  if (n == 0) return "template_vertices: empty";
  if (m.uv_coords.size() != n) {
    return fmt::format("uv_coords: expected {} entries, got {}", n, m.uv_coords.size());
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!m.template_vertices[i].allFinite()) return fmt::format("template_vertices: row {} not finite", i);
    const auto& uv = m.uv_coords[i];
    if (!uv.allFinite() || uv.x() < 0 || uv.x() > 1 || uv.y() < 0 || uv.y() > 1) {
      return fmt::format("uv_coords: row {} outside [0,1]^2", i);
    }
  }
  for (std::size_t f = 0; f < m.faces.size(); ++f) {
    const Face& face = m.faces[f];
    for (auto idx : face) {
      if (idx >= n) return fmt::format("faces: row {} index {} >= N={}", f, idx, n);
    }
    if (face[0] == face[1] || face[1] == face[2] || face[0] == face[2]) {
      return fmt::format("faces: row {} is degenerate", f);
    }
  }
  for (std::size_t k = 0; k < m.shape_basis.size(); ++k) {
    if (m.shape_basis[k].size() != n) {
      return fmt::format("shape_basis: component {} has {} rows, expected {}", k,
                         m.shape_basis[k].size(), n);
    }
  }
  if (j_count == 0) return "parent: no joints";
  if (m.parent[0] != -1) return "parent: row 0 must be the root (-1)";
  for (std::size_t j = 1; j < j_count; ++j) {
    if (m.parent[j] < 0 || static_cast<std::size_t>(m.parent[j]) >= j) {
      return fmt::format("parent: row {} has parent {} (must be in [0,{}))", j, m.parent[j], j);
    }
  }
  if (static_cast<std::size_t>(m.joint_regressor.rows()) != j_count ||
      static_cast<std::size_t>(m.joint_regressor.cols()) != n) {
    return fmt::format("joint_regressor: shape {}x{}, expected {}x{}", m.joint_regressor.rows(),
                       m.joint_regressor.cols(), j_count, n);
  }
  if (static_cast<std::size_t>(m.skin_weights.rows()) != n ||
      static_cast<std::size_t>(m.skin_weights.cols()) != j_count) {
    return fmt::format("skin_weights: shape {}x{}, expected {}x{}", m.skin_weights.rows(),
                       m.skin_weights.cols(), n, j_count);
  }
  for (std::size_t j = 0; j < j_count; ++j) {
    double sum = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double w = m.joint_regressor(j, i);
      if (!std::isfinite(w) || w < 0) return fmt::format("joint_regressor: row {} has a negative entry", j);
      sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-6) {
      return fmt::format("joint_regressor: row {} sums to {}", j, sum);
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    double sum = 0;
    for (std::size_t j = 0; j < j_count; ++j) {
      const double w = m.skin_weights(i, j);
      if (!std::isfinite(w) || w < 0) return fmt::format("skin_weights: row {} has a negative entry", i);
      sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-6) {
      return fmt::format("skin_weights: row {} sums to {}", i, sum);
    }
  }
  for (const auto& [name, indices] : m.vertex_groups) {
    for (auto idx : indices) {
      if (idx >= n) return fmt::format("vertex_groups: group '{}' index {} >= N", name, idx);
    }
  }
  return std::nullopt;
}

template <typename T>
void validate(const TemplateModel<T>& m) {
  if (auto problem = find_invariant_violation(m)) throw ConfigError(*problem);
}

template <typename T>
void check_dimensions(const TemplateModel<T>& m, const BodyParams<T>& p) {
  if (p.beta.size() != m.shape_count()) {
    throw ConfigError(fmt::format("beta: expected {} coefficients, got {}", m.shape_count(), p.beta.size()));
  }
  if (p.theta.size() != m.joint_count()) {
    throw ConfigError(fmt::format("theta: expected {} joints, got {}", m.joint_count(), p.theta.size()));
  }
  if (p.delta.size() != m.vertex_count()) {
    throw ConfigError(fmt::format("delta: expected {} vertices, got {}", m.vertex_count(), p.delta.size()));
  }
}

}  // namespace clipmatrix::body
