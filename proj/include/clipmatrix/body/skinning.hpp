#pragma once

#include "clipmatrix/body/model.hpp"
#include "clipmatrix/body/rotation.hpp"

#include <span>

namespace clipmatrix::body {

/// V = V_template + sum_k beta_k S_k + delta.
template <typename T>
std::vector<Vec3<T>> blend_shape(const TemplateModel<T>& model, const BodyParams<T>& params) {
  if (params.beta.size() != model.shape_count()) {
    throw ConfigError(fmt::format("beta: expected {} coefficients, got {}", model.shape_count(),
                                  params.beta.size()));
  }
  if (params.delta.size() != model.vertex_count()) {
    throw ConfigError(fmt::format("delta: expected {} vertices, got {}", model.vertex_count(),
                                  params.delta.size()));
  }
  std::vector<Vec3<T>> out = model.template_vertices;
  for (std::size_t k = 0; k < model.shape_count(); ++k) {
    const T b = params.beta[k];
    if (b == T(0)) continue;
    const auto& field = model.shape_basis[k];
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b * field[i];
  }
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += params.delta[i];
  return out;
}

template <typename T>
std::vector<Vec3<T>> regress_joints(const TemplateModel<T>& model, std::span<const Vec3<T>> vertices) {
  const std::size_t j_count = model.joint_count();
  std::vector<Vec3<T>> joints(j_count, Vec3<T>::Zero());
  for (std::size_t j = 0; j < j_count; ++j) {
    Vec3<T> acc = Vec3<T>::Zero();
    for (std::size_t i = 0; i < vertices.size(); ++i) {
      const T w = model.joint_regressor(j, i);
      if (w != T(0)) acc += w * vertices[i];
    }
    joints[j] = acc;
  }
  return joints;
}

/// Result of forward kinematics: the world transform of every joint (rotation
/// and world joint position) together with the rest joint locations used.
template <typename T>
struct JointTransforms {
  std::vector<RigidTransform<T>> world;
  std::vector<Vec3<T>> rest_joints;
  std::vector<Mat3<T>> local_rotations;
};

template <typename T>
JointTransforms<T> forward_kinematics(const TemplateModel<T>& model, std::span<const Vec3<T>> rest_vertices,
                                      std::span<const Vec3<T>> theta) {
  const std::size_t j_count = model.joint_count();
  if (theta.size() != j_count) {
    throw ConfigError(fmt::format("theta: expected {} joints, got {}", j_count, theta.size()));
  }
  if (rest_vertices.size() != model.vertex_count()) {
    throw ConfigError(fmt::format("rest_vertices: expected {} vertices, got {}", model.vertex_count(),
                                  rest_vertices.size()));
  }
  JointTransforms<T> out;
  out.rest_joints = regress_joints(model, rest_vertices);
  out.world.resize(j_count);
  out.local_rotations.resize(j_count);
  for (std::size_t j = 0; j < j_count; ++j) {
    out.local_rotations[j] = rodrigues<T>(theta[j]);
    const int p = model.parent[j];
    if (p < 0) {
      out.world[j].rotation = out.local_rotations[j];
      out.world[j].translation = out.rest_joints[j];
    } else {
      const auto& pw = out.world[p];
      out.world[j].rotation = pw.rotation * out.local_rotations[j];
      out.world[j].translation = pw.rotation * (out.rest_joints[j] - out.rest_joints[p]) + pw.translation;
    }
  }
  return out;
}

/// Area-weighted vertex normals; vertices without incident area get +z.
template <typename T>
std::vector<Vec3<T>> vertex_normals(std::span<const Vec3<T>> vertices, std::span<const Face> faces) {
  std::vector<Vec3<T>> acc(vertices.size(), Vec3<T>::Zero());
  for (const Face& f : faces) {
    const Vec3<T> c = (vertices[f[1]] - vertices[f[0]]).cross(vertices[f[2]] - vertices[f[0]]);
    acc[f[0]] += c;
    acc[f[1]] += c;
    acc[f[2]] += c;
  }
  for (auto& n : acc) {
    const T len = n.norm();
    if (len > T(0) && std::isfinite(static_cast<double>(len))) {
      n /= len;
    } else {
      n = Vec3<T>::UnitZ();
    }
  }
  return acc;
}

/// Adjoint of vertex_normals(): accumulates dL/dvertices into grad_vertices.
template <typename T>
void vertex_normals_vjp(std::span<const Vec3<T>> vertices, std::span<const Face> faces,
                        std::span<const Vec3<T>> grad_normals, std::span<Vec3<T>> grad_vertices) {
  std::vector<Vec3<T>> acc(vertices.size(), Vec3<T>::Zero());
  for (const Face& f : faces) {
    const Vec3<T> c = (vertices[f[1]] - vertices[f[0]]).cross(vertices[f[2]] - vertices[f[0]]);
    acc[f[0]] += c;
    acc[f[1]] += c;
    acc[f[2]] += c;
  }
  // dL/d(unnormalized sum) per vertex.
  std::vector<Vec3<T>> grad_acc(vertices.size(), Vec3<T>::Zero());
  for (std::size_t i = 0; i < vertices.size(); ++i) {
    const T len = acc[i].norm();
    if (!(len > T(0))) continue;
    const Vec3<T> n = acc[i] / len;
    grad_acc[i] = (grad_normals[i] - n * n.dot(grad_normals[i])) / len;
  }
  for (const Face& f : faces) {
    const Vec3<T> g = grad_acc[f[0]] + grad_acc[f[1]] + grad_acc[f[2]];
    if (g.isZero(T(0))) continue;
    const Vec3<T> a = vertices[f[1]] - vertices[f[0]];
    const Vec3<T> b = vertices[f[2]] - vertices[f[0]];
    // d(a x b)^T g: w.r.t. a is b x g, w.r.t. b is g x a.
    const Vec3<T> ga = b.cross(g);
    const Vec3<T> gb = g.cross(a);
    grad_vertices[f[1]] += ga;
    grad_vertices[f[2]] += gb;
    grad_vertices[f[0]] -= ga + gb;
  }
}

/// Linear blend skinning in rest-relative coordinates:
/// v'_i = sum_j w_ij (R_j (v_i - J_j) + t_j), so the identity pose is a fixed point.
template <typename T>
PosedMesh<T> skin(const TemplateModel<T>& model, std::span<const Vec3<T>> rest_vertices,
                  const JointTransforms<T>& transforms) {
  const std::size_t n = model.vertex_count();
  const std::size_t j_count = model.joint_count();
  PosedMesh<T> mesh;
  mesh.vertices.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    Vec3<T> acc = Vec3<T>::Zero();
    for (std::size_t j = 0; j < j_count; ++j) {
      const T w = model.skin_weights(i, j);
      if (w == T(0)) continue;
      const auto& g = transforms.world[j];
      acc += w * (g.rotation * (rest_vertices[i] - transforms.rest_joints[j]) + g.translation);
    }
    mesh.vertices[i] = acc;
  }
  mesh.faces = model.faces;
  mesh.uv_coords = model.uv_coords;
  mesh.vertex_normals = vertex_normals<T>(mesh.vertices, mesh.faces);
  return mesh;
}

/// S(beta, theta, delta): the posed mesh for a parameter point.
template <typename T>
PosedMesh<T> pose_mesh(const TemplateModel<T>& model, const BodyParams<T>& params) {
  const auto rest = blend_shape(model, params);
  const auto fk = forward_kinematics<T>(model, rest, params.theta);
  return skin<T>(model, rest, fk);
}

template <typename T>
struct BodyGrad {
  std::vector<T> beta;
  std::vector<Vec3<T>> theta;
  std::vector<Vec3<T>> delta;
};

/// Adjoint of blend_shape alone: routes dL/drest_vertices to beta and delta.
template <typename T>
void blend_shape_vjp(const TemplateModel<T>& model, std::span<const Vec3<T>> grad_rest, BodyGrad<T>& out) {
  out.beta.assign(model.shape_count(), T(0));
  for (std::size_t k = 0; k < model.shape_count(); ++k) {
    T acc = T(0);
    const auto& field = model.shape_basis[k];
    for (std::size_t i = 0; i < grad_rest.size(); ++i) acc += field[i].dot(grad_rest[i]);
    out.beta[k] = acc;
  }
  out.delta.assign(grad_rest.begin(), grad_rest.end());
}

/// Reverse-mode derivative of pose_mesh() w.r.t. (beta, theta, delta), given
/// dL/d(posed vertices). Normals are not an output here; callers that depend on
/// normals fold vertex_normals_vjp into `upstream` first.
template <typename T>
BodyGrad<T> pose_vjp(const TemplateModel<T>& model, const BodyParams<T>& params,
                     std::span<const Vec3<T>> upstream) {
  check_dimensions(model, params);
  const std::size_t n = model.vertex_count();
  const std::size_t j_count = model.joint_count();
  if (upstream.size() != n) {
    throw ConfigError(fmt::format("upstream: expected {} vertex gradients, got {}", n, upstream.size()));
  }
  const auto rest = blend_shape(model, params);
  const auto fk = forward_kinematics<T>(model, rest, params.theta);

  std::vector<Vec3<T>> grad_rest(n, Vec3<T>::Zero());
  std::vector<Mat3<T>> grad_world_rot(j_count, Mat3<T>::Zero());
  std::vector<Vec3<T>> grad_world_pos(j_count, Vec3<T>::Zero());
  std::vector<Vec3<T>> grad_rest_joint(j_count, Vec3<T>::Zero());

  // Skinning: v' = sum_j w_ij (R_j v + (J_j^world - R_j J_j^rest)).
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3<T>& g = upstream[i];
    if (g.isZero(T(0))) continue;
    Mat3<T> blended = Mat3<T>::Zero();
    for (std::size_t j = 0; j < j_count; ++j) {
      const T w = model.skin_weights(i, j);
      if (w == T(0)) continue;
      blended += w * fk.world[j].rotation;
      grad_world_rot[j] += w * g * rest[i].transpose();
      // offset t_j = J^world_j - R_j J^rest_j
      grad_world_pos[j] += w * g;
      grad_world_rot[j] -= w * g * fk.rest_joints[j].transpose();
      grad_rest_joint[j] -= w * (fk.world[j].rotation.transpose() * g);
    }
    grad_rest[i] += blended.transpose() * g;
  }

  // Kinematic chain, children before parents.
  std::vector<Mat3<T>> grad_local(j_count, Mat3<T>::Zero());
  for (std::size_t jj = j_count; jj-- > 0;) {
    const int p = model.parent[jj];
    if (p < 0) {
      grad_local[jj] += grad_world_rot[jj];
      grad_rest_joint[jj] += grad_world_pos[jj];
      continue;
    }
    const auto& pw = fk.world[p];
    // R_j = R_p L_j
    grad_world_rot[p] += grad_world_rot[jj] * fk.local_rotations[jj].transpose();
    grad_local[jj] += pw.rotation.transpose() * grad_world_rot[jj];
    // J_j = R_p (Jr_j - Jr_p) + J_p
    const Vec3<T> offset = fk.rest_joints[jj] - fk.rest_joints[p];
    grad_world_rot[p] += grad_world_pos[jj] * offset.transpose();
    const Vec3<T> back = pw.rotation.transpose() * grad_world_pos[jj];
    grad_rest_joint[jj] += back;
    grad_rest_joint[p] -= back;
    grad_world_pos[p] += grad_world_pos[jj];
  }

  BodyGrad<T> out;
  out.theta.resize(j_count);
  for (std::size_t j = 0; j < j_count; ++j) out.theta[j] = rodrigues_vjp<T>(params.theta[j], grad_local[j]);

  // Rest joints are regressed from the rest vertices.
  for (std::size_t j = 0; j < j_count; ++j) {
    const Vec3<T>& gj = grad_rest_joint[j];
    if (gj.isZero(T(0))) continue;
    for (std::size_t i = 0; i < n; ++i) {
      const T w = model.joint_regressor(j, i);
      if (w != T(0)) grad_rest[i] += w * gj;
    }
  }
  blend_shape_vjp<T>(model, grad_rest, out);
  return out;
}

}  // namespace clipmatrix::body
