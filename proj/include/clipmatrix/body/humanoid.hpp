#pragma once

#include "clipmatrix/body/model.hpp"

#include <algorithm>
#include <cmath>

namespace clipmatrix::body {

/// Joint indices of the procedural humanoid.
enum HumanoidJoint : int {
  kPelvis = 0,
  kSpine,
  kNeck,
  kHead,
  kLeftShoulder,
  kLeftElbow,
  kLeftWrist,
  kRightShoulder,
  kRightElbow,
  kRightWrist,
  kLeftHip,
  kLeftKnee,
  kLeftAnkle,
  kRightHip,
  kRightKnee,
  kRightAnkle,
  kHumanoidJointCount
};

namespace detail {

inline double to_float(double x) {
  volatile float f = static_cast<float>(x);
  return f;
}

inline Vec3d to_float(const Vec3d& v) { return {to_float(v.x()), to_float(v.y()), to_float(v.z())}; }

// Skin weights live on a 2^-20 grid: exact in float32, and 1 - a - b stays on
// the grid, so every row sums to exactly 1.
inline double to_weight(double x) { return std::round(x * 1048576.0) / 1048576.0; }

struct CapsuleSpec {
  Vec3d a, b;
  double radius;
  int ring_size;     // vertices per ring
  int cap_rings;     // rings per hemispherical cap, pole excluded
  int body_segments; // body rings = body_segments + 1
  Vec3d e1;          // first in-plane direction; e2 = axis x e1
};

struct CapsuleMesh {
  std::vector<Vec3d> vertices;
  std::vector<Vec2d> uvs;            // local [0,1]^2
  std::vector<Vec3d> radial;         // outward direction from the axis segment
  std::vector<double> axial;         // position along a->b (0 at a, 1 at b)
  std::vector<Face> faces;
  std::vector<std::vector<std::uint32_t>> body_rings;  // indices per body ring
};

inline CapsuleMesh make_capsule(const CapsuleSpec& s) {
  const Vec3d ab = s.b - s.a;
  const double length = ab.norm();
  const Vec3d d = length > 0 ? Vec3d(ab / length) : Vec3d::UnitY();
  const Vec3d e1 = s.e1.normalized();
  const Vec3d e2 = d.cross(e1);

  struct Ring {
    Vec3d center;
    double radius;
    bool body;
  };
  std::vector<Ring> rings;
  const double quarter = kPi / 2;
  for (int c = 1; c <= s.cap_rings; ++c) {
    const double psi = -quarter + c * quarter / (s.cap_rings + 1);
    rings.push_back({s.a + s.radius * std::sin(psi) * d, s.radius * std::cos(psi), false});
  }
  for (int i = 0; i <= s.body_segments; ++i) {
    const double t = s.body_segments > 0 ? static_cast<double>(i) / s.body_segments : 0.0;
    rings.push_back({s.a + t * ab, s.radius, true});
  }
  for (int c = 1; c <= s.cap_rings; ++c) {
    const double psi = c * quarter / (s.cap_rings + 1);
    rings.push_back({s.b + s.radius * std::sin(psi) * d, s.radius * std::cos(psi), false});
  }

  CapsuleMesh m;
  const int ring_count = static_cast<int>(rings.size());
  auto add_vertex = [&](const Vec3d& p, const Vec2d& uv) {
    m.vertices.push_back(p);
    m.uvs.push_back(uv);
    const double t = length > 0 ? (p - s.a).dot(d) / length : 0.0;
    m.axial.push_back(t);
    const Vec3d axis_point = s.a + std::clamp(t, 0.0, 1.0) * ab;
    const Vec3d r = p - axis_point;
    m.radial.push_back(r.norm() > 0 ? Vec3d(r.normalized()) : d);
  };

  add_vertex(s.a - s.radius * d, {0.5, 0.0});
  for (int r = 0; r < ring_count; ++r) {
    std::vector<std::uint32_t> ring_indices;
    const double v = static_cast<double>(r + 1) / (ring_count + 1);
    for (int k = 0; k < s.ring_size; ++k) {
      const double phi = 2 * kPi * k / s.ring_size;
      const Vec3d dir = std::cos(phi) * e1 + std::sin(phi) * e2;
      // Fold the angle so u is continuous around the ring (no seam).
      const double folded = 2 * k <= s.ring_size ? 2.0 * k / s.ring_size : 2.0 * (s.ring_size - k) / s.ring_size;
      ring_indices.push_back(static_cast<std::uint32_t>(m.vertices.size()));
      add_vertex(rings[r].center + rings[r].radius * dir, {folded, v});
    }
    if (rings[r].body) m.body_rings.push_back(std::move(ring_indices));
  }
  add_vertex(s.b + s.radius * d, {0.5, 1.0});
  const auto top = static_cast<std::uint32_t>(m.vertices.size() - 1);

  auto ring_vertex = [&](int r, int k) {
    return static_cast<std::uint32_t>(1 + r * s.ring_size + (k % s.ring_size));
  };
  for (int k = 0; k < s.ring_size; ++k) m.faces.push_back({0, ring_vertex(0, k + 1), ring_vertex(0, k)});
  for (int r = 0; r + 1 < ring_count; ++r) {
    for (int k = 0; k < s.ring_size; ++k) {
      const auto a = ring_vertex(r, k), b = ring_vertex(r, k + 1);
      const auto c = ring_vertex(r + 1, k + 1), e = ring_vertex(r + 1, k);
      // The diagonal flips halfway round, so a ring split by the e1-axis plane
      // is triangulated mirror-symmetrically about it.
      if (2 * k < s.ring_size) {
        m.faces.push_back({a, b, c});
        m.faces.push_back({a, c, e});
      } else {
        m.faces.push_back({a, b, e});
        m.faces.push_back({b, c, e});
      }
    }
  }
  for (int k = 0; k < s.ring_size; ++k) {
    m.faces.push_back({top, ring_vertex(ring_count - 1, k), ring_vertex(ring_count - 1, k + 1)});
  }
  return m;
}

inline CapsuleMesh mirror_x(CapsuleMesh m) {
  for (auto& v : m.vertices) v.x() = -v.x();
  for (auto& r : m.radial) r.x() = -r.x();
  for (auto& f : m.faces) std::swap(f[1], f[2]);
  return m;
}

// Piecewise-linear weights along a 3-joint chain: joint 0 drives [0, 0.5),
// joint 1 drives [0.5, 1), joint 2 drives beyond 1, with linear transitions of
// half-width `blend` around 0.5 and 1.
inline std::array<double, 3> chain_weights(double t, double blend) {
  auto ramp = [&](double centre) { return std::clamp((t - (centre - blend)) / (2 * blend), 0.0, 1.0); };
  const double to1 = ramp(0.5);
  const double to2 = ramp(1.0);
  return {1.0 - to1, to1 - to2, to2};
}

}  // namespace detail

/// Vertex count per ring is 8*segments; N is about 10000 at segments = 5.
struct HumanoidOptions {
  int segments = 1;
  int shape_components = 4;
};

/// Procedural T-pose biped built from closed capsules (torso, head sphere,
/// two 3-joint arms, two 3-joint legs), facing +z with y up, mirror symmetric
/// about x = 0. 16 joints rooted at the pelvis. Shape basis components:
/// girth, height, arm span, head size (truncated to shape_components).
inline TemplateModel<double> make_test_humanoid(const HumanoidOptions& options) {
  if (options.segments < 1) throw ConfigError("segments: must be >= 1");
  if (options.shape_components < 0 || options.shape_components > 4) {
    throw ConfigError("shape_components: must be in [0, 4]");
  }
  using detail::CapsuleSpec;
  const int s = options.segments;
  const int ring = 8 * s;
  const int cap = 2 * s;

  const Vec3d z = Vec3d::UnitZ();
  const CapsuleSpec torso{{0, 0.95, 0}, {0, 1.45, 0}, 0.15, ring, cap, 4 * s, z};
  const CapsuleSpec head{{0, 1.70, 0}, {0, 1.70, 0}, 0.11, ring, cap, 0, z};
  const CapsuleSpec arm{{0.20, 1.40, 0}, {0.75, 1.40, 0}, 0.05, ring, cap, 6 * s, z};
  const CapsuleSpec leg{{0.10, 0.95, 0}, {0.10, 0.10, 0}, 0.07, ring, cap, 6 * s, z};

  struct Part {
    std::string name;
    detail::CapsuleMesh mesh;
    Vec2d uv_origin;
  };
  std::vector<Part> parts;
  parts.push_back({"torso", detail::make_capsule(torso), {0.0, 0.5}});
  parts.push_back({"head", detail::make_capsule(head), {1.0 / 3, 0.5}});
  const auto left_arm = detail::make_capsule(arm);
  parts.push_back({"left_arm", left_arm, {2.0 / 3, 0.5}});
  parts.push_back({"right_arm", detail::mirror_x(left_arm), {2.0 / 3, 0.0}});
  const auto left_leg = detail::make_capsule(leg);
  parts.push_back({"left_leg", left_leg, {0.0, 0.0}});
  parts.push_back({"right_leg", detail::mirror_x(left_leg), {1.0 / 3, 0.0}});

  std::size_t n = 0;
  for (const auto& p : parts) n += p.mesh.vertices.size();

  TemplateModel<double> model;
  model.parent = {-1, kPelvis, kSpine, kNeck,
                  kSpine, kLeftShoulder, kLeftElbow,
                  kSpine, kRightShoulder, kRightElbow,
                  kPelvis, kLeftHip, kLeftKnee,
                  kPelvis, kRightHip, kRightKnee};
  const int j_count = kHumanoidJointCount;
  model.joint_regressor = RowMatrix<double>::Zero(j_count, static_cast<Eigen::Index>(n));
  model.skin_weights = RowMatrix<double>::Zero(static_cast<Eigen::Index>(n), j_count);
  model.shape_basis.assign(static_cast<std::size_t>(options.shape_components),
                           std::vector<Vec3d>(n, Vec3d::Zero()));

  const double margin = 0.01;
  const Vec2d cell(1.0 / 3 - 2 * margin, 0.5 - 2 * margin);

  auto regress_ring = [&](int joint, const std::vector<std::uint32_t>& ring_indices, std::size_t offset) {
    const double w = detail::to_float(1.0 / ring_indices.size());
    for (auto idx : ring_indices) model.joint_regressor(joint, static_cast<Eigen::Index>(offset + idx)) = w;
  };

  std::size_t offset = 0;
  for (const auto& part : parts) {
    const auto& pm = part.mesh;
    const std::size_t count = pm.vertices.size();
    for (std::size_t i = 0; i < count; ++i) {
      model.template_vertices.push_back(detail::to_float(pm.vertices[i]));
      const Vec2d uv = part.uv_origin + Vec2d::Constant(margin) + pm.uvs[i].cwiseProduct(cell);
      model.uv_coords.push_back({detail::to_float(uv.x()), detail::to_float(uv.y())});
    }
    for (const Face& f : pm.faces) {
      model.faces.push_back({static_cast<std::uint32_t>(f[0] + offset), static_cast<std::uint32_t>(f[1] + offset),
                             static_cast<std::uint32_t>(f[2] + offset)});
    }
    auto& group = model.vertex_groups[part.name];
    for (std::size_t i = 0; i < count; ++i) group.push_back(static_cast<std::uint32_t>(offset + i));

    auto set_chain = [&](std::array<int, 3> joints, double blend) {
      for (std::size_t i = 0; i < count; ++i) {
        const auto w = detail::chain_weights(pm.axial[i], blend);
        // Cumulative rounding keeps every weight nonnegative.
        std::array<double, 3> wf{detail::to_weight(w[0]), detail::to_weight(w[0] + w[1]), 0.0};
        wf[1] -= wf[0];
        wf[2] = 1.0 - wf[0] - wf[1];
        for (int c = 0; c < 3; ++c) {
          if (wf[c] != 0) model.skin_weights(static_cast<Eigen::Index>(offset + i), joints[c]) += wf[c];
        }
      }
    };

    const int mid_ring = static_cast<int>(pm.body_rings.size() / 2);
    const int last_ring = static_cast<int>(pm.body_rings.size()) - 1;
    if (part.name == "torso") {
      // pelvis -> spine -> neck; the chain transitions sit at t = 0.5 and 1.
      for (std::size_t i = 0; i < count; ++i) {
        const double t = std::clamp(pm.axial[i], 0.0, 1.0);
        const double w_spine = t <= 0.5 ? 2 * t : 2 - 2 * t;
        const double w_neck = t <= 0.5 ? 0.0 : 2 * t - 1;
        const double wf_neck = detail::to_weight(w_neck);
        const double wf_spine = detail::to_weight(w_spine + w_neck) - wf_neck;
        const double wf_pelvis = 1.0 - wf_spine - wf_neck;
        const auto row = static_cast<Eigen::Index>(offset + i);
        model.skin_weights(row, kPelvis) = wf_pelvis;
        model.skin_weights(row, kSpine) = wf_spine;
        model.skin_weights(row, kNeck) = wf_neck;
      }
      regress_ring(kPelvis, pm.body_rings.front(), offset);
      regress_ring(kSpine, pm.body_rings[mid_ring], offset);
      regress_ring(kNeck, pm.body_rings[last_ring], offset);
    } else if (part.name == "head") {
      for (std::size_t i = 0; i < count; ++i) model.skin_weights(static_cast<Eigen::Index>(offset + i), kHead) = 1.0;
      regress_ring(kHead, pm.body_rings.front(), offset);
    } else {
      std::array<int, 3> joints{};
      if (part.name == "left_arm") joints = {kLeftShoulder, kLeftElbow, kLeftWrist};
      if (part.name == "right_arm") joints = {kRightShoulder, kRightElbow, kRightWrist};
      if (part.name == "left_leg") joints = {kLeftHip, kLeftKnee, kLeftAnkle};
      if (part.name == "right_leg") joints = {kRightHip, kRightKnee, kRightAnkle};
      set_chain(joints, 0.1);
      regress_ring(joints[0], pm.body_rings.front(), offset);
      regress_ring(joints[1], pm.body_rings[mid_ring], offset);
      regress_ring(joints[2], pm.body_rings[last_ring], offset);
    }

    const bool is_arm = part.name == "left_arm" || part.name == "right_arm";
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t v = offset + i;
      const Vec3d& p = model.template_vertices[v];
      std::array<Vec3d, 4> fields{
          0.02 * pm.radial[i],
          Vec3d(0, 0.1 * (p.y() - 0.95), 0),
          is_arm ? Vec3d(0.1 * p.x(), 0, 0) : Vec3d::Zero(),
          part.name == "head" ? Vec3d(0.02 * pm.radial[i]) : Vec3d::Zero(),
      };
      for (int k = 0; k < options.shape_components; ++k) model.shape_basis[k][v] = detail::to_float(fields[k]);
    }
    offset += count;
  }
  return model;
}

inline TemplateModel<double> make_test_humanoid(int segments) {
  return make_test_humanoid(HumanoidOptions{segments, 4});
}

}  // namespace clipmatrix::body
