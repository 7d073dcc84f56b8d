#pragma once

#include "clipmatrix/body/humanoid.hpp"
#include "clipmatrix/body/model.hpp"
#include "clipmatrix/raster/types.hpp"

#include <fmt/format.h>

#include <cmath>
#include <span>
#include <string>
#include <vector>

namespace clipmatrix::objective {

struct Range {
  double lo = 0;
  double hi = 0;

  double draw(Rng& rng) const { return uniform(rng, lo, hi); }
  bool operator==(const Range&) const = default;
};

enum class CameraMode { orbit, part_grid };

/// Camera distribution pi_c. Orbit cameras sit on a sphere around the look-at
/// point; part_grid cameras form a rows x cols angular grid aimed at the
/// centroid of one vertex group.
struct CameraDist {
  CameraMode mode = CameraMode::orbit;
  Range fov{0.7, 0.9};
  // orbit
  Range azimuth{0.0, 2 * kPi};
  Range elevation{-0.2, 0.4};
  Range radius{2.6, 3.2};
  std::string look_at = "center";  // "origin", "center" (bounding-box centre), or a vertex-group name
  // part_grid
  std::string group = "head";
  int rows = 2;
  int cols = 2;
  double spread = 0.6;  // total angular extent of the grid, radians
  double zoom_radius = 0.8;

  void validate(std::string_view path) const {
    auto check = [&](const Range& r, const char* name) {
      if (!(r.lo <= r.hi) || !std::isfinite(r.lo) || !std::isfinite(r.hi)) {
        throw ConfigError(fmt::format("{}.{}: expected finite lo <= hi", path, name));
      }
    };
    check(fov, "fov");
    if (!(fov.lo > 0 && fov.hi < kPi)) throw ConfigError(fmt::format("{}.fov: must lie in (0, pi)", path));
    if (mode == CameraMode::orbit) {
      check(azimuth, "azimuth");
      check(elevation, "elevation");
      check(radius, "radius");
      if (!(elevation.lo > -kPi / 2 && elevation.hi < kPi / 2)) {
        throw ConfigError(fmt::format("{}.elevation: must lie in (-pi/2, pi/2)", path));
      }
      if (!(radius.lo > 0)) throw ConfigError(fmt::format("{}.radius: must be > 0", path));
    } else {
      if (rows < 1 || cols < 1) throw ConfigError(fmt::format("{}.rows/cols: must be >= 1", path));
      if (!(spread >= 0 && spread < kPi)) throw ConfigError(fmt::format("{}.spread: must lie in [0, pi)", path));
      if (!(zoom_radius > 0)) throw ConfigError(fmt::format("{}.zoom_radius: must be > 0", path));
    }
  }

  /// Name of the vertex group this distribution depends on, if any.
  std::string referenced_group() const {
    if (mode == CameraMode::part_grid) return group;
    if (look_at != "origin" && look_at != "center") return look_at;
    return {};
  }

  bool operator==(const CameraDist&) const = default;
};

inline Vec3d group_centroid(const body::TemplateModel<double>& model, std::span<const Vec3d> vertices,
                            const std::string& group) {
  const auto it = model.vertex_groups.find(group);
  if (it == model.vertex_groups.end() || it->second.empty()) {
    throw ConfigError(fmt::format("vertex group '{}' not found in model", group));
  }
  Vec3d c = Vec3d::Zero();
  for (auto i : it->second) c += vertices[i];
  return c / static_cast<double>(it->second.size());
}

inline Vec3d bounding_box_center(std::span<const Vec3d> vertices) {
  if (vertices.empty()) return Vec3d::Zero();
  Vec3d lo = vertices[0], hi = vertices[0];
  for (const auto& v : vertices) {
    lo = lo.cwiseMin(v);
    hi = hi.cwiseMax(v);
  }
  return 0.5 * (lo + hi);
}

/// Unit direction for azimuth (about +y, 0 = +z) and elevation (toward +y).
inline Vec3d orbit_direction(double azimuth, double elevation) {
  return {std::cos(elevation) * std::sin(azimuth), std::sin(elevation), std::cos(elevation) * std::cos(azimuth)};
}

/// Image size and clip planes shared by every sampled camera.
struct ViewSettings {
  int height = 224;
  int width = 224;
  double near_clip = 0.05;
  double far_clip = 20.0;
};

inline raster::Camera sample_camera(const CameraDist& dist, const body::TemplateModel<double>& model,
                                    std::span<const Vec3d> rest_vertices, const ViewSettings& view, Rng& rng) {
  raster::Camera cam;
  cam.height = view.height;
  cam.width = view.width;
  cam.near_clip = view.near_clip;
  cam.far_clip = view.far_clip;
  cam.up = Vec3d::UnitY();
  if (dist.mode == CameraMode::orbit) {
    const double az = dist.azimuth.draw(rng);
    const double el = dist.elevation.draw(rng);
    const double r = dist.radius.draw(rng);
    cam.fov_y = dist.fov.draw(rng);
    if (dist.look_at == "origin") {
      cam.look_at = Vec3d::Zero();
    } else if (dist.look_at == "center") {
      cam.look_at = bounding_box_center(rest_vertices);
    } else {
      cam.look_at = group_centroid(model, rest_vertices, dist.look_at);
    }
    cam.eye = cam.look_at + r * orbit_direction(az, el);
  } else {
    const int cells = dist.rows * dist.cols;
    const int cell = std::min(cells - 1, static_cast<int>(uniform01(rng) * cells));
    cam.fov_y = dist.fov.draw(rng);
    const int row = cell / dist.cols, col = cell % dist.cols;
    const double az = dist.spread * ((col + 0.5) / dist.cols - 0.5);
    const double el = dist.spread * (0.5 - (row + 0.5) / dist.rows);
    cam.look_at = group_centroid(model, rest_vertices, dist.group);
    cam.eye = cam.look_at + dist.zoom_radius * orbit_direction(az, el);
  }
  return cam;
}

enum class PoseMode { rest, per_joint_uniform, keyframe_interp };

/// Pose distribution pi_theta over per-joint axis-angle vectors.
struct PoseDist {
  PoseMode mode = PoseMode::rest;
  std::vector<Vec3d> lo, hi;                   // per_joint_uniform bounds, one per joint
  std::vector<std::vector<Vec3d>> keyframes;   // keyframe_interp, each one per joint

  void validate(std::size_t joint_count) const {
    if (mode == PoseMode::per_joint_uniform) {
      if (lo.size() != joint_count || hi.size() != joint_count) {
        throw ConfigError(fmt::format("pose.lo/hi: expected {} joints, got {}/{}", joint_count, lo.size(), hi.size()));
      }
      for (std::size_t j = 0; j < joint_count; ++j) {
        for (int a = 0; a < 3; ++a) {
          if (!(lo[j][a] <= hi[j][a])) throw ConfigError(fmt::format("pose.lo[{}][{}]: exceeds hi", j, a));
        }
      }
    } else if (mode == PoseMode::keyframe_interp) {
      if (keyframes.size() < 2) throw ConfigError("pose.keyframes: at least 2 keyframes required");
      for (std::size_t k = 0; k < keyframes.size(); ++k) {
        if (keyframes[k].size() != joint_count) {
          throw ConfigError(fmt::format("pose.keyframes[{}]: expected {} joints", k, joint_count));
        }
      }
    }
  }

  bool operator==(const PoseDist&) const = default;
};

inline Eigen::Quaterniond axis_angle_to_quaternion(const Vec3d& w) {
  const double angle = w.norm();
  if (angle == 0) return Eigen::Quaterniond::Identity();
  return Eigen::Quaterniond(Eigen::AngleAxisd(angle, w / angle));
}

inline Vec3d quaternion_to_axis_angle(const Eigen::Quaterniond& q) {
  const Eigen::AngleAxisd aa(q);
  return aa.angle() * aa.axis();
}

/// Per-joint spherical interpolation along the keyframe list; t in [0, K-1].
inline std::vector<Vec3d> interpolate_keyframes(const std::vector<std::vector<Vec3d>>& keyframes, double t) {
  const double last = static_cast<double>(keyframes.size() - 1);
  t = std::clamp(t, 0.0, last);
  const auto seg = static_cast<std::size_t>(std::min(std::floor(t), last - 1));
  const double s = t - static_cast<double>(seg);
  const auto& a = keyframes[seg];
  const auto& b = keyframes[seg + 1];
  std::vector<Vec3d> theta(a.size());
  for (std::size_t j = 0; j < a.size(); ++j) {
    theta[j] = quaternion_to_axis_angle(axis_angle_to_quaternion(a[j]).slerp(s, axis_angle_to_quaternion(b[j])));
  }
  return theta;
}

inline std::vector<Vec3d> sample_pose(const PoseDist& dist, std::size_t joint_count, Rng& rng) {
  switch (dist.mode) {
    case PoseMode::rest:
      return std::vector<Vec3d>(joint_count, Vec3d::Zero());
    case PoseMode::per_joint_uniform: {
      std::vector<Vec3d> theta(joint_count);
      for (std::size_t j = 0; j < joint_count; ++j) {
        for (int a = 0; a < 3; ++a) theta[j][a] = uniform(rng, dist.lo[j][a], dist.hi[j][a]);
      }
      return theta;
    }
    case PoseMode::keyframe_interp:
      return interpolate_keyframes(dist.keyframes, uniform01(rng) * static_cast<double>(dist.keyframes.size() - 1));
  }
  return {};
}

/// Conservative per-joint bounds for make_test_humanoid() (arms along +-x,
/// legs along -y, facing +z).
inline PoseDist humanoid_pose_bounds() {
  PoseDist d;
  d.mode = PoseMode::per_joint_uniform;
  d.lo.assign(body::kHumanoidJointCount, Vec3d::Zero());
  d.hi.assign(body::kHumanoidJointCount, Vec3d::Zero());
  auto set = [&](body::HumanoidJoint j, Vec3d lo, Vec3d hi) {
    d.lo[static_cast<std::size_t>(j)] = lo;
    d.hi[static_cast<std::size_t>(j)] = hi;
  };
  set(body::kPelvis, {0, -0.1, 0}, {0, 0.1, 0});
  set(body::kSpine, {-0.15, -0.2, -0.1}, {0.15, 0.2, 0.1});
  set(body::kNeck, {-0.2, -0.3, 0}, {0.2, 0.3, 0});
  set(body::kHead, {-0.2, -0.3, -0.1}, {0.2, 0.3, 0.1});
  set(body::kLeftShoulder, {-0.3, -0.4, -1.2}, {0.3, 0.4, 0.3});
  set(body::kLeftElbow, {0, -1.2, 0}, {0, 0, 0});
  set(body::kLeftWrist, {-0.3, -0.3, -0.3}, {0.3, 0.3, 0.3});
  set(body::kRightShoulder, {-0.3, -0.4, -0.3}, {0.3, 0.4, 1.2});
  set(body::kRightElbow, {0, 0, 0}, {0, 1.2, 0});
  set(body::kRightWrist, {-0.3, -0.3, -0.3}, {0.3, 0.3, 0.3});
  set(body::kLeftHip, {-0.8, -0.2, -0.2}, {0.3, 0.2, 0.2});
  set(body::kLeftKnee, {0, 0, 0}, {1.2, 0, 0});
  set(body::kLeftAnkle, {-0.2, -0.2, -0.2}, {0.2, 0.2, 0.2});
  set(body::kRightHip, {-0.8, -0.2, -0.2}, {0.3, 0.2, 0.2});
  set(body::kRightKnee, {0, 0, 0}, {1.2, 0, 0});
  set(body::kRightAnkle, {-0.2, -0.2, -0.2}, {0.2, 0.2, 0.2});
  return d;
}

}  // namespace clipmatrix::objective
