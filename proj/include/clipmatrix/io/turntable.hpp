#pragma once

#include "clipmatrix/body/skinning.hpp"
#include "clipmatrix/objective/sampling.hpp"
#include "clipmatrix/objective/total_loss.hpp"
#include "clipmatrix/raster/render.hpp"

#include <cmath>
#include <span>
#include <vector>

namespace clipmatrix::io {

struct TurntableOptions {
  int frames = 60;
  int height = 768;
  int width = 768;
  double fov_y = 0.8;
  double near_clip = 0.05;
  double far_clip = 20.0;
  raster::SoftRasterConfig raster;
  std::vector<std::vector<Vec3d>> keyframes;  // empty: rest pose throughout
};

/// Camera k of n: azimuth 2*pi*k/n at zero elevation around the bounding-box
/// centre, far enough back that the bounding sphere fits the vertical field of view.
inline raster::Camera turntable_camera(std::span<const Vec3d> rest_vertices, int k, int frames,
                                       const TurntableOptions& opts) {
  const Vec3d center = objective::bounding_box_center(rest_vertices);
  double radius = 0;
  for (const auto& v : rest_vertices) radius = std::max(radius, (v - center).norm());
  if (!(radius > 0)) radius = 1.0;
  const double distance = 1.1 * radius / std::sin(0.5 * opts.fov_y);
  raster::Camera cam;
  cam.height = opts.height;
  cam.width = opts.width;
  cam.fov_y = opts.fov_y;
  cam.near_clip = opts.near_clip;
  cam.far_clip = std::max(opts.far_clip, distance + 2 * radius);
  cam.look_at = center;
  cam.up = Vec3d::UnitY();
  const double azimuth = 2 * kPi * static_cast<double>(k) / static_cast<double>(frames);
  cam.eye = center + distance * objective::orbit_direction(azimuth, 0.0);
  return cam;
}

/// Pose for frame k: spherical keyframe interpolation spread across the sequence.
inline std::vector<Vec3d> turntable_pose(const TurntableOptions& opts, std::size_t joint_count, int k) {
  if (opts.keyframes.empty()) return std::vector<Vec3d>(joint_count, Vec3d::Zero());
  if (opts.keyframes.size() == 1 || opts.frames == 1) return opts.keyframes.front();
  const double t = static_cast<double>(k) / static_cast<double>(opts.frames - 1) *
                   static_cast<double>(opts.keyframes.size() - 1);
  return objective::interpolate_keyframes(opts.keyframes, t);
}

/// Renders `frames` views orbiting the (textured) model. Uses the first light
/// and material block.
inline std::vector<Image> render_turntable(const body::TemplateModel<double>& model, const objective::SceneParams& params,
                                           const TurntableOptions& opts) {
  if (opts.frames < 1) throw ConfigError("frames: must be >= 1");
  for (std::size_t i = 0; i < opts.keyframes.size(); ++i) {
    if (opts.keyframes[i].size() != model.joint_count()) {
      throw ConfigError(fmt::format("poses[{}]: expected {} joints, got {}", i, model.joint_count(),
                                    opts.keyframes[i].size()));
    }
  }
  const auto rest = body::blend_shape(model, params.body);
  std::vector<Image> frames;
  frames.reserve(static_cast<std::size_t>(opts.frames));
  for (int k = 0; k < opts.frames; ++k) {
    const auto theta = turntable_pose(opts, model.joint_count(), k);
    const auto fk = body::forward_kinematics<double>(model, rest, theta);
    const auto mesh = body::skin<double>(model, rest, fk);
    const raster::Camera cam = turntable_camera(rest, k, opts.frames, opts);
    frames.push_back(raster::render(mesh, cam, params.lights.front(), params.materials.front(), &params.texture,
                                    opts.raster, true));
  }
  return frames;
}

}  // namespace clipmatrix::io
