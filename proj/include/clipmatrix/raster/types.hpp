#pragma once

#include "clipmatrix/common.hpp"

#include <fmt/format.h>

#include <cmath>

namespace clipmatrix::raster {

/// Pinhole camera. Right-handed view frame looking down -z; fov is vertical.
struct Camera {
  Vec3d eye{0, 0, 3};
  Vec3d look_at{0, 0, 0};
  Vec3d up{0, 1, 0};
  double fov_y = 0.8;
  double near_clip = 0.05;
  double far_clip = 20.0;
  int height = 224;
  int width = 224;

  void validate() const {
    if (!(fov_y > 0 && fov_y < kPi)) throw ConfigError(fmt::format("camera.fov: {} not in (0, pi)", fov_y));
    if (!(near_clip > 0 && near_clip < far_clip)) throw ConfigError("camera: require 0 < near < far");
    if ((eye - look_at).norm() == 0) throw ConfigError("camera: eye equals look_at");
    if ((look_at - eye).cross(up).norm() == 0) throw ConfigError("camera: up is parallel to the view direction");
    if (height < 8 || width < 8) throw ConfigError(fmt::format("camera: resolution {}x{} below 8x8", height, width));
  }
};

/// Single directional light. `direction` points from the surface toward the light.
struct Light {
  Vec3d direction{0, 0, 1};
  Vec3d ambient{0.4, 0.4, 0.4};
  Vec3d diffuse{0.6, 0.6, 0.6};
  Vec3d specular{0.2, 0.2, 0.2};

  Light& operator+=(const Light& o) {
    direction += o.direction;
    ambient += o.ambient;
    diffuse += o.diffuse;
    specular += o.specular;
    return *this;
  }
  static Light zero() { return {Vec3d::Zero(), Vec3d::Zero(), Vec3d::Zero(), Vec3d::Zero()}; }
};

/// Phong reflectances.
struct Material {
  Vec3d ambient{1, 1, 1};
  Vec3d diffuse{1, 1, 1};
  Vec3d specular{0.2, 0.2, 0.2};
  double shininess = 10.0;

  Material& operator+=(const Material& o) {
    ambient += o.ambient;
    diffuse += o.diffuse;
    specular += o.specular;
    shininess += o.shininess;
    return *this;
  }
  static Material zero() { return {Vec3d::Zero(), Vec3d::Zero(), Vec3d::Zero(), 0.0}; }
};

/// RGB texture in [0,1]; texel (row 0, col 0) is the top-left, i.e. uv (0, 1).
using Texture = RgbGrid;

struct SoftRasterConfig {
  double sigma = 1e-5;   // edge softness, NDC^2 units
  double gamma = 1e-4;   // depth aggregation temperature
  int faces_per_pixel = 8;
  Vec3d background{1, 1, 1};

  void validate() const {
    if (!(sigma > 0)) throw ConfigError("raster.sigma: must be > 0");
    if (!(gamma > 0)) throw ConfigError("raster.gamma: must be > 0");
    if (faces_per_pixel < 1 || faces_per_pixel > 64) throw ConfigError("raster.faces_per_pixel: must be in [1, 64]");
  }
};

inline void validate_light(const Light& l) {
  if (std::abs(l.direction.norm() - 1.0) > 1e-6) throw ConfigError("light.direction: must be unit length");
  if ((l.ambient.array() < 0).any() || (l.diffuse.array() < 0).any() || (l.specular.array() < 0).any()) {
    throw ConfigError("light: intensities must be >= 0");
  }
}

inline void validate_texture(const Texture& t) {
  if (t.height < 2 || t.width < 2) throw ConfigError("texture: must be at least 2x2");
  if (t.values.size() != t.pixel_count() * 3) throw ConfigError("texture: size does not match dimensions");
}

}  // namespace clipmatrix::raster
