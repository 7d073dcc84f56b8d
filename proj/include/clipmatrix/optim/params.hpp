#pragma once

#include "clipmatrix/body/model.hpp"
#include "clipmatrix/objective/total_loss.hpp"
#include "clipmatrix/raster/types.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace clipmatrix::optim {

/// One optimized parameter array with its Adam moments. Values and moments are
/// stored in 32-bit floats, matching the checkpoint payload.
struct ParamGroup {
  std::string name;
  std::vector<float> value;
  std::vector<float> m;
  std::vector<float> v;
  double lr = 1e-3;
  bool enabled = true;
  double clip = 0.0;  // bound on this group's gradient norm; 0 disables clipping

  std::size_t size() const { return value.size(); }
  bool operator==(const ParamGroup&) const = default;
};

inline constexpr int kLightBlock = 12;     // direction(3) ambient(3) diffuse(3) specular(3)
inline constexpr int kMaterialBlock = 10;  // ambient(3) diffuse(3) specular(3) shininess

/// Logits beyond this magnitude are clamped before the logistic map, keeping
/// decoded texels strictly inside (0, 1) in double precision.
inline constexpr double kLogitLimit = 30.0;
inline constexpr double kMinShininess = 1e-3;

/// Fixed group order: beta, delta, texture, light, material.
enum GroupIndex : std::size_t { kBeta = 0, kDelta, kTexture, kLight, kMaterial, kGroupCount };

inline constexpr std::array<const char*, kGroupCount> kGroupNames = {"beta", "delta", "texture", "light", "material"};

struct ParamGroups {
  std::array<ParamGroup, kGroupCount> groups;
  int texture_height = 0;
  int texture_width = 0;

  ParamGroup& operator[](GroupIndex i) { return groups[i]; }
  const ParamGroup& operator[](GroupIndex i) const { return groups[i]; }
  std::size_t light_blocks() const { return groups[kLight].size() / kLightBlock; }
  std::size_t material_blocks() const { return groups[kMaterial].size() / kMaterialBlock; }

  bool operator==(const ParamGroups&) const = default;
};

struct GroupHyper {
  double lr = 1e-3;
  bool enabled = true;
  double clip = 0.0;
};

struct InitSpec {
  std::size_t shape_count = 0;
  std::size_t vertex_count = 0;
  int texture_height = 1024;
  int texture_width = 1024;
  std::size_t light_blocks = 1;
  raster::Light light;
  raster::Material material;
  std::array<GroupHyper, kGroupCount> hyper;
};

inline void append(std::vector<float>& out, const Vec3d& v) {
  for (int i = 0; i < 3; ++i) out.push_back(static_cast<float>(v[i]));
}

/// beta = 0, delta = 0, texture logits = 0 (mid-gray), light and material from
/// the configured initial values.
inline ParamGroups init_params(const InitSpec& spec) {
  if (spec.texture_height < 2 || spec.texture_width < 2) throw ConfigError("texture resolution: must be at least 2x2");
  if (spec.light_blocks < 1) throw ConfigError("light blocks: at least one required");
  ParamGroups p;
  p.texture_height = spec.texture_height;
  p.texture_width = spec.texture_width;
  const std::array<std::size_t, kGroupCount> sizes = {
      spec.shape_count, 3 * spec.vertex_count,
      static_cast<std::size_t>(spec.texture_height) * static_cast<std::size_t>(spec.texture_width) * 3,
      spec.light_blocks * kLightBlock, spec.light_blocks * kMaterialBlock};
  for (std::size_t g = 0; g < kGroupCount; ++g) {
    auto& group = p.groups[g];
    group.name = kGroupNames[g];
    group.lr = spec.hyper[g].lr;
    group.enabled = spec.hyper[g].enabled;
    group.clip = spec.hyper[g].clip;
    group.value.assign(sizes[g], 0.0f);
    group.m.assign(sizes[g], 0.0f);
    group.v.assign(sizes[g], 0.0f);
  }
  auto& light = p[kLight].value;
  auto& material = p[kMaterial].value;
  light.clear();
  material.clear();
  for (std::size_t b = 0; b < spec.light_blocks; ++b) {
    append(light, spec.light.direction);
    append(light, spec.light.ambient);
    append(light, spec.light.diffuse);
    append(light, spec.light.specular);
    append(material, spec.material.ambient);
    append(material, spec.material.diffuse);
    append(material, spec.material.specular);
    material.push_back(static_cast<float>(spec.material.shininess));
  }
  return p;
}

inline double logistic(double x) {
  x = std::clamp(x, -kLogitLimit, kLogitLimit);
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

/// d logistic / dx, zero where the logit was clamped.
inline double logistic_grad(double x) {
  if (x < -kLogitLimit || x > kLogitLimit) return 0.0;
  const double s = logistic(x);
  return s * (1.0 - s);
}

inline Vec3d read3(const std::vector<float>& v, std::size_t at) {
  return {static_cast<double>(v[at]), static_cast<double>(v[at + 1]), static_cast<double>(v[at + 2])};
}

inline raster::Texture decode_texture(const ParamGroups& p) {
  raster::Texture t(p.texture_height, p.texture_width);
  const auto& logits = p[kTexture].value;
  for (std::size_t i = 0; i < logits.size(); ++i) t.values[i] = logistic(logits[i]);
  return t;
}

inline raster::Light decode_light(const std::vector<float>& v, std::size_t block) {
  const std::size_t o = block * kLightBlock;
  raster::Light l;
  const Vec3d d = read3(v, o);
  const double n = d.norm();
  if (!(n > 1e-12) || !std::isfinite(n)) throw NumericError(fmt::format("light[{}].direction: zero or non-finite", block));
  l.direction = d / n;
  l.ambient = read3(v, o + 3).cwiseMax(0.0);
  l.diffuse = read3(v, o + 6).cwiseMax(0.0);
  l.specular = read3(v, o + 9).cwiseMax(0.0);
  return l;
}

inline raster::Material decode_material(const std::vector<float>& v, std::size_t block) {
  const std::size_t o = block * kMaterialBlock;
  raster::Material m;
  m.ambient = read3(v, o).cwiseMax(0.0).cwiseMin(1.0);
  m.diffuse = read3(v, o + 3).cwiseMax(0.0).cwiseMin(1.0);
  m.specular = read3(v, o + 6).cwiseMax(0.0).cwiseMin(1.0);
  m.shininess = std::max(static_cast<double>(v[o + 9]), kMinShininess);
  return m;
}

/// Maps the unconstrained parameter groups to the renderer's scene parameters.
/// theta is left at zero; poses are sampled, never optimized.
inline objective::SceneParams decode(const ParamGroups& p, std::size_t joint_count) {
  objective::SceneParams s;
  s.body.beta.assign(p[kBeta].value.begin(), p[kBeta].value.end());
  s.body.theta.assign(joint_count, Vec3d::Zero());
  const auto& delta = p[kDelta].value;
  s.body.delta.resize(delta.size() / 3);
  for (std::size_t i = 0; i < s.body.delta.size(); ++i) s.body.delta[i] = read3(delta, 3 * i);
  s.texture = decode_texture(p);
  for (std::size_t b = 0; b < p.light_blocks(); ++b) s.lights.push_back(decode_light(p[kLight].value, b));
  for (std::size_t b = 0; b < p.material_blocks(); ++b) s.materials.push_back(decode_material(p[kMaterial].value, b));
  return s;
}

/// Gradient for each group, in double, same layout as the group values.
using GroupGrads = std::array<std::vector<double>, kGroupCount>;

namespace detail {
inline void put3(std::vector<double>& out, std::size_t at, const Vec3d& g) {
  for (int i = 0; i < 3; ++i) out[at + static_cast<std::size_t>(i)] = g[i];
}
// Pass-through inside the feasible box, zero where the decode clamped.
inline Vec3d box_grad(const std::vector<float>& v, std::size_t at, const Vec3d& g, double lo, double hi) {
  Vec3d out;
  for (int i = 0; i < 3; ++i) {
    const double x = v[at + static_cast<std::size_t>(i)];
    out[i] = (x >= lo && x <= hi) ? g[i] : 0.0;
  }
  return out;
}
}  // namespace detail

/// Chains a loss gradient with respect to decoded scene parameters back
/// through decode().
inline GroupGrads decode_vjp(const ParamGroups& p, const objective::LossRecord& rec) {
  GroupGrads out;
  for (std::size_t g = 0; g < kGroupCount; ++g) out[g].assign(p.groups[g].size(), 0.0);

  if (rec.grad_beta.size() != p[kBeta].size()) throw ConfigError("beta gradient size mismatch");
  out[kBeta] = rec.grad_beta;
  if (3 * rec.grad_delta.size() != p[kDelta].size()) throw ConfigError("delta gradient size mismatch");
  for (std::size_t i = 0; i < rec.grad_delta.size(); ++i) detail::put3(out[kDelta], 3 * i, rec.grad_delta[i]);

  const auto& logits = p[kTexture].value;
  if (rec.grad_texture.values.size() == logits.size()) {
    for (std::size_t i = 0; i < logits.size(); ++i) out[kTexture][i] = rec.grad_texture.values[i] * logistic_grad(logits[i]);
  }

  constexpr double inf = std::numeric_limits<double>::infinity();
  const auto& lv = p[kLight].value;
  for (std::size_t b = 0; b < std::min(p.light_blocks(), rec.grad_lights.size()); ++b) {
    const std::size_t o = b * kLightBlock;
    const raster::Light& g = rec.grad_lights[b];
    const Vec3d d = read3(lv, o);
    const double n = d.norm();
    const Vec3d u = d / n;
    detail::put3(out[kLight], o, (g.direction - u * u.dot(g.direction)) / n);
    detail::put3(out[kLight], o + 3, detail::box_grad(lv, o + 3, g.ambient, 0.0, inf));
    detail::put3(out[kLight], o + 6, detail::box_grad(lv, o + 6, g.diffuse, 0.0, inf));
    detail::put3(out[kLight], o + 9, detail::box_grad(lv, o + 9, g.specular, 0.0, inf));
  }
  const auto& mv = p[kMaterial].value;
  for (std::size_t b = 0; b < std::min(p.material_blocks(), rec.grad_materials.size()); ++b) {
    const std::size_t o = b * kMaterialBlock;
    const raster::Material& g = rec.grad_materials[b];
    detail::put3(out[kMaterial], o, detail::box_grad(mv, o, g.ambient, 0.0, 1.0));
    detail::put3(out[kMaterial], o + 3, detail::box_grad(mv, o + 3, g.diffuse, 0.0, 1.0));
    detail::put3(out[kMaterial], o + 6, detail::box_grad(mv, o + 6, g.specular, 0.0, 1.0));
    out[kMaterial][o + 9] = mv[o + 9] >= kMinShininess ? g.shininess : 0.0;
  }
  return out;
}

}  // namespace clipmatrix::optim
