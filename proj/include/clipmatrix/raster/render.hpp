#pragma once

#include "clipmatrix/body/skinning.hpp"
#include "clipmatrix/raster/rasterize.hpp"
#include "clipmatrix/raster/shade.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace clipmatrix::raster {

// Lower bound of the background weight in the softmax blend.
inline constexpr double kBlendEps = 1e-10;

/// Forward intermediates kept for render_vjp().
struct RenderState {
  Camera camera;
  Light light;
  Material material;
  SoftRasterConfig cfg;
  bool textured = true;
  std::vector<ScreenVertex> screen;
  FragmentBuffer fragments;
  RgbGrid unclamped;  // composited colour before the [0,1] clamp
  Image image;
};

namespace detail {

struct BlendTerms {
  std::array<double, 64> weight{};  // unnormalized fragment weights
  std::array<Vec3d, 64> color{};
  double background = 0;            // unnormalized background weight
  double denom = 0;
  double zmax = 0;
  int argmax = -1;
};

inline double inverse_depth(const Camera& camera, double z) {
  return (camera.far_clip - z) / (camera.far_clip - camera.near_clip);
}

// Softmax blend weights over (coverage, normalized inverse depth / gamma) plus
// a background slot whose weight is clamped below by kBlendEps.
inline BlendTerms blend_terms(const Camera& camera, const SoftRasterConfig& cfg, std::span<const Fragment> frags) {
  BlendTerms t;
  t.zmax = kBlendEps;
  for (std::size_t k = 0; k < frags.size(); ++k) {
    const double zi = inverse_depth(camera, frags[k].depth);
    if (zi > t.zmax) {
      t.zmax = zi;
      t.argmax = static_cast<int>(k);
    }
  }
  t.denom = 0;
  for (std::size_t k = 0; k < frags.size(); ++k) {
    t.weight[k] = frags[k].coverage * std::exp((inverse_depth(camera, frags[k].depth) - t.zmax) / cfg.gamma);
    t.denom += t.weight[k];
  }
  t.background = std::max(std::exp((kBlendEps - t.zmax) / cfg.gamma), kBlendEps);
  t.denom += t.background;
  return t;
}

}  // namespace detail

/// project -> rasterize -> shade/composite, keeping everything render_vjp needs.
/// `texture` may be null when `textured` is false.
inline RenderState render_with_state(const PosedMesh& mesh, const Camera& camera, const Light& light,
                                     const Material& material, const Texture* texture, const SoftRasterConfig& cfg,
                                     bool textured) {
  camera.validate();
  cfg.validate();
  if (textured) {
    if (texture == nullptr) throw ConfigError("render: textured render without a texture");
    validate_texture(*texture);
  }
  RenderState st{camera, light, material, cfg, textured, {}, {}, {}, {}};
  st.screen = project(camera, mesh.vertices);
  st.fragments = rasterize(st.screen, mesh.faces, camera.height, camera.width, cfg);
  st.unclamped = RgbGrid(camera.height, camera.width);
  st.image = RgbGrid(camera.height, camera.width);

  const ShadingInputs in{&mesh, texture, textured, light, material, camera.eye};
  for (int row = 0; row < camera.height; ++row) {
    for (int col = 0; col < camera.width; ++col) {
      const auto frags = st.fragments.at(row, col);
      detail::BlendTerms t = detail::blend_terms(camera, cfg, frags);
      Vec3d acc = t.background * cfg.background;
      for (std::size_t k = 0; k < frags.size(); ++k) {
        acc += t.weight[k] * shade_fragment(in, mesh.faces[frags[k].face], frags[k].bary);
      }
      acc /= t.denom;
      const std::size_t idx = st.image.index(row, col);
      for (int c = 0; c < 3; ++c) {
        st.unclamped.values[idx + c] = acc[c];
        st.image.values[idx + c] = std::clamp(acc[c], 0.0, 1.0);
      }
    }
  }
  return st;
}

inline Image render(const PosedMesh& mesh, const Camera& camera, const Light& light, const Material& material,
                    const Texture* texture, const SoftRasterConfig& cfg, bool textured) {
  return render_with_state(mesh, camera, light, material, texture, cfg, textured).image;
}

/// Gradients produced by render_vjp(). Callers size `vertices` (N) and
/// `texture` (texture shape) before accumulating.
struct RenderGrad {
  std::vector<Vec3d> vertices;
  RgbGrid texture;
  Light light = Light::zero();
  Material material = Material::zero();

  static RenderGrad zeros(std::size_t vertex_count, const Texture* texture) {
    RenderGrad g;
    g.vertices.assign(vertex_count, Vec3d::Zero());
    if (texture != nullptr) g.texture = RgbGrid(texture->height, texture->width);
    return g;
  }
};

/// Reverse-mode derivative of render() for a saved forward state; accumulates
/// into `accum`. Pixels whose colour was clamped pass no gradient in that channel.
inline void render_vjp(const RenderState& st, const PosedMesh& mesh, const Texture* texture,
                       const ImageGrad& upstream, RenderGrad& accum) {
  if (!upstream.same_shape(st.image)) {
    throw ConfigError(fmt::format("render_vjp: upstream is {}x{}, render is {}x{}", upstream.height, upstream.width,
                                  st.image.height, st.image.width));
  }
  const std::size_t n = mesh.vertices.size();
  if (accum.vertices.size() != n) accum.vertices.assign(n, Vec3d::Zero());
  if (st.textured && texture != nullptr && !accum.texture.same_shape(*texture)) {
    accum.texture = RgbGrid(texture->height, texture->width);
  }

  const Camera& camera = st.camera;
  const SoftRasterConfig& cfg = st.cfg;
  ShadingGrads sg;
  sg.positions.assign(n, Vec3d::Zero());
  sg.normals.assign(n, Vec3d::Zero());
  sg.texture = st.textured ? &accum.texture : nullptr;
  std::vector<ScreenGrad> grad_screen(n);
  const ShadingInputs in{&mesh, texture, st.textured, st.light, st.material, camera.eye};
  const double depth_scale = -1.0 / (camera.far_clip - camera.near_clip);

  for (int row = 0; row < camera.height; ++row) {
    const double qy = pixel_ndc_y(row, camera.height);
    for (int col = 0; col < camera.width; ++col) {
      const std::size_t idx = upstream.index(row, col);
      Vec3d g;
      bool any = false;
      for (int c = 0; c < 3; ++c) {
        const double u = st.unclamped.values[idx + c];
        g[c] = (u >= 0.0 && u <= 1.0) ? upstream.values[idx + c] : 0.0;
        any = any || g[c] != 0.0;
      }
      if (!any) continue;
      const auto frags = st.fragments.at(row, col);
      if (frags.empty()) continue;

      detail::BlendTerms t = detail::blend_terms(camera, cfg, frags);
      const Vec3d color(st.unclamped.values[idx], st.unclamped.values[idx + 1], st.unclamped.values[idx + 2]);
      for (std::size_t k = 0; k < frags.size(); ++k) t.color[k] = shade_fragment(in, mesh.faces[frags[k].face], frags[k].bary);

      // color = (sum_k w_k c_k + b * bg) / (sum_k w_k + b)
      double grad_zmax = 0;
      const double grad_b = g.dot(cfg.background - color) / t.denom;
      if (std::exp((kBlendEps - t.zmax) / cfg.gamma) > kBlendEps) grad_zmax -= grad_b * t.background / cfg.gamma;

      std::array<double, 64> grad_zi{};
      const Vec2d q(pixel_ndc_x(col, camera.width), qy);
      for (std::size_t k = 0; k < frags.size(); ++k) {
        const Fragment& f = frags[k];
        const Face& face = mesh.faces[f.face];
        const double grad_w = g.dot(t.color[k] - color) / t.denom;
        const double w = t.weight[k];
        grad_zi[k] += grad_w * w / cfg.gamma;
        grad_zmax -= grad_w * w / cfg.gamma;
        const double grad_cov = f.coverage > 0 ? grad_w * w / f.coverage : 0.0;

        std::array<double, 3> grad_bary = shade_fragment_vjp(in, face, f.bary, (w / t.denom) * g, sg);

        const ScreenTriangle tri = screen_triangle(st.screen, face);
        const PointQuery pq = query_point(tri.p, tri.area, q);
        const double s = pq.inside ? 1.0 : -1.0;
        const double grad_dist2 = grad_cov * f.coverage * (1.0 - f.coverage) * s / cfg.sigma;
        std::array<Vec2d, 3> grad_p{Vec2d::Zero(), Vec2d::Zero(), Vec2d::Zero()};
        query_point_vjp(tri.p, tri.area, q, pq, grad_bary, grad_dist2, grad_p);
        for (int v = 0; v < 3; ++v) {
          grad_screen[face[v]].x += grad_p[v].x();
          grad_screen[face[v]].y += grad_p[v].y();
        }
      }
      if (t.argmax >= 0) grad_zi[static_cast<std::size_t>(t.argmax)] += grad_zmax;

      // Depth path: depth = sum_v bary_v depth_v, zi = (far - depth) / (far - near).

      for (std::size_t k = 0; k < frags.size(); ++k) {
        if (grad_zi[k] == 0) continue;
        const Fragment& f = frags[k];
        const Face& face = mesh.faces[f.face];
        const double grad_depth = grad_zi[k] * depth_scale;
        const ScreenTriangle tri = screen_triangle(st.screen, face);
        const PointQuery pq = query_point(tri.p, tri.area, q);
        std::array<double, 3> grad_clamped{};
        for (int v = 0; v < 3; ++v) {
          grad_screen[face[v]].depth += grad_depth * f.bary[v];
          grad_clamped[v] = grad_depth * tri.depth[v];
        }
        std::array<Vec2d, 3> grad_p{Vec2d::Zero(), Vec2d::Zero(), Vec2d::Zero()};
        query_point_vjp(tri.p, tri.area, q, pq, grad_clamped, 0.0, grad_p);
        for (int v = 0; v < 3; ++v) {
          grad_screen[face[v]].x += grad_p[v].x();
          grad_screen[face[v]].y += grad_p[v].y();
        }
      }
    }
  }

  project_vjp(camera, mesh.vertices, st.screen, grad_screen, accum.vertices);
  for (std::size_t i = 0; i < n; ++i) accum.vertices[i] += sg.positions[i];
  body::vertex_normals_vjp<double>(mesh.vertices, mesh.faces, sg.normals, accum.vertices);
  accum.light += sg.light;
  accum.material += sg.material;
}

}  // namespace clipmatrix::raster
