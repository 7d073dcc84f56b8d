#pragma once

#include "clipmatrix/body/model.hpp"
#include "clipmatrix/raster/types.hpp"

#include <array>
#include <cmath>

namespace clipmatrix::raster {

using PosedMesh = body::PosedMesh<double>;

namespace detail {

struct BilinearTaps {
  std::array<std::size_t, 4> index;  // value offsets of the 4 texels (r0c0, r0c1, r1c0, r1c1)
  double fx, fy;
};

// Texel centres sit at u = (c + 0.5) / W, v = 1 - (r + 0.5) / H; clamp-to-edge.
inline BilinearTaps bilinear_taps(const Texture& tex, const Vec2d& uv) {
  const double x = uv.x() * tex.width - 0.5;
  const double y = (1.0 - uv.y()) * tex.height - 0.5;
  const double x0f = std::floor(x), y0f = std::floor(y);
  BilinearTaps t;
  t.fx = x - x0f;
  t.fy = y - y0f;
  auto clampi = [](double v, int hi) { return static_cast<int>(std::clamp(v, 0.0, static_cast<double>(hi))); };
  const int c0 = clampi(x0f, tex.width - 1), c1 = clampi(x0f + 1, tex.width - 1);
  const int r0 = clampi(y0f, tex.height - 1), r1 = clampi(y0f + 1, tex.height - 1);
  t.index = {tex.index(r0, c0), tex.index(r0, c1), tex.index(r1, c0), tex.index(r1, c1)};
  return t;
}

}  // namespace detail

inline Vec3d sample_bilinear(const Texture& tex, const Vec2d& uv) {
  const auto t = detail::bilinear_taps(tex, uv);
  const std::array<double, 4> w{(1 - t.fx) * (1 - t.fy), t.fx * (1 - t.fy), (1 - t.fx) * t.fy, t.fx * t.fy};
  Vec3d out = Vec3d::Zero();
  for (int i = 0; i < 4; ++i) {
    for (int c = 0; c < 3; ++c) out[c] += w[i] * tex.values[t.index[i] + c];
  }
  return out;
}

/// Adjoint of sample_bilinear(): accumulates into grad_texture (if non-null) and
/// returns dL/duv.
inline Vec2d sample_bilinear_vjp(const Texture& tex, const Vec2d& uv, const Vec3d& grad, RgbGrid* grad_texture) {
  const auto t = detail::bilinear_taps(tex, uv);
  const std::array<double, 4> w{(1 - t.fx) * (1 - t.fy), t.fx * (1 - t.fy), (1 - t.fx) * t.fy, t.fx * t.fy};
  if (grad_texture != nullptr) {
    for (int i = 0; i < 4; ++i) {
      for (int c = 0; c < 3; ++c) grad_texture->values[t.index[i] + c] += w[i] * grad[c];
    }
  }
  double dx = 0, dy = 0;
  for (int c = 0; c < 3; ++c) {
    const double v00 = tex.values[t.index[0] + c], v01 = tex.values[t.index[1] + c];
    const double v10 = tex.values[t.index[2] + c], v11 = tex.values[t.index[3] + c];
    dx += grad[c] * ((1 - t.fy) * (v01 - v00) + t.fy * (v11 - v10));
    dy += grad[c] * ((1 - t.fx) * (v10 - v00) + t.fx * (v11 - v01));
  }
  return {dx * tex.width, -dy * tex.height};
}

/// Everything a fragment shader reads besides the fragment itself.
struct ShadingInputs {
  const PosedMesh* mesh = nullptr;
  const Texture* texture = nullptr;  // used only when textured
  bool textured = true;
  Light light;
  Material material;
  Vec3d eye;
};

/// Interpolated surface attributes at a fragment.
struct SurfacePoint {
  Vec3d position;
  Vec3d normal_sum;  // interpolated, unnormalized
  Vec3d normal;
  double normal_len = 0;
  Vec2d uv;
};

inline SurfacePoint interpolate(const ShadingInputs& in, const Face& face, const std::array<double, 3>& bary) {
  SurfacePoint s{Vec3d::Zero(), Vec3d::Zero(), Vec3d::UnitZ(), 0.0, Vec2d::Zero()};
  for (int k = 0; k < 3; ++k) {
    s.position += bary[k] * in.mesh->vertices[face[k]];
    s.normal_sum += bary[k] * in.mesh->vertex_normals[face[k]];
    s.uv += bary[k] * in.mesh->uv_coords[face[k]];
  }
  s.normal_len = s.normal_sum.norm();
  if (s.normal_len > 1e-12) s.normal = s.normal_sum / s.normal_len;
  return s;
}

/// Phong colour of one fragment:
///   La*ka*base + Ld*kd*max(n.l, 0)*base + Ls*ks*max(r.v, 0)^shininess
/// with the specular term masked where n.l <= 0. base is the bilinear texture
/// sample when textured, white otherwise.
inline Vec3d shade_fragment(const ShadingInputs& in, const Face& face, const std::array<double, 3>& bary) {
  const SurfacePoint s = interpolate(in, face, bary);
  const Vec3d base = in.textured ? sample_bilinear(*in.texture, s.uv) : Vec3d::Ones();
  const Vec3d& l = in.light.direction;
  const double ndl = s.normal.dot(l);
  Vec3d color = in.light.ambient.cwiseProduct(in.material.ambient).cwiseProduct(base);
  if (ndl > 0) {
    color += ndl * in.light.diffuse.cwiseProduct(in.material.diffuse).cwiseProduct(base);
    const Vec3d to_eye = in.eye - s.position;
    const double eye_dist = to_eye.norm();
    if (eye_dist > 0) {
      const Vec3d v = to_eye / eye_dist;
      const Vec3d r = 2 * ndl * s.normal - l;
      const double rv = r.dot(v);
      if (rv > 0) color += std::pow(rv, in.material.shininess) * in.light.specular.cwiseProduct(in.material.specular);
    }
  }
  return color;
}

/// Accumulators for the adjoint of shading.
struct ShadingGrads {
  std::vector<Vec3d> positions;  // dL/d posed vertex positions (direct)
  std::vector<Vec3d> normals;    // dL/d vertex normals
  RgbGrid* texture = nullptr;    // dL/d texel values, optional
  Light light = Light::zero();
  Material material = Material::zero();
};

/// Adjoint of shade_fragment(): accumulates into `grads` and returns dL/dbary.
inline std::array<double, 3> shade_fragment_vjp(const ShadingInputs& in, const Face& face,
                                                const std::array<double, 3>& bary, const Vec3d& grad_color,
                                                ShadingGrads& grads) {
  const SurfacePoint s = interpolate(in, face, bary);
  const Vec3d base = in.textured ? sample_bilinear(*in.texture, s.uv) : Vec3d::Ones();
  const Light& light = in.light;
  const Material& mat = in.material;
  const Vec3d& l = light.direction;
  const double ndl = s.normal.dot(l);

  Vec3d grad_base = grad_color.cwiseProduct(light.ambient).cwiseProduct(mat.ambient);
  grads.light.ambient += grad_color.cwiseProduct(mat.ambient).cwiseProduct(base);
  grads.material.ambient += grad_color.cwiseProduct(light.ambient).cwiseProduct(base);

  Vec3d grad_normal = Vec3d::Zero();
  Vec3d grad_position = Vec3d::Zero();
  if (ndl > 0) {
    const Vec3d ld_kd = light.diffuse.cwiseProduct(mat.diffuse);
    grad_base += ndl * grad_color.cwiseProduct(ld_kd);
    grads.light.diffuse += ndl * grad_color.cwiseProduct(mat.diffuse).cwiseProduct(base);
    grads.material.diffuse += ndl * grad_color.cwiseProduct(light.diffuse).cwiseProduct(base);
    double grad_ndl = grad_color.dot(ld_kd.cwiseProduct(base));

    const Vec3d to_eye = in.eye - s.position;
    const double eye_dist = to_eye.norm();
    if (eye_dist > 0) {
      const Vec3d v = to_eye / eye_dist;
      const Vec3d r = 2 * ndl * s.normal - l;
      const double rv = r.dot(v);
      if (rv > 0) {
        const Vec3d ls_ks = light.specular.cwiseProduct(mat.specular);
        const double spec = std::pow(rv, mat.shininess);
        grads.light.specular += spec * grad_color.cwiseProduct(mat.specular);
        grads.material.specular += spec * grad_color.cwiseProduct(light.specular);
        const double g_spec = grad_color.dot(ls_ks);
        grads.material.shininess += g_spec * spec * std::log(rv);
        const double grad_rv = g_spec * mat.shininess * std::pow(rv, mat.shininess - 1);
        const Vec3d grad_r = grad_rv * v;
        const Vec3d grad_v = grad_rv * r;
        // r = 2 ndl n - l
        grad_normal += 2 * ndl * grad_r;
        grad_ndl += 2 * s.normal.dot(grad_r);
        grads.light.direction -= grad_r;
        // v = normalize(eye - p)
        const Vec3d grad_to_eye = (grad_v - v * v.dot(grad_v)) / eye_dist;
        grad_position -= grad_to_eye;
      }
    }
    grad_normal += grad_ndl * l;
    grads.light.direction += grad_ndl * s.normal;
  }

  std::array<double, 3> grad_bary{};
  Vec3d grad_normal_sum = Vec3d::Zero();
  if (s.normal_len > 1e-12) grad_normal_sum = (grad_normal - s.normal * s.normal.dot(grad_normal)) / s.normal_len;
  Vec2d grad_uv = Vec2d::Zero();
  if (in.textured) grad_uv = sample_bilinear_vjp(*in.texture, s.uv, grad_base, grads.texture);
  for (int k = 0; k < 3; ++k) {
    const auto vi = face[k];
    grads.positions[vi] += bary[k] * grad_position;
    grads.normals[vi] += bary[k] * grad_normal_sum;
    grad_bary[k] = grad_position.dot(in.mesh->vertices[vi]) + grad_normal_sum.dot(in.mesh->vertex_normals[vi]) +
                   grad_uv.dot(in.mesh->uv_coords[vi]);
  }
  return grad_bary;
}

}  // namespace clipmatrix::raster
