#pragma once

#include "clipmatrix/raster/project.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

namespace clipmatrix::raster {

// Fragments whose coverage would fall below exp(-kCoverageCutoff) ~ 1e-18 are
// dropped; the discontinuity this introduces is far below any tolerance.
inline constexpr double kCoverageCutoff = 41.446531673892822;  // ln(1e18)
// Triangles with |signed NDC area| below this are skipped as degenerate.
inline constexpr double kMinNdcArea = 1e-14;

inline double cross2(const Vec2d& a, const Vec2d& b) { return a.x() * b.y() - a.y() * b.x(); }

inline double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// Geometric relationship between a pixel centre and a screen triangle.
struct PointQuery {
  std::array<double, 3> bary{};     // signed barycentrics
  std::array<double, 3> clamped{};  // clipped to the triangle and renormalized
  bool inside = false;
  double dist2 = 0;  // squared distance to the triangle boundary
  int edge = 0;      // boundary edge achieving dist2 (edge e joins vertex e and e+1)
  double edge_t = 0; // closest point parameter on that edge
};

inline PointQuery query_point(const std::array<Vec2d, 3>& p, double area, const Vec2d& q) {
  PointQuery r;
  r.bary[0] = cross2(p[1] - q, p[2] - q) / area;
  r.bary[1] = cross2(p[2] - q, p[0] - q) / area;
  r.bary[2] = cross2(p[0] - q, p[1] - q) / area;
  r.inside = r.bary[0] >= 0 && r.bary[1] >= 0 && r.bary[2] >= 0;
  double sum = 0;
  for (int k = 0; k < 3; ++k) {
    r.clamped[k] = std::max(r.bary[k], 0.0);
    sum += r.clamped[k];
  }
  if (sum > 0) {
    for (auto& c : r.clamped) c /= sum;
  } else {
    r.clamped = {1.0 / 3, 1.0 / 3, 1.0 / 3};
  }
  r.dist2 = std::numeric_limits<double>::infinity();
  for (int e = 0; e < 3; ++e) {
    const Vec2d& a = p[e];
    const Vec2d& b = p[(e + 1) % 3];
    const Vec2d ab = b - a;
    const double len2 = ab.squaredNorm();
    const double t = len2 > 0 ? std::clamp((q - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
    const double d2 = (q - (a + t * ab)).squaredNorm();
    if (d2 < r.dist2) {
      r.dist2 = d2;
      r.edge = e;
      r.edge_t = t;
    }
  }
  return r;
}

/// Soft coverage: sigmoid(+d^2/sigma) inside, sigmoid(-d^2/sigma) outside.
inline double coverage_from(const PointQuery& q, double sigma) {
  return stable_sigmoid((q.inside ? q.dist2 : -q.dist2) / sigma);
}

/// Adjoint of query_point() for the clamped barycentrics and dist2, given
/// their upstream gradients. Accumulates into grad_p.
inline void query_point_vjp(const std::array<Vec2d, 3>& p, double area, const Vec2d& q, const PointQuery& r,
                            const std::array<double, 3>& grad_clamped, double grad_dist2,
                            std::array<Vec2d, 3>& grad_p) {
  // Clamped barycentrics -> signed barycentrics.
  std::array<double, 3> grad_bary{};
  double sum = 0;
  for (int k = 0; k < 3; ++k) sum += std::max(r.bary[k], 0.0);
  if (sum > 0) {
    double dot = 0;
    for (int k = 0; k < 3; ++k) dot += grad_clamped[k] * r.clamped[k];
    for (int k = 0; k < 3; ++k) grad_bary[k] = r.bary[k] > 0 ? (grad_clamped[k] - dot) / sum : 0.0;
  }
  if (grad_bary[0] != 0 || grad_bary[1] != 0 || grad_bary[2] != 0) {
    // w_k = E_k / A; d(cross(a,b)) = (b.y, -b.x) da + (-a.y, a.x) db.
    auto d_first = [](const Vec2d& b) { return Vec2d(b.y(), -b.x()); };
    auto d_second = [](const Vec2d& a) { return Vec2d(-a.y(), a.x()); };
    const Vec2d r0 = p[0] - q, r1 = p[1] - q, r2 = p[2] - q;
    std::array<std::array<Vec2d, 3>, 3> dE{};  // dE[k][vertex]
    dE[0] = {Vec2d::Zero(), d_first(r2), d_second(r1)};
    dE[1] = {d_second(r2), Vec2d::Zero(), d_first(r0)};
    dE[2] = {d_first(r1), d_second(r0), Vec2d::Zero()};
    const Vec2d dA1 = d_first(p[2] - p[0]);
    const Vec2d dA2 = d_second(p[1] - p[0]);
    const std::array<Vec2d, 3> dA{-dA1 - dA2, dA1, dA2};
    for (int k = 0; k < 3; ++k) {
      if (grad_bary[k] == 0) continue;
      const double s = grad_bary[k] / area;
      for (int v = 0; v < 3; ++v) grad_p[v] += s * (dE[k][v] - r.bary[k] * dA[v]);
    }
  }
  if (grad_dist2 != 0) {
    const int e = r.edge;
    const Vec2d& a = p[e];
    const Vec2d& b = p[(e + 1) % 3];
    const Vec2d diff = q - (a + r.edge_t * (b - a));
    grad_p[e] += grad_dist2 * (-2.0 * (1.0 - r.edge_t)) * diff;
    grad_p[(e + 1) % 3] += grad_dist2 * (-2.0 * r.edge_t) * diff;
  }
}

struct Fragment {
  std::uint32_t face = 0;
  std::array<double, 3> bary{};  // clamped barycentrics used for interpolation
  double coverage = 0;
  double depth = 0;
};

/// Per pixel, up to K fragments sorted by (depth, face id).
struct FragmentBuffer {
  int height = 0;
  int width = 0;
  int k = 0;
  std::vector<Fragment> fragments;
  std::vector<std::uint8_t> counts;

  FragmentBuffer() = default;
  FragmentBuffer(int h, int w, int faces_per_pixel)
      : height(h),
        width(w),
        k(faces_per_pixel),
        fragments(static_cast<std::size_t>(h) * w * faces_per_pixel),
        counts(static_cast<std::size_t>(h) * w, 0) {}

  std::span<const Fragment> at(int row, int col) const {
    const std::size_t p = static_cast<std::size_t>(row) * width + col;
    return {fragments.data() + p * k, counts[p]};
  }
};

/// Screen-space triangle data needed by both rasterization and its adjoint.
struct ScreenTriangle {
  std::array<Vec2d, 3> p;
  std::array<double, 3> depth;
  double area = 0;
  bool valid = false;
};

inline ScreenTriangle screen_triangle(std::span<const ScreenVertex> screen, const Face& face) {
  ScreenTriangle t;
  for (int k = 0; k < 3; ++k) {
    const ScreenVertex& s = screen[face[k]];
    if (s.clipped) return t;
    t.p[k] = {s.x, s.y};
    t.depth[k] = s.depth;
  }
  t.area = cross2(t.p[1] - t.p[0], t.p[2] - t.p[0]);
  t.valid = std::abs(t.area) >= kMinNdcArea && std::isfinite(t.area);
  return t;
}

/// Soft rasterization. Faces with a clipped vertex are skipped.
inline FragmentBuffer rasterize(std::span<const ScreenVertex> screen, std::span<const Face> faces, int height,
                                int width, const SoftRasterConfig& cfg) {
  FragmentBuffer buf(height, width, cfg.faces_per_pixel);
  const double blur2 = cfg.sigma * kCoverageCutoff;
  const double blur = std::sqrt(blur2);
  const int k_max = cfg.faces_per_pixel;

  for (std::size_t fi = 0; fi < faces.size(); ++fi) {
    const ScreenTriangle tri = screen_triangle(screen, faces[fi]);
    if (!tri.valid) continue;
    const double xmin = std::min({tri.p[0].x(), tri.p[1].x(), tri.p[2].x()}) - blur;
    const double xmax = std::max({tri.p[0].x(), tri.p[1].x(), tri.p[2].x()}) + blur;
    const double ymin = std::min({tri.p[0].y(), tri.p[1].y(), tri.p[2].y()}) - blur;
    const double ymax = std::max({tri.p[0].y(), tri.p[1].y(), tri.p[2].y()}) + blur;
    if (xmax < -1.5 || xmin > 1.5 || ymax < -1.5 || ymin > 1.5) continue;
    const int c0 = std::max(0, static_cast<int>(std::ceil((xmin + 1) * width / 2 - 0.5)));
    const int c1 = std::min(width - 1, static_cast<int>(std::floor((xmax + 1) * width / 2 - 0.5)));
    const int r0 = std::max(0, static_cast<int>(std::ceil((1 - ymax) * height / 2 - 0.5)));
    const int r1 = std::min(height - 1, static_cast<int>(std::floor((1 - ymin) * height / 2 - 0.5)));
    for (int row = r0; row <= r1; ++row) {
      const double qy = pixel_ndc_y(row, height);
      for (int col = c0; col <= c1; ++col) {
        const Vec2d q(pixel_ndc_x(col, width), qy);
        const PointQuery pq = query_point(tri.p, tri.area, q);
        if (!pq.inside && pq.dist2 > blur2) continue;
        Fragment frag;
        frag.face = static_cast<std::uint32_t>(fi);
        frag.bary = pq.clamped;
        frag.depth = pq.clamped[0] * tri.depth[0] + pq.clamped[1] * tri.depth[1] + pq.clamped[2] * tri.depth[2];
        frag.coverage = coverage_from(pq, cfg.sigma);

        const std::size_t pix = static_cast<std::size_t>(row) * width + col;
        Fragment* slots = buf.fragments.data() + pix * k_max;
        int count = buf.counts[pix];
        auto before = [](const Fragment& a, const Fragment& b) {
          return a.depth < b.depth || (a.depth == b.depth && a.face < b.face);
        };
        int pos;
        if (count < k_max) {
          pos = count++;
        } else if (before(frag, slots[k_max - 1])) {
          pos = k_max - 1;
        } else {
          continue;
        }
        while (pos > 0 && before(frag, slots[pos - 1])) {
          slots[pos] = slots[pos - 1];
          --pos;
        }
        slots[pos] = frag;
        buf.counts[pix] = static_cast<std::uint8_t>(count);
      }
    }
  }
  return buf;
}

}  // namespace clipmatrix::raster
