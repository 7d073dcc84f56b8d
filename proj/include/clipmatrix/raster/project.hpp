#pragma once

#include "clipmatrix/raster/types.hpp"

#include <span>
#include <vector>

namespace clipmatrix::raster {

struct ScreenVertex {
  double x = 0;      // NDC, +x right
  double y = 0;      // NDC, +y up
  double depth = 0;  // view-space distance along the optical axis
  bool clipped = true;
};

/// Orthonormal look-at frame plus the perspective scale factors.
struct ViewFrame {
  Vec3d eye, right, up, forward;
  double scale_x = 1, scale_y = 1;

  static ViewFrame from(const Camera& camera) {
    ViewFrame f;
    f.eye = camera.eye;
    f.forward = (camera.look_at - camera.eye).normalized();
    f.right = f.forward.cross(camera.up).normalized();
    f.up = f.right.cross(f.forward);
    f.scale_y = 1.0 / std::tan(camera.fov_y / 2);
    f.scale_x = f.scale_y * static_cast<double>(camera.height) / camera.width;
    return f;
  }
};

/// NDC coordinate of the centre of pixel column `col` / row `row`.
inline double pixel_ndc_x(int col, int width) { return 2.0 * (col + 0.5) / width - 1.0; }
inline double pixel_ndc_y(int row, int height) { return 1.0 - 2.0 * (row + 0.5) / height; }

/// Look-at view transform followed by perspective division. Points at or
/// behind the near plane (including the eye itself) or beyond the far plane are
/// flagged clipped; their coordinates are left at zero.
inline std::vector<ScreenVertex> project(const Camera& camera, std::span<const Vec3d> vertices) {
  const ViewFrame frame = ViewFrame::from(camera);
  std::vector<ScreenVertex> out(vertices.size());
  for (std::size_t i = 0; i < vertices.size(); ++i) {
    const Vec3d rel = vertices[i] - frame.eye;
    const double depth = frame.forward.dot(rel);
    ScreenVertex& s = out[i];
    if (!(depth > camera.near_clip && depth < camera.far_clip) || !rel.allFinite()) continue;
    s.depth = depth;
    s.x = frame.scale_x * frame.right.dot(rel) / depth;
    s.y = frame.scale_y * frame.up.dot(rel) / depth;
    s.clipped = false;
  }
  return out;
}

/// Gradient of a loss w.r.t. one screen vertex.
struct ScreenGrad {
  double x = 0, y = 0, depth = 0;
};

/// Adjoint of project(): accumulates dL/dvertices. Clipped vertices get nothing.
inline void project_vjp(const Camera& camera, std::span<const Vec3d> vertices, std::span<const ScreenVertex> screen,
                        std::span<const ScreenGrad> grad_screen, std::span<Vec3d> grad_vertices) {
  const ViewFrame frame = ViewFrame::from(camera);
  for (std::size_t i = 0; i < vertices.size(); ++i) {
    if (screen[i].clipped) continue;
    const ScreenGrad& g = grad_screen[i];
    if (g.x == 0 && g.y == 0 && g.depth == 0) continue;
    const Vec3d rel = vertices[i] - frame.eye;
    const double depth = screen[i].depth;
    const double px = frame.right.dot(rel);
    const double py = frame.up.dot(rel);
    // x = sx px / d, y = sy py / d, d = f . rel
    const double inv = 1.0 / depth;
    const double dd = g.depth - (g.x * frame.scale_x * px + g.y * frame.scale_y * py) * inv * inv;
    grad_vertices[i] += (g.x * frame.scale_x * inv) * frame.right + (g.y * frame.scale_y * inv) * frame.up +
                        dd * frame.forward;
  }
}

}  // namespace clipmatrix::raster
