#pragma once

#include "clipmatrix/common.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <span>
#include <utility>
#include <vector>

namespace clipmatrix::objective {

/// Connectivity derived once from a face list.
struct MeshTopology {
  struct InteriorEdge {
    std::uint32_t a, b;                 // shared edge
    std::array<std::uint32_t, 2> faces; // the two incident faces
  };

  std::size_t vertex_count = 0;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;  // unique, (lo, hi), sorted
  std::vector<std::vector<std::uint32_t>> neighbors;           // sorted, unique
  std::vector<InteriorEdge> interior_edges;                    // edges with exactly two faces

  static MeshTopology build(std::size_t vertex_count, std::span<const Face> faces) {
    MeshTopology t;
    t.vertex_count = vertex_count;
    std::map<std::pair<std::uint32_t, std::uint32_t>, std::vector<std::uint32_t>> incident;
    for (std::size_t f = 0; f < faces.size(); ++f) {
      for (int k = 0; k < 3; ++k) {
        std::uint32_t a = faces[f][k], b = faces[f][(k + 1) % 3];
        if (a > b) std::swap(a, b);
        incident[{a, b}].push_back(static_cast<std::uint32_t>(f));
      }
    }
    t.neighbors.resize(vertex_count);
    for (const auto& [edge, fs] : incident) {
      t.edges.push_back(edge);
      t.neighbors[edge.first].push_back(edge.second);
      t.neighbors[edge.second].push_back(edge.first);
      if (fs.size() == 2) t.interior_edges.push_back({edge.first, edge.second, {fs[0], fs[1]}});
    }
    for (auto& n : t.neighbors) std::sort(n.begin(), n.end());
    return t;
  }
};

struct RegResult {
  double value = 0;
  std::vector<Vec3d> grad;
};

/// Uniform Laplacian: (1/N') sum_i |v_i - mean(neighbors(v_i))|^2 over the N'
/// vertices that have at least one neighbor.
inline RegResult laplacian_reg(const MeshTopology& topo, std::span<const Vec3d> v) {
  RegResult r{0.0, std::vector<Vec3d>(v.size(), Vec3d::Zero())};
  std::size_t counted = 0;
  for (const auto& n : topo.neighbors) counted += n.empty() ? 0 : 1;
  if (counted == 0) return r;
  const double inv = 1.0 / static_cast<double>(counted);
  for (std::size_t i = 0; i < v.size(); ++i) {
    const auto& nb = topo.neighbors[i];
    if (nb.empty()) continue;
    Vec3d mean = Vec3d::Zero();
    for (auto j : nb) mean += v[j];
    mean /= static_cast<double>(nb.size());
    const Vec3d d = v[i] - mean;
    r.value += d.squaredNorm() * inv;
    const Vec3d g = 2.0 * inv * d;
    r.grad[i] += g;
    const Vec3d gn = g / static_cast<double>(nb.size());
    for (auto j : nb) r.grad[j] -= gn;
  }
  return r;
}

/// Mean over edges of (|e| - |e_ref|)^2, with e_ref taken from `reference`.
inline RegResult edge_length_reg(const MeshTopology& topo, std::span<const Vec3d> v, std::span<const Vec3d> reference) {
  if (reference.size() != v.size()) throw ConfigError("edge_length_reg: reference mesh has a different vertex count");
  RegResult r{0.0, std::vector<Vec3d>(v.size(), Vec3d::Zero())};
  if (topo.edges.empty()) return r;
  const double inv = 1.0 / static_cast<double>(topo.edges.size());
  for (const auto& [a, b] : topo.edges) {
    const Vec3d e = v[a] - v[b];
    const double len = e.norm();
    const double diff = len - (reference[a] - reference[b]).norm();
    r.value += diff * diff * inv;
    if (len > 0) {
      const Vec3d g = (2.0 * inv * diff / len) * e;
      r.grad[a] += g;
      r.grad[b] -= g;
    }
  }
  return r;
}

/// Mean over interior edges of 1 - n1.n2 for the two adjacent face normals.
/// Edges touching a zero-area face are skipped.
inline RegResult normal_consistency_reg(const MeshTopology& topo, std::span<const Face> faces,
                                        std::span<const Vec3d> v) {
  RegResult r{0.0, std::vector<Vec3d>(v.size(), Vec3d::Zero())};
  std::vector<Vec3d> cross(faces.size());
  std::vector<double> len(faces.size());
  for (std::size_t f = 0; f < faces.size(); ++f) {
    cross[f] = (v[faces[f][1]] - v[faces[f][0]]).cross(v[faces[f][2]] - v[faces[f][0]]);
    len[f] = cross[f].norm();
  }
  std::size_t counted = 0;
  for (const auto& e : topo.interior_edges) counted += (len[e.faces[0]] > 0 && len[e.faces[1]] > 0) ? 1 : 0;
  if (counted == 0) return r;
  const double inv = 1.0 / static_cast<double>(counted);

  std::vector<Vec3d> grad_n(faces.size(), Vec3d::Zero());
  for (const auto& e : topo.interior_edges) {
    const auto f0 = e.faces[0], f1 = e.faces[1];
    if (!(len[f0] > 0 && len[f1] > 0)) continue;
    const Vec3d n0 = cross[f0] / len[f0];
    const Vec3d n1 = cross[f1] / len[f1];
    r.value += (1.0 - n0.dot(n1)) * inv;
    grad_n[f0] -= inv * n1;
    grad_n[f1] -= inv * n0;
  }
  for (std::size_t f = 0; f < faces.size(); ++f) {
    if (grad_n[f].isZero(0.0)) continue;
    const Vec3d n = cross[f] / len[f];
    const Vec3d gc = (grad_n[f] - n * n.dot(grad_n[f])) / len[f];
    const Vec3d a = v[faces[f][1]] - v[faces[f][0]];
    const Vec3d b = v[faces[f][2]] - v[faces[f][0]];
    const Vec3d ga = b.cross(gc);
    const Vec3d gb = gc.cross(a);
    r.grad[faces[f][1]] += ga;
    r.grad[faces[f][2]] += gb;
    r.grad[faces[f][0]] -= ga + gb;
  }
  return r;
}

/// Weights of the regularization term lambda * (wl L_lap + we L_edge + wn L_normal).
struct RegWeights {
  double lambda = 1.0;
  double laplacian = 1.0;
  double edge = 1.0;
  double normal = 0.01;

  void validate() const {
    for (double w : {lambda, laplacian, edge, normal}) {
      if (!(w >= 0) || !std::isfinite(w)) throw ConfigError("regularization: weights must be finite and >= 0");
    }
  }
  bool operator==(const RegWeights&) const = default;
};

struct RegBreakdown {
  double laplacian = 0, edge = 0, normal = 0;
  double weighted = 0;     // wl*lap + we*edge + wn*normal, before lambda
  double total = 0;        // lambda * weighted
  std::vector<Vec3d> grad; // d total / d vertices
};

inline RegBreakdown mesh_regularization(const MeshTopology& topo, std::span<const Face> faces,
                                        std::span<const Vec3d> v, std::span<const Vec3d> reference,
                                        const RegWeights& w) {
  RegBreakdown out;
  out.grad.assign(v.size(), Vec3d::Zero());
  auto add = [&](double weight, const RegResult& r, double& slot) {
    slot = r.value;
    out.weighted += weight * r.value;
    const double s = w.lambda * weight;
    if (s == 0) return;
    for (std::size_t i = 0; i < v.size(); ++i) out.grad[i] += s * r.grad[i];
  };
  if (w.laplacian != 0) add(w.laplacian, laplacian_reg(topo, v), out.laplacian);
  if (w.edge != 0) add(w.edge, edge_length_reg(topo, v, reference), out.edge);
  if (w.normal != 0) add(w.normal, normal_consistency_reg(topo, faces, v), out.normal);
  out.total = w.lambda * out.weighted;
  return out;
}

}  // namespace clipmatrix::objective
