#pragma once

#include "clipmatrix/body/humanoid.hpp"
#include "clipmatrix/body/skinning.hpp"
#include "clipmatrix/objective/regularizers.hpp"
#include "clipmatrix/objective/scorer.hpp"
#include "clipmatrix/objective/total_loss.hpp"
#include "clipmatrix/optim/params.hpp"
#include "clipmatrix/raster/render.hpp"

#include <fmt/format.h>

#include <chrono>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace clipmatrix::gradcheck {

/// Octahedron with two joints (centre and top vertex), two shape components
/// and a planar UV layout. Small enough for exhaustive finite differences.
inline body::TemplateModel<double> tiny_model() {
  body::TemplateModel<double> m;
  const double r = 0.6;
  m.template_vertices = {{r, 0, 0}, {-r, 0, 0}, {0, r, 0}, {0, -r, 0}, {0, 0, r}, {0, 0, -r}};
  m.faces = {{0, 2, 4}, {2, 1, 4}, {1, 3, 4}, {3, 0, 4}, {2, 0, 5}, {1, 2, 5}, {3, 1, 5}, {0, 3, 5}};
  for (const auto& v : m.template_vertices) m.uv_coords.push_back({0.5 + 0.6 * v.x(), 0.5 + 0.4 * v.y() + 0.2 * v.z()});
  m.shape_basis.resize(2);
  for (const auto& v : m.template_vertices) {
    m.shape_basis[0].push_back(0.2 * v);                      // uniform scale
    m.shape_basis[1].push_back(Vec3d(0, 0.3 * v.y(), 0));     // vertical stretch
  }
  m.parent = {-1, 0};
  m.joint_regressor = body::RowMatrix<double>::Zero(2, 6);
  for (int i = 0; i < 6; ++i) m.joint_regressor(0, i) = 1.0 / 6.0;
  m.joint_regressor(1, 2) = 1.0;
  m.skin_weights = body::RowMatrix<double>::Zero(6, 2);
  for (int i = 0; i < 6; ++i) {
    const double w = std::clamp(0.5 + m.template_vertices[static_cast<std::size_t>(i)].y() / r * 0.5, 0.0, 1.0);
    m.skin_weights(i, 0) = 1.0 - w;
    m.skin_weights(i, 1) = w;
  }
  m.vertex_groups["top"] = {2};
  return m;
}

/// Scalar function of a flat parameter vector with its analytic gradient at one point.
struct Probe {
  std::vector<double> x;
  std::vector<double> grad;
  std::function<double(std::span<const double>)> f;
};

struct StageResult {
  std::string name;
  int cases = 0;
  double worst = 0;      // worst relative error over all cases
  int nonsmooth = 0;     // redrawn cases (step straddled a discontinuity)
  double tolerance = 0;
  bool linear = false;
  double seconds = 0;
  bool passed() const { return worst <= tolerance && nonsmooth * 10 <= cases; }
};

struct Options {
  std::string scene = "tiny";  // tiny | humanoid
  int cases = 100;
  double tolerance = -1;       // < 0: 1e-4 for linear stages, 1e-3 otherwise
  std::uint64_t seed = 20240601;
  double step = 1e-6;
};

inline double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

/// Outcome of one directional check.
struct CaseResult {
  double error = 0;
  bool smooth = true;  // central differences at h and h/2 agree
};

/// Central difference of f along a random unit direction, against grad . dir.
/// A second difference at h/2 detects points where f is not smooth within the
/// step (a jump or kink inside [x - h, x + h]); such cases say nothing about the
/// gradient and are flagged.
inline CaseResult check_probe(const Probe& p, Rng& rng, double h) {
  std::vector<double> dir(p.x.size());
  double norm2 = 0;
  for (auto& d : dir) {
    d = normal01(rng);
    norm2 += d * d;
  }
  for (auto& d : dir) d /= std::sqrt(norm2);
  double analytic = 0;
  for (std::size_t i = 0; i < dir.size(); ++i) analytic += p.grad[i] * dir[i];
  auto central = [&](double step) {
    std::vector<double> xp = p.x, xm = p.x;
    for (std::size_t i = 0; i < dir.size(); ++i) {
      xp[i] += step * dir[i];
      xm[i] -= step * dir[i];
    }
    return (p.f(xp) - p.f(xm)) / (2 * step);
  };
  const double numeric = central(h);
  const double half = central(0.5 * h);
  return {relative_error(analytic, numeric), relative_error(numeric, half) <= 1e-5};
}

namespace detail {

inline std::vector<double> flatten(std::span<const Vec3d> v) {
  std::vector<double> out;
  out.reserve(3 * v.size());
  for (const auto& p : v) out.insert(out.end(), {p.x(), p.y(), p.z()});
  return out;
}

inline std::vector<Vec3d> unflatten(std::span<const double> x, std::size_t offset, std::size_t count) {
  std::vector<Vec3d> out(count);
  for (std::size_t i = 0; i < count; ++i) out[i] = {x[offset + 3 * i], x[offset + 3 * i + 1], x[offset + 3 * i + 2]};
  return out;
}

inline double dot3(std::span<const Vec3d> a, std::span<const Vec3d> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i].dot(b[i]);
  return s;
}

inline std::vector<Vec3d> random_vectors(Rng& rng, std::size_t n, double scale) {
  std::vector<Vec3d> out(n);
  for (auto& v : out) v = scale * Vec3d(normal01(rng), normal01(rng), normal01(rng));
  return out;
}

inline std::vector<double> random_values(Rng& rng, std::size_t n, double lo, double hi) {
  std::vector<double> out(n);
  for (auto& v : out) v = uniform(rng, lo, hi);
  return out;
}

inline Vec3d unit_light_direction(Rng& rng) {
  return Vec3d(uniform(rng, -0.5, 0.5), uniform(rng, 0.2, 0.8), 1.0).normalized();
}

struct BodyLayout {
  std::size_t k, j, n;
  std::size_t size() const { return k + 3 * j + 3 * n; }
  body::BodyParams<double> unpack(std::span<const double> x) const {
    body::BodyParams<double> p;
    p.beta.assign(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(k));
    p.theta = unflatten(x, k, j);
    p.delta = unflatten(x, k + 3 * j, n);
    return p;
  }
};

}  // namespace detail

/// A named stage: builds a random probe per case.
struct Stage {
  std::string name;
  bool linear = false;
  std::function<Probe(Rng&)> make;
};

inline std::vector<Stage> stages(const body::TemplateModel<double>& model) {
  using namespace detail;
  const std::size_t n = model.vertex_count();
  const std::size_t k = model.shape_count();
  const std::size_t j = model.joint_count();
  const auto* m = &model;
  auto topology = std::make_shared<objective::MeshTopology>(objective::MeshTopology::build(n, model.faces));
  std::vector<Stage> out;

  out.push_back({"blend", true, [m, n, k](Rng& rng) {
    const BodyLayout layout{k, 0, n};
    Probe p;
    p.x = random_values(rng, layout.size(), -0.3, 0.3);
    const auto u = random_vectors(rng, n, 1.0);
    p.f = [m, layout, u](std::span<const double> x) { return dot3(u, body::blend_shape(*m, layout.unpack(x))); };
    body::BodyGrad<double> g;
    body::blend_shape_vjp<double>(*m, u, g);
    p.grad = g.beta;
    const auto d = flatten(g.delta);
    p.grad.insert(p.grad.end(), d.begin(), d.end());
    return p;
  }});

  out.push_back({"body", false, [m, n, k, j](Rng& rng) {
    const BodyLayout layout{k, j, n};
    Probe p;
    p.x = random_values(rng, layout.size(), -0.05, 0.05);
    for (std::size_t i = k; i < k + 3 * j; ++i) p.x[i] = uniform(rng, -0.8, 0.8);
    const auto u = random_vectors(rng, n, 1.0);
    p.f = [m, layout, u](std::span<const double> x) { return dot3(u, body::pose_mesh(*m, layout.unpack(x)).vertices); };
    const auto g = body::pose_vjp(*m, layout.unpack(p.x), std::span<const Vec3d>(u));
    p.grad = g.beta;
    for (const auto* part : {&g.theta, &g.delta}) {
      const auto flat = flatten(*part);
      p.grad.insert(p.grad.end(), flat.begin(), flat.end());
    }
    return p;
  }});

  out.push_back({"normals", false, [m, n](Rng& rng) {
    Probe p;
    auto v = m->template_vertices;
    for (auto& x : v) x += 0.02 * Vec3d(normal01(rng), normal01(rng), normal01(rng));
    p.x = flatten(v);
    const auto u = random_vectors(rng, n, 1.0);
    p.f = [m, n, u](std::span<const double> x) {
      const auto verts = unflatten(x, 0, n);
      return dot3(u, body::vertex_normals<double>(verts, m->faces));
    };
    std::vector<Vec3d> g(n, Vec3d::Zero());
    body::vertex_normals_vjp<double>(v, m->faces, u, g);
    p.grad = flatten(g);
    return p;
  }});

  out.push_back({"projection", false, [m, n](Rng& rng) {
    raster::Camera cam;
    cam.eye = 3.0 * objective::orbit_direction(uniform(rng, 0, 2 * kPi), uniform(rng, -0.3, 0.3));
    cam.look_at = Vec3d(uniform(rng, -0.1, 0.1), uniform(rng, -0.1, 0.1), 0);
    cam.fov_y = uniform(rng, 0.6, 1.0);
    cam.width = 40 + static_cast<int>(uniform01(rng) * 30);
    Probe p;
    p.x = flatten(m->template_vertices);
    std::vector<raster::ScreenGrad> u(n);
    for (auto& s : u) s = {normal01(rng), normal01(rng), normal01(rng)};
    auto f = [cam, n, u](std::span<const double> x) {
      const auto verts = unflatten(x, 0, n);
      const auto screen = raster::project(cam, verts);
      double s = 0;
      for (std::size_t i = 0; i < n; ++i) s += u[i].x * screen[i].x + u[i].y * screen[i].y + u[i].depth * screen[i].depth;
      return s;
    };
    p.f = f;
    const auto screen = raster::project(cam, m->template_vertices);
    std::vector<Vec3d> g(n, Vec3d::Zero());
    raster::project_vjp(cam, m->template_vertices, screen, u, g);
    p.grad = flatten(g);
    return p;
  }});

  out.push_back({"rasterization", false, [](Rng& rng) {
    // One triangle and one pixel centre: soft coverage plus clamped barycentrics.
    std::array<Vec2d, 3> tri;
    double area = 0;
    do {
      for (auto& v : tri) v = {uniform(rng, -0.8, 0.8), uniform(rng, -0.8, 0.8)};
      area = raster::cross2(tri[1] - tri[0], tri[2] - tri[0]);
    } while (std::abs(area) < 0.05);
    const Vec2d q = (tri[0] + tri[1] + tri[2]) / 3.0 + Vec2d(uniform(rng, -0.4, 0.4), uniform(rng, -0.4, 0.4));
    const double sigma = uniform(rng, 0.005, 0.05);
    const std::array<double, 3> u{normal01(rng), normal01(rng), normal01(rng)};
    const double a = normal01(rng);
    auto eval = [q, sigma, u, a](std::span<const double> x) {
      std::array<Vec2d, 3> p{Vec2d(x[0], x[1]), Vec2d(x[2], x[3]), Vec2d(x[4], x[5])};
      const auto r = raster::query_point(p, raster::cross2(p[1] - p[0], p[2] - p[0]), q);
      return a * raster::coverage_from(r, sigma) + u[0] * r.clamped[0] + u[1] * r.clamped[1] + u[2] * r.clamped[2];
    };
    Probe p;
    p.x = {tri[0].x(), tri[0].y(), tri[1].x(), tri[1].y(), tri[2].x(), tri[2].y()};
    p.f = eval;
    const auto r = raster::query_point(tri, area, q);
    const double cov = raster::coverage_from(r, sigma);
    const double dcov = (r.inside ? 1.0 : -1.0) / sigma * cov * (1 - cov);
    std::array<Vec2d, 3> g{Vec2d::Zero(), Vec2d::Zero(), Vec2d::Zero()};
    raster::query_point_vjp(tri, area, q, r, u, a * dcov, g);
    p.grad = {g[0].x(), g[0].y(), g[1].x(), g[1].y(), g[2].x(), g[2].y()};
    return p;
  }});

  out.push_back({"shading", false, [](Rng& rng) {
    // Layout: 3 positions, 3 normals, light (12), material (10), barycentrics (3).
    raster::Texture tex(6, 7);
    for (auto& v : tex.values) v = uniform(rng, 0.1, 0.9);
    std::vector<Vec2d> uv{{uniform(rng, 0.2, 0.8), uniform(rng, 0.2, 0.8)},
                          {uniform(rng, 0.2, 0.8), uniform(rng, 0.2, 0.8)},
                          {uniform(rng, 0.2, 0.8), uniform(rng, 0.2, 0.8)}};
    const Vec3d eye(uniform(rng, -0.5, 0.5), uniform(rng, -0.5, 0.5), 3.0);
    const Vec3d u(normal01(rng), normal01(rng), normal01(rng));
    auto build = [tex, uv, eye](std::span<const double> x, raster::PosedMesh& mesh, raster::ShadingInputs& in,
                                std::array<double, 3>& bary) {
      mesh.vertices = unflatten(x, 0, 3);
      mesh.vertex_normals = unflatten(x, 9, 3);
      mesh.uv_coords = uv;
      mesh.faces = {{0, 1, 2}};
      in.mesh = &mesh;
      in.texture = &tex;
      in.textured = true;
      in.eye = eye;
      in.light.direction = {x[18], x[19], x[20]};
      in.light.ambient = {x[21], x[22], x[23]};
      in.light.diffuse = {x[24], x[25], x[26]};
      in.light.specular = {x[27], x[28], x[29]};
      in.material.ambient = {x[30], x[31], x[32]};
      in.material.diffuse = {x[33], x[34], x[35]};
      in.material.specular = {x[36], x[37], x[38]};
      in.material.shininess = x[39];
      bary = {x[40], x[41], x[42]};
    };
    // A near-frontal triangle with normals tilted toward the light so both
    // diffuse and specular terms are active.
    Probe p;
    p.x.resize(43);
    const std::array<Vec3d, 3> pos{Vec3d(-0.5, -0.4, 0), Vec3d(0.5, -0.4, 0.1), Vec3d(0, 0.5, -0.1)};
    for (int i = 0; i < 3; ++i) {
      const Vec3d v = pos[static_cast<std::size_t>(i)] + 0.05 * Vec3d(normal01(rng), normal01(rng), normal01(rng));
      const Vec3d nrm = Vec3d(uniform(rng, -0.3, 0.3), uniform(rng, -0.3, 0.3), 1.0).normalized();
      for (int c = 0; c < 3; ++c) {
        p.x[static_cast<std::size_t>(3 * i + c)] = v[c];
        p.x[static_cast<std::size_t>(9 + 3 * i + c)] = nrm[c];
      }
    }
    const Vec3d l = Vec3d(uniform(rng, -0.3, 0.3), uniform(rng, -0.3, 0.3), 1.0).normalized();
    for (int c = 0; c < 3; ++c) p.x[static_cast<std::size_t>(18 + c)] = l[c];
    for (std::size_t i = 21; i < 39; ++i) p.x[i] = uniform(rng, 0.2, 0.9);
    p.x[39] = uniform(rng, 2.0, 20.0);
    double b0 = uniform(rng, 0.1, 0.8), b1 = uniform(rng, 0.1, 0.9 - b0);
    p.x[40] = b0;
    p.x[41] = b1;
    p.x[42] = 1 - b0 - b1;
    p.f = [build, u](std::span<const double> x) {
      raster::PosedMesh mesh;
      raster::ShadingInputs in;
      std::array<double, 3> bary;
      build(x, mesh, in, bary);
      return u.dot(raster::shade_fragment(in, mesh.faces[0], bary));
    };
    raster::PosedMesh mesh;
    raster::ShadingInputs in;
    std::array<double, 3> bary;
    build(p.x, mesh, in, bary);
    raster::ShadingGrads g;
    g.positions.assign(3, Vec3d::Zero());
    g.normals.assign(3, Vec3d::Zero());
    const auto gb = raster::shade_fragment_vjp(in, mesh.faces[0], bary, u, g);
    p.grad = flatten(g.positions);
    const auto gn = flatten(g.normals);
    p.grad.insert(p.grad.end(), gn.begin(), gn.end());
    for (const Vec3d* v : {&g.light.direction, &g.light.ambient, &g.light.diffuse, &g.light.specular,
                           &g.material.ambient, &g.material.diffuse, &g.material.specular}) {
      p.grad.insert(p.grad.end(), {v->x(), v->y(), v->z()});
    }
    p.grad.push_back(g.material.shininess);
    p.grad.insert(p.grad.end(), gb.begin(), gb.end());
    return p;
  }});

  out.push_back({"texture", false, [](Rng& rng) {
    const int h = 5 + static_cast<int>(uniform01(rng) * 4), w = 5 + static_cast<int>(uniform01(rng) * 4);
    const std::size_t texels = static_cast<std::size_t>(h * w * 3);
    const Vec3d u(normal01(rng), normal01(rng), normal01(rng));
    auto eval = [h, w, texels, u](std::span<const double> x) {
      raster::Texture t(h, w);
      std::copy(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(texels), t.values.begin());
      return u.dot(raster::sample_bilinear(t, Vec2d(x[texels], x[texels + 1])));
    };
    Probe p;
    p.x = random_values(rng, texels, 0.0, 1.0);
    p.x.push_back(uniform(rng, 0.0, 1.0));
    p.x.push_back(uniform(rng, 0.0, 1.0));
    p.f = eval;
    raster::Texture t(h, w);
    std::copy(p.x.begin(), p.x.begin() + static_cast<std::ptrdiff_t>(texels), t.values.begin());
    RgbGrid gt(h, w);
    const Vec2d guv = raster::sample_bilinear_vjp(t, Vec2d(p.x[texels], p.x[texels + 1]), u, &gt);
    p.grad = gt.values;
    p.grad.push_back(guv.x());
    p.grad.push_back(guv.y());
    return p;
  }});

  auto perturbed = [m](Rng& rng) {
    auto v = m->template_vertices;
    for (auto& x : v) x += 0.03 * Vec3d(normal01(rng), normal01(rng), normal01(rng));
    return v;
  };
  out.push_back({"laplacian", false, [n, topology, perturbed](Rng& rng) {
    Probe p;
    const auto v = perturbed(rng);
    p.x = flatten(v);
    p.f = [n, topology](std::span<const double> x) { return objective::laplacian_reg(*topology, unflatten(x, 0, n)).value; };
    p.grad = flatten(objective::laplacian_reg(*topology, v).grad);
    return p;
  }});
  out.push_back({"edge", false, [m, n, topology, perturbed](Rng& rng) {
    Probe p;
    const auto v = perturbed(rng);
    p.x = flatten(v);
    p.f = [m, n, topology](std::span<const double> x) {
      return objective::edge_length_reg(*topology, unflatten(x, 0, n), m->template_vertices).value;
    };
    p.grad = flatten(objective::edge_length_reg(*topology, v, m->template_vertices).grad);
    return p;
  }});
  out.push_back({"normal", false, [m, n, topology, perturbed](Rng& rng) {
    Probe p;
    const auto v = perturbed(rng);
    p.x = flatten(v);
    p.f = [m, n, topology](std::span<const double> x) {
      return objective::normal_consistency_reg(*topology, m->faces, unflatten(x, 0, n)).value;
    };
    p.grad = flatten(objective::normal_consistency_reg(*topology, m->faces, v).grad);
    return p;
  }});

  out.push_back({"logistic", false, [](Rng& rng) {
    Probe p;
    p.x = random_values(rng, 48, -6.0, 6.0);
    const auto u = random_values(rng, 48, -1.0, 1.0);
    p.f = [u](std::span<const double> x) {
      double s = 0;
      for (std::size_t i = 0; i < x.size(); ++i) s += u[i] * optim::logistic(x[i]);
      return s;
    };
    p.grad.resize(p.x.size());
    for (std::size_t i = 0; i < p.x.size(); ++i) p.grad[i] = u[i] * optim::logistic_grad(p.x[i]);
    return p;
  }});

  out.push_back({"end_to_end", false, [m, n, k, topology](Rng& rng) {
    // Full loss through a target-image scorer: pose and camera are sampled,
    // shape, displacement, texture, light and material are differentiated.
    const int th = 6, tw = 6;
    const std::size_t texels = th * tw * 3;
    objective::LossSetup setup;
    setup.model = m;
    setup.topology = topology.get();
    setup.prompts = {{"a", "default", true, 1.0}};
    objective::CameraDist cam;
    cam.radius = {2.6, 3.0};
    setup.prompt_cameras = {cam};
    setup.pose.mode = objective::PoseMode::per_joint_uniform;
    setup.pose.lo.assign(m->joint_count(), Vec3d::Constant(-0.3));
    setup.pose.hi.assign(m->joint_count(), Vec3d::Constant(0.3));
    setup.reg = {0.5, 1.0, 1.0, 0.1};
    setup.batch = 2;
    setup.view = {24, 24, 0.05, 20.0};
    setup.raster.sigma = 1e-4;
    setup.raster.gamma = 1e-4;
    setup.raster.faces_per_pixel = 16;
    setup.raster.background = Vec3d(0.3, 0.3, 0.3);
    setup.seed = rng();
    Image target(24, 24);
    for (auto& v : target.values) v = uniform(rng, 0.0, 1.0);
    auto scorer = std::make_shared<objective::TargetImageScorer>(std::vector<Image>{target});
    scorer->register_prompts({"a"});
    const std::size_t size = k + 3 * n + texels + optim::kLightBlock + optim::kMaterialBlock;
    auto unpack = [m, n, k, texels](std::span<const double> x) {
      objective::SceneParams s;
      s.body.beta.assign(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(k));
      s.body.theta.assign(m->joint_count(), Vec3d::Zero());
      s.body.delta = unflatten(x, k, n);
      std::size_t o = k + 3 * n;
      s.texture = raster::Texture(th, tw);
      std::copy(x.begin() + static_cast<std::ptrdiff_t>(o), x.begin() + static_cast<std::ptrdiff_t>(o + texels),
                s.texture.values.begin());
      o += texels;
      raster::Light l;
      l.direction = Vec3d(x[o], x[o + 1], x[o + 2]).normalized();
      l.ambient = {x[o + 3], x[o + 4], x[o + 5]};
      l.diffuse = {x[o + 6], x[o + 7], x[o + 8]};
      l.specular = {x[o + 9], x[o + 10], x[o + 11]};
      o += optim::kLightBlock;
      raster::Material mat;
      mat.ambient = {x[o], x[o + 1], x[o + 2]};
      mat.diffuse = {x[o + 3], x[o + 4], x[o + 5]};
      mat.specular = {x[o + 6], x[o + 7], x[o + 8]};
      mat.shininess = x[o + 9];
      s.lights = {l};
      s.materials = {mat};
      return s;
    };
    const std::uint64_t step = rng() % 1000;
    Probe p;
    p.x.assign(size, 0.0);
    for (std::size_t i = 0; i < k; ++i) p.x[i] = uniform(rng, -0.3, 0.3);
    for (std::size_t i = k; i < k + 3 * n; ++i) p.x[i] = 0.01 * normal01(rng);
    std::size_t o = k + 3 * n;
    for (std::size_t i = 0; i < texels; ++i) p.x[o + i] = uniform(rng, 0.1, 0.9);
    o += texels;
    const Vec3d l = unit_light_direction(rng);
    p.x[o] = l.x();
    p.x[o + 1] = l.y();
    p.x[o + 2] = l.z();
    for (std::size_t i = 3; i < 12; ++i) p.x[o + i] = uniform(rng, 0.1, 0.5);
    o += optim::kLightBlock;
    for (std::size_t i = 0; i < 9; ++i) p.x[o + i] = uniform(rng, 0.2, 0.8);
    p.x[o + 9] = uniform(rng, 3.0, 15.0);
    p.f = [setup, scorer, unpack, step](std::span<const double> x) {
      return objective::total_loss(setup, unpack(x), *scorer, step).total;
    };
    const auto rec = objective::total_loss(setup, unpack(p.x), *scorer, step);
    p.grad = rec.grad_beta;
    const auto gd = flatten(rec.grad_delta);
    p.grad.insert(p.grad.end(), gd.begin(), gd.end());
    p.grad.insert(p.grad.end(), rec.grad_texture.values.begin(), rec.grad_texture.values.end());
    const auto& gl = rec.grad_lights[0];
    const Vec3d gdir = gl.direction - l * l.dot(gl.direction);  // through the normalization, |l| = 1
    p.grad.insert(p.grad.end(), {gdir.x(), gdir.y(), gdir.z()});
    for (const Vec3d* v : {&gl.ambient, &gl.diffuse, &gl.specular}) p.grad.insert(p.grad.end(), {v->x(), v->y(), v->z()});
    const auto& gm = rec.grad_materials[0];
    for (const Vec3d* v : {&gm.ambient, &gm.diffuse, &gm.specular}) p.grad.insert(p.grad.end(), {v->x(), v->y(), v->z()});
    p.grad.push_back(gm.shininess);
    return p;
  }});

  return out;
}

inline body::TemplateModel<double> scene_model(const std::string& scene) {
  if (scene == "tiny") return tiny_model();
  if (scene == "humanoid") return body::make_test_humanoid(body::HumanoidOptions{1, 4});
  throw ConfigError(fmt::format("scene: expected 'tiny' or 'humanoid', got '{}'", scene));
}

/// Runs every stage; each case draws a fresh random point, upstream and direction.
inline std::vector<StageResult> run(const Options& opts) {
  if (opts.cases < 1) throw ConfigError("cases: must be >= 1");
  if (!(opts.tolerance < 0 || opts.tolerance >= 0)) throw ConfigError("tolerance: not a number");
  const auto model = scene_model(opts.scene);
  std::vector<StageResult> results;
  std::uint64_t index = 0;
  for (const Stage& stage : stages(model)) {
    Rng rng(derive_seed(opts.seed, {index++}));
    StageResult r;
    r.name = stage.name;
    r.linear = stage.linear;
    r.tolerance = opts.tolerance >= 0 ? opts.tolerance : (stage.linear ? 1e-4 : 1e-3);
    const auto t0 = std::chrono::steady_clock::now();
    while (r.cases < opts.cases) {
      const Probe p = stage.make(rng);
      const CaseResult c = check_probe(p, rng, opts.step);
      if (!c.smooth) {
        // More than 10% non-smooth draws fails the stage (see passed()).
        if (++r.nonsmooth * 10 > opts.cases) break;
        continue;
      }
      r.worst = std::max(r.worst, c.error);
      ++r.cases;
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    results.push_back(r);
  }
  return results;
}

}  // namespace clipmatrix::gradcheck
