// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit if any fails.
// Run from the build tree; needs the clipmatrix CLI next to it (compiled-in path).

#include "clipmatrix/gradcheck.hpp"
#include "clipmatrix/io/export.hpp"
#include "clipmatrix/optim/run.hpp"
#include "test_support.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <iostream>
#include <limits>
#include <set>

namespace cm = clipmatrix;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

int failures = 0;
std::set<std::string> scorers_used;

void report(const std::string& name, const Verdict& v) {
  if (!v.pass) ++failures;
  std::cout << (v.pass ? "PASS " : "FAIL ") << name << ": " << v.detail << std::endl;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

cm::objective::CameraDist fixed_camera(double azimuth, double elevation, double radius) {
  cm::objective::CameraDist d;
  d.fov = {0.8, 0.8};
  d.azimuth = {azimuth, azimuth};
  d.elevation = {elevation, elevation};
  d.radius = {radius, radius};
  d.look_at = "center";
  return d;
}

// Baseline for the recovery experiments: coarse humanoid, rest pose, every
// group frozen; callers enable what they optimize.
cm::io::RunConfig recovery_config(const fs::path& out, int resolution, int texture) {
  cm::io::RunConfig c;
  c.model.segments = 1;
  c.pose.mode = cm::objective::PoseMode::rest;
  c.reg.lambda = 0;
  c.optim.batch = 1;
  for (auto* g : {&c.optim.texture, &c.optim.delta, &c.optim.beta, &c.optim.light, &c.optim.material}) {
    g->enabled = false;
  }
  c.render.train = {resolution, resolution};
  c.render.texture = {texture, texture};
  c.output.dir = out.string();
  c.output.snapshot_every = 0;
  c.output.checkpoint_every = 0;
  return c;
}

cm::Image render_view(const cm::io::RunConfig& c, const cm::body::TemplateModel<double>& model,
                      const cm::objective::SceneParams& params, std::size_t prompt) {
  cm::Rng unused(0);
  cm::objective::ViewSettings view{c.render.train.height, c.render.train.width, c.render.near_clip, c.render.far_clip};
  const auto cam = cm::objective::sample_camera(c.cameras.at(c.prompts[prompt].camera), model, model.template_vertices,
                                                view, unused);
  return cm::raster::render(cm::body::pose_mesh(model, params.body), cam, params.lights.front(),
                            params.materials.front(), &params.texture, c.render.raster, c.prompts[prompt].textured);
}

double mse(const cm::Image& a, const cm::Image& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.values.size(); ++i) s += (a.values[i] - b.values[i]) * (a.values[i] - b.values[i]);
  return s / static_cast<double>(a.values.size());
}

// ---------------------------------------------------------------------------

Verdict gradient_suite() {
  const auto t0 = Clock::now();
  cm::gradcheck::Options opts;
  opts.cases = 100;
  const auto results = cm::gradcheck::run(opts);
  const double elapsed = seconds_since(t0);
  bool ok = elapsed < 300;
  std::string worst;
  for (const auto& r : results) {
    ok = ok && r.passed() && r.cases >= 100;
    worst += fmt::format(" {}={:.1e}{}", r.name, r.worst, r.passed() ? "" : "(!)");
  }
  return {ok, fmt::format("{} stages x 100 cases in {:.1f} s; worst rel err:{}", results.size(), elapsed, worst)};
}

Verdict texture_recovery(const fs::path& root) {
  constexpr int kSeeds = 10, kSteps = 500;
  std::vector<double> final_mse;
  int monotone = 0;
  const auto t0 = Clock::now();
  for (int seed = 0; seed < kSeeds; ++seed) {
    const fs::path dir = root / fmt::format("texture_{}", seed);
    auto c = recovery_config(dir / "out", 128, 256);
    c.seed = static_cast<std::uint64_t>(seed);
    c.cameras["fixed"] = fixed_camera(2 * cm::kPi * seed / kSeeds, 0.15, 2.6);
    c.prompts = {{"target", "fixed", true, 1.0}};
    c.optim.texture.enabled = true;
    c.optim.max_steps = kSteps;

    const auto model = cm::optim::build_model(c.model);
    auto truth = cm::optim::decode(cm::optim::initial_checkpoint(c, model, "").params, model.joint_count());
    cm::Rng rng(1000 + static_cast<std::uint64_t>(seed));
    for (auto& v : truth.texture.values) v = cm::uniform(rng, 0.1, 0.9);
    fs::create_directories(dir);
    cm::io::write_png(dir / "target.png", render_view(c, model, truth, 0));
    c.scorer.type = "target_image";
    c.scorer.targets = {(dir / "target.png").string()};

    auto scorer = cm::optim::make_scorer(c.scorer);
    scorers_used.insert(scorer->model_id());
    const auto result = cm::optim::run_optimization(c, *scorer);
    const auto params = cm::optim::decode(result.checkpoint.params, model.joint_count());
    final_mse.push_back(mse(render_view(c, model, params, 0), cm::io::read_png(dir / "target.png")));
    monotone += result.rows.back().total < 0.1 * result.rows.front().total;
  }
  const double m = median(final_mse);
  return {m < 1e-3, fmt::format("median MSE {:.2e} over {} seeds after {} steps (max {:.2e}; loss fell >10x in {}/{}); "
                                "128x128 render, 256x256 texture, {:.0f} s",
                                m, kSeeds, kSteps, *std::max_element(final_mse.begin(), final_mse.end()), monotone,
                                kSeeds, seconds_since(t0))};
}

Verdict shape_recovery(const fs::path& root) {
  constexpr int kViews = 8, kSteps = 300;
  const std::vector<double> beta_star{0.6, -0.45};
  const auto t0 = Clock::now();
  auto c = recovery_config(root / "shape/out", 128, 64);
  c.model.shape_components = 2;
  c.optim.beta.enabled = true;
  c.optim.beta.lr = 0.02;
  c.optim.max_steps = kSteps;
  for (int k = 0; k < kViews; ++k) {
    const std::string name = fmt::format("view{}", k);
    c.cameras[name] = fixed_camera(2 * cm::kPi * k / kViews, 0.2, 2.8);
    c.prompts.push_back({name, name, true, 1.0});
  }
  const auto model = cm::optim::build_model(c.model);
  auto truth = cm::optim::decode(cm::optim::initial_checkpoint(c, model, "").params, model.joint_count());
  truth.body.beta = beta_star;
  fs::create_directories(root / "shape");
  c.scorer.type = "target_image";
  for (int k = 0; k < kViews; ++k) {
    const auto path = root / "shape" / fmt::format("target_{}.png", k);
    cm::io::write_png(path, render_view(c, model, truth, static_cast<std::size_t>(k)));
    c.scorer.targets.push_back(path.string());
  }
  auto scorer = cm::optim::make_scorer(c.scorer);
  scorers_used.insert(scorer->model_id());
  const auto result = cm::optim::run_optimization(c, *scorer);
  const auto& beta = result.checkpoint.params[cm::optim::kBeta].value;
  double err = 0;
  for (std::size_t k = 0; k < beta.size(); ++k) err = std::max(err, std::abs(beta[k] - beta_star[k]));
  return {err <= 0.05, fmt::format("beta=({:.4f}, {:.4f}) vs beta*=({}, {}), inf-norm error {:.4f} after {} steps, "
                                   "{} orbit views, {:.0f} s",
                                   beta[0], beta[1], beta_star[0], beta_star[1], err, kSteps, kViews,
                                   seconds_since(t0))};
}

// Distance in pixels from the centre of pixel (row, col) to the nearest
// projected triangle edge.
double pixels_to_nearest_edge(const cm::testing::SoupScene& scene, int row, int col) {
  const auto view = cm::testing::hard_view(scene.camera);
  const int w = scene.camera.width, h = scene.camera.height;
  auto to_pixels = [&](const cm::Vec3d& v) {
    const cm::Vec3d p = view.rotation * (v - view.eye);
    const double x = view.focal * view.aspect * p.x() / -p.z(), y = view.focal * p.y() / -p.z();
    return cm::Vec2d((x + 1) * w / 2 - 0.5, (1 - y) * h / 2 - 0.5);
  };
  const cm::Vec2d q(col, row);
  double best = std::numeric_limits<double>::infinity();
  for (const auto& f : scene.mesh.faces) {
    for (int k = 0; k < 3; ++k) {
      const cm::Vec2d a = to_pixels(scene.mesh.vertices[f[k]]), b = to_pixels(scene.mesh.vertices[f[(k + 1) % 3]]);
      const double t = std::clamp((q - a).dot(b - a) / std::max((b - a).squaredNorm(), 1e-300), 0.0, 1.0);
      best = std::min(best, (a + t * (b - a) - q).norm());
    }
  }
  return best;
}

Verdict hard_limit() {
  constexpr int kScenes = 20, kRes = 64;
  constexpr double kTol = 1.0 / 255;
  cm::Rng rng(31337);
  cm::raster::SoftRasterConfig cfg;
  cfg.sigma = 1e-7;
  cfg.gamma = 1e-7;
  double worst = 1;
  int worst_faces = 0;
  std::size_t agree = 0, mismatched = 0, near_edge = 0;
  for (int s = 0; s < kScenes; ++s) {
    const int faces = 5 + static_cast<int>(cm::uniform01(rng) * 46);  // 5..50
    const auto scene = cm::testing::random_soup(rng, faces, kRes);
    const auto soft = cm::raster::render(scene.mesh, scene.camera, scene.light, scene.material, &scene.texture, cfg, true);
    const auto hard = cm::testing::hard_render(scene.mesh, scene.camera, scene.light, scene.material, &scene.texture,
                                               cfg.background);
    const double a = cm::testing::agreement(soft, hard, kTol);
    if (a < worst) {
      worst = a;
      worst_faces = faces;
    }
    for (int r = 0; r < kRes; ++r) {
      for (int c = 0; c < kRes; ++c) {
        bool same = true;
        for (int ch = 0; ch < 3; ++ch) same = same && std::abs(soft.at(r, c, ch) - hard.at(r, c, ch)) <= kTol;
        if (same) {
          ++agree;
        } else {
          ++mismatched;
          near_edge += pixels_to_nearest_edge(scene, r, c) <= 1.0;
        }
      }
    }
  }
  const double pooled = static_cast<double>(agree) / static_cast<double>(kScenes * kRes * kRes);
  return {worst >= 0.99, fmt::format("per-scene agreement within 1/255 >= 0.99 required; worst scene {:.4f} ({} faces), "
                                     "pooled over all {} scenes {:.4f}; {}/{} mismatched pixels lie within 1 px of a "
                                     "projected edge",
                                     worst, worst_faces, kScenes, pooled, near_edge, mismatched)};
}

Verdict performance(const fs::path& root) {
  auto c = cm::io::parse_config(fmt::format(
      R"({{"model": {{"segments": 5}}, "prompts": [{{"text": "a humanoid figure in ornate armor"}}],
          "pose": {{"mode": "per_joint_uniform"}}, "optim": {{"batch": 4}},
          "render": {{"train_resolution": [224, 224], "texture_resolution": [1024, 1024]}},
          "output": {{"dir": "{}"}}}})",
      (root / "perf").string()));
  const auto model = cm::optim::build_model(c.model);
  const auto topology = cm::objective::MeshTopology::build(model.vertex_count(), model.faces);
  const auto setup = cm::optim::make_loss_setup(c, model, topology);
  auto scorer = cm::optim::make_scorer(c.scorer);
  scorers_used.insert(scorer->model_id());
  scorer->register_prompts({c.prompts[0].text});
  auto ck = cm::optim::initial_checkpoint(c, model, scorer->model_id());

  std::vector<double> times;
  for (std::uint64_t step = 0; step < 3; ++step) {
    const auto t0 = Clock::now();
    const auto params = cm::optim::decode(ck.params, model.joint_count());
    const auto rec = cm::objective::total_loss(setup, params, *scorer, step);
    cm::optim::adam_step(ck.params, cm::optim::decode_vjp(ck.params, rec), ck.state);
    times.push_back(seconds_since(t0));
  }
  const double worst = *std::max_element(times.begin(), times.end());
  return {worst <= 5.0, fmt::format("V={} F={}, {}x{} render, batch {}, {}x{} texture: step times {:.2f} / {:.2f} / "
                                    "{:.2f} s (first includes projection setup)",
                                    model.vertex_count(), model.face_count(), c.render.train.height,
                                    c.render.train.width, c.optim.batch, c.render.texture.height,
                                    c.render.texture.width, times[0], times[1], times[2])};
}

int run_cli(const std::string& args) {
  const std::string cmd = fmt::format("'{}' {} > /dev/null 2>&1", CLIPMATRIX_CLI_PATH, args);
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Verdict determinism(const fs::path& root) {
  const auto t0 = Clock::now();
  const std::string config_text = R"({
    "model": {"segments": 1},
    "prompts": [{"text": "a knight"}, {"text": "a dragon", "weight": 0.5}],
    "pose": {"mode": "per_joint_uniform"},
    "optim": {"max_steps": 100, "batch": 4},
    "render": {"train_resolution": [96, 96], "texture_resolution": [128, 128]},
    "output": {"snapshot_every": 0, "checkpoint_every": 10},
    "seed": 424242
  })";
  cm::testing::spit(root / "det.json", config_text);
  scorers_used.insert(cm::optim::make_scorer(cm::io::parse_config(config_text).scorer)->model_id());
  std::vector<std::string> problems;
  for (const char* run : {"a", "b"}) {
    const int code = run_cli(fmt::format("optimize --config '{}' --out '{}'", (root / "det.json").string(),
                                         (root / "det" / run).string()));
    if (code != 0) problems.push_back(fmt::format("run {} exited {}", run, code));
  }
  int compared = 0;
  for (int step : {0, 10, 100}) {
    const std::string ck = fmt::format("checkpoints/step_{:06d}.mmc", step);
    for (const char* run : {"a", "b"}) {
      if (run_cli(fmt::format("export --checkpoint '{}' --out '{}'", (root / "det" / run / ck).string(),
                              (root / "det" / run / fmt::format("export_{}", step)).string())) != 0) {
        problems.push_back(fmt::format("export of step {} failed in run {}", step, run));
      }
    }
    std::vector<std::string> files{ck};
    for (const char* f : {"mesh.obj", "mesh.mtl", "texture.png"}) files.push_back(fmt::format("export_{}/{}", step, f));
    for (const auto& f : files) {
      const auto a = cm::testing::slurp(root / "det/a" / f), b = cm::testing::slurp(root / "det/b" / f);
      ++compared;
      if (a.empty() || a != b) problems.push_back(f + " differs");
    }
  }
  const auto ck0 = cm::testing::slurp(root / "det/a/checkpoints/step_000000.mmc");
  if (ck0 == cm::testing::slurp(root / "det/a/checkpoints/step_000100.mmc")) problems.push_back("run did not move");
  std::string detail = fmt::format("{} files compared byte-for-byte at steps 0, 10, 100 across two processes ({:.0f} s)",
                                   compared, seconds_since(t0));
  for (const auto& p : problems) detail += "; " + p;
  return {problems.empty(), detail};
}

Verdict no_clip_service() {
  bool ok = std::getenv("CLIPMATRIX_SCORER_URL") == nullptr;
  std::string list;
  for (const auto& s : scorers_used) {
    list += (list.empty() ? "" : ", ") + s;
    ok = ok && s.rfind("remote", 0) != 0 && s.find("mock") == std::string::npos;
  }
  return {ok && !scorers_used.empty(), "scorers used: " + list + "; no service endpoint configured"};
}

}  // namespace

int main() {
  ::unsetenv("CLIPMATRIX_SCORER_URL");
  cm::testing::TempDir root;
  const auto guarded = [&](const std::string& name, auto&& fn) {
    try {
      report(name, fn());
    } catch (const std::exception& e) {
      report(name, {false, std::string("exception: ") + e.what()});
    }
  };
  guarded("gradient_suite", [] { return gradient_suite(); });
  guarded("texture_recovery", [&] { return texture_recovery(root.path()); });
  guarded("shape_recovery", [&] { return shape_recovery(root.path()); });
  guarded("hard_limit_oracle", [] { return hard_limit(); });
  guarded("full_scale_performance", [&] { return performance(root.path()); });
  guarded("determinism", [&] { return determinism(root.path()); });
  guarded("proxy_scorers_only", [] { return no_clip_service(); });
  std::cout << (failures == 0 ? "ACCEPTANCE PASS" : fmt::format("ACCEPTANCE FAIL ({} criteria)", failures)) << std::endl;
  return failures == 0 ? 0 : 1;
}
