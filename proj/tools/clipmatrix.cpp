// Command-line driver: optimize, render, export, gradcheck.
//
// Exit codes: 0 success, 1 gradient check failed, 2 configuration or usage
// error, 3 scorer unreachable or failing, 4 file I/O or corrupt input,
// 5 numerical failure during optimization.

#include "clipmatrix/gradcheck.hpp"
#include "clipmatrix/io/export.hpp"
#include "clipmatrix/io/turntable.hpp"
#include "clipmatrix/optim/run.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <iostream>
#include <optional>
#include <regex>
#include <string>

namespace cm = clipmatrix;

namespace {

enum ExitCode : int { kOk = 0, kGradcheckFailed = 1, kConfig = 2, kScorer = 3, kIo = 4, kNumeric = 5 };

cm::io::Resolution parse_resolution(const std::string& text) {
  static const std::regex pattern(R"((\d{1,5})[xX](\d{1,5}))");
  std::smatch m;
  if (!std::regex_match(text, m, pattern)) {
    throw cm::ConfigError(fmt::format("--res: expected HxW (e.g. 768x768), got '{}'", text));
  }
  cm::io::Resolution r{std::stoi(m[1]), std::stoi(m[2])};
  cm::io::check_resolution(r, "--res");
  return r;
}

std::vector<std::vector<cm::Vec3d>> load_keyframes(const std::string& path, std::size_t joint_count) {
  std::string text;
  try {
    text = cm::io::read_file(path);
  } catch (const cm::IoError& e) {
    throw cm::ConfigError(fmt::format("--poses: {}", e.what()));
  }
  const auto j = cm::io::detail::parse_strict_json(text);
  const auto& list = j.is_object() && j.contains("keyframes") ? j.at("keyframes") : j;
  if (!list.is_array() || list.empty()) throw cm::ConfigError("--poses: expected a nonempty array of keyframes");
  std::vector<std::vector<cm::Vec3d>> out;
  for (std::size_t i = 0; i < list.size(); ++i) {
    out.push_back(cm::io::detail::read_joint_list(list[i], fmt::format("poses[{}]", i)));
    if (out.back().size() != joint_count) {
      throw cm::ConfigError(fmt::format("poses[{}]: expected {} joints, got {}", i, joint_count, out.back().size()));
    }
  }
  return out;
}

struct LoadedRun {
  cm::optim::Checkpoint checkpoint;
  cm::io::RunConfig config;
  cm::body::TemplateModel<double> model;
  cm::objective::SceneParams params;
};

LoadedRun load_run(const std::string& path) {
  LoadedRun run;
  run.checkpoint = cm::optim::load_checkpoint(path);
  run.config = cm::optim::checkpoint_config(run.checkpoint);
  run.model = cm::optim::build_model(run.config.model);
  if (run.checkpoint.params[cm::optim::kDelta].size() != 3 * run.model.vertex_count() ||
      run.checkpoint.params[cm::optim::kBeta].size() != run.model.shape_count()) {
    throw cm::LoadError(fmt::format("{}: parameter sizes do not match the model", path));
  }
  run.params = cm::optim::decode(run.checkpoint.params, run.model.joint_count());
  return run;
}

int cmd_optimize(const std::string& config_path, const std::optional<std::string>& resume,
                 const std::optional<std::uint64_t>& seed, const std::optional<std::string>& out) {
  auto config = cm::io::load_config(config_path);
  if (seed) config.seed = *seed;
  if (out) config.output.dir = *out;
  auto scorer = cm::optim::make_scorer(config.scorer);
  cm::optim::RunOptions options;
  if (resume) options.resume = *resume;
  options.progress = &std::cout;
  const auto result = cm::optim::run_optimization(config, *scorer, options);
  std::cout << fmt::format("done steps={} checkpoint={}", result.checkpoint.state.step, result.checkpoint_path.string())
            << std::endl;
  return kOk;
}

int cmd_render(const std::string& checkpoint, int frames, const std::optional<std::string>& res,
               const std::optional<std::string>& poses, const std::string& out) {
  if (frames < 1) throw cm::ConfigError("--frames: must be >= 1");
  const auto resolution = res ? parse_resolution(*res) : cm::io::Resolution{};
  const LoadedRun run = load_run(checkpoint);
  cm::io::TurntableOptions opts;
  opts.frames = frames;
  const auto r = res ? resolution : run.config.render.inference;
  opts.height = r.height;
  opts.width = r.width;
  opts.near_clip = run.config.render.near_clip;
  opts.far_clip = run.config.render.far_clip;
  opts.raster = run.config.render.raster;
  if (poses) opts.keyframes = load_keyframes(*poses, run.model.joint_count());
  const auto images = cm::io::render_turntable(run.model, run.params, opts);
  std::error_code ec;
  std::filesystem::create_directories(out, ec);
  if (ec) throw cm::IoError(fmt::format("cannot create {}: {}", out, ec.message()));
  for (std::size_t k = 0; k < images.size(); ++k) {
    const auto path = std::filesystem::path(out) / fmt::format("frame_{:04d}.png", k);
    cm::io::write_png(path, images[k]);
    std::cout << fmt::format("frame={} path={}", k, path.string()) << std::endl;
  }
  return kOk;
}

int cmd_export(const std::string& checkpoint, const std::string& out) {
  const LoadedRun run = load_run(checkpoint);
  cm::io::ExportMesh mesh;
  mesh.vertices = cm::body::blend_shape(run.model, run.params.body);
  mesh.uv_coords = run.model.uv_coords;
  mesh.faces = run.model.faces;
  cm::io::export_obj(mesh, run.params.texture, run.params.materials.front(), out);
  std::cout << fmt::format("exported {} {} {}", (std::filesystem::path(out) / "mesh.obj").string(),
                           (std::filesystem::path(out) / "mesh.mtl").string(),
                           (std::filesystem::path(out) / "texture.png").string())
            << std::endl;
  return kOk;
}

int cmd_gradcheck(const std::string& scene, const std::optional<double>& tolerance, int cases) {
  cm::gradcheck::Options opts;
  opts.scene = scene;
  opts.cases = cases;
  if (tolerance) {
    if (!(*tolerance >= 0)) throw cm::ConfigError("--tolerance: must be >= 0");
    opts.tolerance = *tolerance;
  }
  bool ok = true;
  for (const auto& r : cm::gradcheck::run(opts)) {
    ok = ok && r.passed();
    std::cout << fmt::format("stage={} cases={} nonsmooth={} worst_rel_err={:.3e} tolerance={:.1e} seconds={:.3f} {}",
                             r.name, r.cases, r.nonsmooth, r.worst, r.tolerance, r.seconds,
                             r.passed() ? "PASS" : "FAIL")
              << std::endl;
  }
  std::cout << (ok ? "gradcheck PASS" : "gradcheck FAIL") << std::endl;
  return ok ? kOk : kGradcheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Text-guided optimization of rigged, textured meshes"};
  app.require_subcommand(1);

  std::string config_path, checkpoint, out_dir = "turntable", export_dir, scene = "tiny";
  std::optional<std::string> resume, seed_text, opt_out, res, poses;
  std::optional<double> tolerance;
  int frames = 60, cases = 100;

  auto* optimize = app.add_subcommand("optimize", "Run the optimization loop");
  optimize->add_option("--config", config_path, "Run configuration (JSON)")->required();
  optimize->add_option("--resume", resume, "Checkpoint to continue from");
  optimize->add_option("--seed", seed_text, "Override the configured seed");
  optimize->add_option("--out", opt_out, "Override the output directory");

  auto* render = app.add_subcommand("render", "Render a turntable sequence from a checkpoint");
  render->add_option("--checkpoint", checkpoint, "MMC1 checkpoint")->required();
  render->add_option("--frames", frames, "Number of frames")->capture_default_str();
  render->add_option("--res", res, "Resolution HxW (default: configured inference resolution)");
  render->add_option("--poses", poses, "JSON list of keyframe poses to interpolate");
  render->add_option("--out", out_dir, "Output directory")->capture_default_str();

  auto* exporter = app.add_subcommand("export", "Write mesh.obj, mesh.mtl and texture.png");
  exporter->add_option("--checkpoint", checkpoint, "MMC1 checkpoint")->required();
  exporter->add_option("--out", export_dir, "Output directory")->required();

  auto* grad = app.add_subcommand("gradcheck", "Compare every derivative against finite differences");
  grad->add_option("--scene", scene, "tiny or humanoid")->capture_default_str();
  grad->add_option("--tolerance", tolerance, "Relative error bound applied to every stage");
  grad->add_option("--cases", cases, "Random cases per stage")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfig;
  }

  try {
    if (*optimize) {
      std::optional<std::uint64_t> seed;
      if (seed_text) {
        try {
          std::size_t used = 0;
          seed = std::stoull(*seed_text, &used);
          if (used != seed_text->size() || seed_text->front() == '-') throw std::invalid_argument("seed");
        } catch (const std::exception&) {
          throw cm::ConfigError(fmt::format("--seed: expected a nonnegative integer, got '{}'", *seed_text));
        }
      }
      return cmd_optimize(config_path, resume, seed, opt_out);
    }
    if (*render) return cmd_render(checkpoint, frames, res, poses, out_dir);
    if (*exporter) return cmd_export(checkpoint, export_dir);
    if (*grad) return cmd_gradcheck(scene, tolerance, cases);
  } catch (const cm::ConfigError& e) {
    std::cerr << "config error: " << e.what() << std::endl;
    return kConfig;
  } catch (const cm::ScorerError& e) {
    std::cerr << "scorer error: " << e.what() << std::endl;
    return kScorer;
  } catch (const cm::LoadError& e) {
    std::cerr << "load error: " << e.what() << std::endl;
    return kIo;
  } catch (const cm::IoError& e) {
    std::cerr << "i/o error: " << e.what() << std::endl;
    return kIo;
  } catch (const cm::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << std::endl;
    return kNumeric;
  }
  return kOk;
}
