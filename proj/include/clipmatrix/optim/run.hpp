#pragma once

#include "clipmatrix/body/humanoid.hpp"
#include "clipmatrix/body/model_io.hpp"
#include "clipmatrix/io/config.hpp"
#include "clipmatrix/io/png.hpp"
#include "clipmatrix/io/turntable.hpp"
#include "clipmatrix/objective/remote_scorer.hpp"
#include "clipmatrix/optim/adam.hpp"
#include "clipmatrix/optim/checkpoint.hpp"

#include <fmt/format.h>

#include <cstdlib>
#include <filesystem>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>

namespace clipmatrix::optim {

inline body::TemplateModel<double> build_model(const io::ModelSpec& spec) {
  if (spec.path.empty()) return body::make_test_humanoid(body::HumanoidOptions{spec.segments, spec.shape_components});
  auto model = body::load_model(spec.path);
  body::validate(model);
  return model;
}

/// Builds the configured scorer. A remote scorer without an endpoint falls
/// back to the CLIPMATRIX_SCORER_URL environment variable.
inline std::unique_ptr<objective::Scorer> make_scorer(const io::ScorerSpec& spec) {
  if (spec.type == "random_projection") return std::make_unique<objective::RandomProjectionScorer>(spec.embed_dim, spec.seed);
  if (spec.type == "target_image") {
    std::vector<Image> targets;
    for (const auto& path : spec.targets) {
      try {
        targets.push_back(io::read_png(path));
      } catch (const IoError& e) {
        throw ConfigError(fmt::format("scorer.targets: {}", e.what()));
      }
    }
    return std::make_unique<objective::TargetImageScorer>(std::move(targets));
  }
  if (spec.type == "remote") {
    objective::RemoteScorerOptions o;
    o.endpoint = spec.endpoint;
    if (o.endpoint.empty()) {
      if (const char* env = std::getenv("CLIPMATRIX_SCORER_URL")) o.endpoint = env;
    }
    if (o.endpoint.empty()) throw ConfigError("scorer.endpoint: not set and CLIPMATRIX_SCORER_URL is empty");
    o.timeout_s = spec.timeout_s;
    o.max_attempts = spec.max_attempts;
    o.backoff_s = spec.backoff_s;
    return std::make_unique<objective::RemoteScorer>(o);
  }
  throw ConfigError(fmt::format("scorer.type: unknown scorer '{}'", spec.type));
}

inline std::size_t light_block_count(const io::RunConfig& c) {
  return c.render.light_material_mode == "per_prompt" ? c.prompts.size() : 1;
}

inline InitSpec init_spec(const io::RunConfig& c, const body::TemplateModel<double>& model) {
  InitSpec s;
  s.shape_count = model.shape_count();
  s.vertex_count = model.vertex_count();
  s.texture_height = c.render.texture.height;
  s.texture_width = c.render.texture.width;
  s.light_blocks = light_block_count(c);
  s.light = c.render.initial_light;
  s.material = c.render.initial_material;
  auto hyper = [](const io::GroupSettings& g) { return GroupHyper{g.lr, g.enabled, g.clip}; };
  s.hyper[kBeta] = hyper(c.optim.beta);
  s.hyper[kDelta] = hyper(c.optim.delta);
  s.hyper[kTexture] = hyper(c.optim.texture);
  s.hyper[kLight] = hyper(c.optim.light);
  s.hyper[kMaterial] = hyper(c.optim.material);
  return s;
}

inline objective::LossSetup make_loss_setup(const io::RunConfig& c, const body::TemplateModel<double>& model,
                                            const objective::MeshTopology& topology) {
  objective::LossSetup s;
  s.model = &model;
  s.topology = &topology;
  s.prompts = c.prompts;
  for (const auto& p : c.prompts) s.prompt_cameras.push_back(c.cameras.at(p.camera));
  s.pose = c.pose;
  s.reg = c.reg;
  s.batch = c.optim.batch;
  s.view = {c.render.train.height, c.render.train.width, c.render.near_clip, c.render.far_clip};
  s.raster = c.render.raster;
  s.seed = c.seed;
  return s;
}

inline Checkpoint initial_checkpoint(const io::RunConfig& c, const body::TemplateModel<double>& model,
                                     const std::string& scorer_model) {
  Checkpoint ck;
  ck.params = init_params(init_spec(c, model));
  ck.state.seed = c.seed;
  ck.config_hash = io::config_hash(c);
  ck.config = io::trajectory_config(c);
  ck.scorer_model = scorer_model;
  return ck;
}

/// Rebuilds the run configuration stored in a checkpoint.
inline io::RunConfig checkpoint_config(const Checkpoint& ck) {
  try {
    return io::parse_config(ck.config.dump());
  } catch (const ConfigError& e) {
    throw LoadError(std::string("checkpoint: embedded config is invalid: ") + e.what());
  }
}

/// One optimization step's log entry. Losses are evaluated at the parameters
/// before the update that produces step + 1.
struct LossRow {
  std::uint64_t step = 0;
  double total = 0;
  std::vector<double> prompt_losses;
  double reg = 0;
};

inline std::string csv_header(std::size_t prompts) {
  std::string h = "step,total";
  for (std::size_t p = 0; p < prompts; ++p) h += fmt::format(",loss_{}", p);
  return h + ",reg\n";
}

inline std::string csv_row(const LossRow& r) {
  std::string line = fmt::format("{},{:.9g}", r.step, r.total);
  for (double l : r.prompt_losses) line += fmt::format(",{:.9g}", l);
  return line + fmt::format(",{:.9g}\n", r.reg);
}

inline std::string progress_line(const LossRow& r) {
  std::string line = fmt::format("step={} total={:.9g}", r.step, r.total);
  for (std::size_t p = 0; p < r.prompt_losses.size(); ++p) line += fmt::format(" loss_{}={:.9g}", p, r.prompt_losses[p]);
  return line + fmt::format(" reg={:.9g}", r.reg);
}

/// Snapshot view: first turntable camera, rest pose, training resolution.
inline Image render_snapshot(const io::RunConfig& c, const body::TemplateModel<double>& model,
                             const objective::SceneParams& params) {
  io::TurntableOptions o;
  o.frames = 1;
  o.height = c.render.train.height;
  o.width = c.render.train.width;
  o.near_clip = c.render.near_clip;
  o.far_clip = c.render.far_clip;
  o.raster = c.render.raster;
  return io::render_turntable(model, params, o).front();
}

struct RunOptions {
  std::optional<std::filesystem::path> resume;
  std::ostream* progress = nullptr;
};

struct RunResult {
  Checkpoint checkpoint;
  std::filesystem::path checkpoint_path;
  std::vector<LossRow> rows;  // rows produced by this invocation
};

namespace detail {

inline std::string step_name(std::uint64_t step, const char* ext) { return fmt::format("step_{:06d}.{}", step, ext); }

inline void save_run_checkpoint(const Checkpoint& ck, const std::filesystem::path& out) {
  save_checkpoint(ck, out / "checkpoints" / step_name(ck.state.step, "mmc"));
  save_checkpoint(ck, out / "checkpoints" / "latest.mmc");
}

inline void make_dirs(const std::filesystem::path& p) {
  std::error_code ec;
  std::filesystem::create_directories(p, ec);
  if (ec) throw IoError(fmt::format("cannot create {}: {}", p.string(), ec.message()));
}

// Keeps the header and every row for a step before `step`.
inline std::string truncate_log(const std::string& text, std::uint64_t step, const std::string& header) {
  std::istringstream in(text);
  std::string line, out = header;
  bool first = true;
  while (std::getline(in, line)) {
    if (first) {
      first = false;
      continue;
    }
    if (line.empty()) continue;
    const auto comma = line.find(',');
    std::uint64_t row_step = 0;
    try {
      row_step = std::stoull(line.substr(0, comma));
    } catch (const std::exception&) {
      throw LoadError("loss.csv: malformed row '" + line + "'");
    }
    if (row_step < step) out += line + "\n";
  }
  return out;
}

}  // namespace detail

/// The stochastic training loop: per step, sample pose and cameras, evaluate
/// the total loss through the scorer, chain through decode, and take one Adam
/// step. Writes loss.csv, snapshots/ and checkpoints/ under config.output.dir.
/// A resumed run continues the exact random stream of a fresh run.
inline RunResult run_optimization(const io::RunConfig& config, objective::Scorer& scorer, const RunOptions& options = {}) {
  const auto model = build_model(config.model);
  io::validate_against_model(config, model);
  const auto topology = objective::MeshTopology::build(model.vertex_count(), model.faces);
  const auto setup = make_loss_setup(config, model, topology);

  std::vector<std::string> texts;
  for (const auto& p : config.prompts) texts.push_back(p.text);
  scorer.register_prompts(texts);

  const std::filesystem::path out = config.output.dir;
  detail::make_dirs(out / "checkpoints");
  if (config.output.snapshot_every > 0) detail::make_dirs(out / "snapshots");
  io::write_file_atomic(out / "config.json", io::serialize_config(config));

  RunResult result;
  Checkpoint& ck = result.checkpoint;
  const std::string header = csv_header(config.prompts.size());
  std::string log;
  if (options.resume) {
    ck = load_checkpoint(*options.resume);
    if (ck.config_hash != io::config_hash(config)) {
      throw ConfigError(fmt::format("resume: checkpoint {} was produced by a different configuration",
                                    options.resume->string()));
    }
    const auto log_path = out / "loss.csv";
    log = std::filesystem::exists(log_path) ? detail::truncate_log(io::read_file(log_path), ck.state.step, header)
                                            : header;
  } else {
    ck = initial_checkpoint(config, model, scorer.model_id());
    log = header;
  }
  io::write_file_atomic(out / "loss.csv", log);

  const auto max_steps = static_cast<std::uint64_t>(config.optim.max_steps);
  auto maybe_snapshot = [&]() {
    const auto every = static_cast<std::uint64_t>(config.output.snapshot_every);
    if (every == 0 || ck.state.step % every != 0) return;
    const auto params = decode(ck.params, model.joint_count());
    io::write_png(out / "snapshots" / detail::step_name(ck.state.step, "png"), render_snapshot(config, model, params));
  };

  if (!options.resume) {
    detail::save_run_checkpoint(ck, out);
    maybe_snapshot();
  }

  while (ck.state.step < max_steps) {
    const auto params = decode(ck.params, model.joint_count());
    objective::LossRecord rec;
    try {
      rec = objective::total_loss(setup, params, scorer, ck.state.step);
    } catch (const ScorerUnavailable&) {
      detail::save_run_checkpoint(ck, out);
      throw;
    }
    const GroupGrads grads = decode_vjp(ck.params, rec);
    LossRow row{ck.state.step, rec.total, rec.prompt_losses, rec.reg};
    adam_step(ck.params, grads, ck.state);

    log += csv_row(row);
    io::write_file_atomic(out / "loss.csv", log);
    if (options.progress != nullptr) *options.progress << progress_line(row) << std::endl;
    result.rows.push_back(std::move(row));

    const auto every = static_cast<std::uint64_t>(config.output.checkpoint_every);
    if ((every > 0 && ck.state.step % every == 0) || ck.state.step == max_steps) detail::save_run_checkpoint(ck, out);
    maybe_snapshot();
  }
  result.checkpoint_path = out / "checkpoints" / detail::step_name(ck.state.step, "mmc");
  return result;
}

}  // namespace clipmatrix::optim
