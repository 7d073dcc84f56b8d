#pragma once

#include "clipmatrix/body/model.hpp"
#include "clipmatrix/io/binary.hpp"
#include "clipmatrix/objective/regularizers.hpp"
#include "clipmatrix/objective/sampling.hpp"
#include "clipmatrix/objective/total_loss.hpp"
#include "clipmatrix/raster/types.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace clipmatrix::io {

using nlohmann::json;

struct ModelSpec {
  std::string path;  // empty: procedural test humanoid
  int segments = 1;
  int shape_components = 4;
  bool operator==(const ModelSpec&) const = default;
};

struct ScorerSpec {
  std::string type = "random_projection";  // random_projection | target_image | remote
  int embed_dim = 64;
  std::uint64_t seed = 0;
  std::vector<std::string> targets;  // PNG paths, one shared or one per prompt
  std::string endpoint;              // empty: taken from CLIPMATRIX_SCORER_URL
  double timeout_s = 60.0;
  int max_attempts = 4;
  double backoff_s = 0.5;
  bool operator==(const ScorerSpec&) const = default;
};

struct GroupSettings {
  double lr = 1e-3;
  bool enabled = true;
  double clip = 0.0;  // gradient norm bound for the group, 0 = off
  bool operator==(const GroupSettings&) const = default;
};

struct OptimSettings {
  int max_steps = 600;
  int batch = 4;
  GroupSettings texture{0.05, true, 0.0};
  GroupSettings delta{1e-4, true, 1.0};
  GroupSettings beta{1e-3, true, 0.0};
  GroupSettings light{1e-3, true, 0.0};
  GroupSettings material{1e-3, true, 0.0};
  bool operator==(const OptimSettings&) const = default;
};

struct Resolution {
  int height = 0;
  int width = 0;
  bool operator==(const Resolution&) const = default;
};

inline raster::Light default_initial_light() {
  raster::Light l;
  l.direction = Vec3d(0.0, 0.5, 1.0);  // normalized when decoded
  return l;
}

struct RenderSettings {
  Resolution train{224, 224};
  Resolution inference{768, 768};
  Resolution texture{1024, 1024};
  raster::SoftRasterConfig raster;
  double near_clip = 0.05;
  double far_clip = 20.0;
  std::string light_material_mode = "global";  // global | per_prompt
  raster::Light initial_light = default_initial_light();
  raster::Material initial_material;
  bool operator==(const RenderSettings& o) const {
    auto light_eq = [](const raster::Light& a, const raster::Light& b) {
      return a.direction == b.direction && a.ambient == b.ambient && a.diffuse == b.diffuse && a.specular == b.specular;
    };
    const auto& m = initial_material;
    const auto& n = o.initial_material;
    return train == o.train && inference == o.inference && texture == o.texture && raster.sigma == o.raster.sigma &&
           raster.gamma == o.raster.gamma && raster.faces_per_pixel == o.raster.faces_per_pixel &&
           raster.background == o.raster.background && near_clip == o.near_clip && far_clip == o.far_clip &&
           light_material_mode == o.light_material_mode && light_eq(initial_light, o.initial_light) &&
           m.ambient == n.ambient && m.diffuse == n.diffuse && m.specular == n.specular && m.shininess == n.shininess;
  }
};

struct OutputSettings {
  std::string dir = "run";
  int snapshot_every = 50;    // 0 disables snapshots
  int checkpoint_every = 100; // 0: only the initial and final checkpoints
  bool operator==(const OutputSettings&) const = default;
};

struct RunConfig {
  ModelSpec model;
  std::vector<objective::PromptSpec> prompts;
  std::map<std::string, objective::CameraDist> cameras;
  objective::PoseDist pose;
  ScorerSpec scorer;
  objective::RegWeights reg;
  OptimSettings optim;
  RenderSettings render;
  OutputSettings output;
  std::uint64_t seed = 0;
  bool operator==(const RunConfig&) const = default;
};

namespace detail {

/// Reads one JSON object, remembering which keys were consumed so that any
/// leftover key can be reported as unknown.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j.is_object()) throw ConfigError(fmt::format("{}: expected an object", display()));
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  const json* find(const std::string& key) {
    auto it = j_.find(key);
    if (it == j_.end()) return nullptr;
    seen_.insert(key);
    return &*it;
  }

  std::string path_of(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  template <typename T>
  T get(const std::string& key, T fallback) {
    const json* v = find(key);
    if (v == nullptr) return fallback;
    return convert<T>(*v, path_of(key));
  }

  template <typename T>
  T require(const std::string& key) {
    const json* v = find(key);
    if (v == nullptr) throw ConfigError(fmt::format("{}: required key missing", path_of(key)));
    return convert<T>(*v, path_of(key));
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError(fmt::format("{}: unknown key", path_of(it.key())));
    }
  }

  template <typename T>
  static T convert(const json& v, const std::string& path) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(fmt::format("{}: expected a boolean", path));
      return v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::uint64_t>) {
      if (!v.is_number_unsigned()) throw ConfigError(fmt::format("{}: expected a nonnegative integer", path));
      return v.get<std::uint64_t>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError(fmt::format("{}: expected an integer", path));
      const auto x = v.get<std::int64_t>();
      if (x < std::numeric_limits<T>::min() || x > std::numeric_limits<T>::max()) {
        throw ConfigError(fmt::format("{}: integer out of range", path));
      }
      return static_cast<T>(x);
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(fmt::format("{}: expected a number", path));
      return v.get<double>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(fmt::format("{}: expected a string", path));
      return v.get<std::string>();
    } else if constexpr (std::is_same_v<T, Vec3d>) {
      if (!v.is_array() || v.size() != 3) throw ConfigError(fmt::format("{}: expected an array of 3 numbers", path));
      Vec3d out;
      for (int i = 0; i < 3; ++i) out[i] = convert<double>(v[static_cast<std::size_t>(i)], fmt::format("{}[{}]", path, i));
      return out;
    } else if constexpr (std::is_same_v<T, objective::Range>) {
      if (!v.is_array() || v.size() != 2) throw ConfigError(fmt::format("{}: expected [lo, hi]", path));
      return {convert<double>(v[0], path + "[0]"), convert<double>(v[1], path + "[1]")};
    } else if constexpr (std::is_same_v<T, Resolution>) {
      if (!v.is_array() || v.size() != 2) throw ConfigError(fmt::format("{}: expected [height, width]", path));
      return {convert<int>(v[0], path + "[0]"), convert<int>(v[1], path + "[1]")};
    } else {
      static_assert(sizeof(T) == 0, "unsupported config value type");
    }
  }

 private:
  std::string display() const { return path_.empty() ? "<root>" : path_; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline std::vector<Vec3d> read_joint_list(const json& v, const std::string& path) {
  if (!v.is_array()) throw ConfigError(fmt::format("{}: expected an array of [x, y, z]", path));
  std::vector<Vec3d> out;
  for (std::size_t i = 0; i < v.size(); ++i) out.push_back(ObjectReader::convert<Vec3d>(v[i], fmt::format("{}[{}]", path, i)));
  return out;
}

/// Parses JSON text, rejecting duplicate keys at any depth.
inline json parse_strict_json(std::string_view text) {
  std::vector<std::set<std::string>> keys;
  json::parser_callback_t cb = [&](int, json::parse_event_t event, json& parsed) {
    if (event == json::parse_event_t::object_start) {
      keys.emplace_back();
    } else if (event == json::parse_event_t::object_end) {
      keys.pop_back();
    } else if (event == json::parse_event_t::key) {
      const auto name = parsed.get<std::string>();
      if (!keys.back().insert(name).second) throw ConfigError(fmt::format("duplicate key '{}'", name));
    }
    return true;
  };
  try {
    return json::parse(text.begin(), text.end(), cb);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
}

inline GroupSettings read_group(ObjectReader& parent, const std::string& key, GroupSettings fallback) {
  const json* v = parent.find(key);
  if (v == nullptr) return fallback;
  ObjectReader r(*v, parent.path_of(key));
  GroupSettings g;
  g.lr = r.get("lr", fallback.lr);
  g.enabled = r.get("enabled", fallback.enabled);
  g.clip = r.get("clip", fallback.clip);
  r.finish();
  if (!(g.lr >= 0) || !std::isfinite(g.lr)) throw ConfigError(fmt::format("{}.lr: must be finite and >= 0", r.path_of("")));
  if (!(g.clip >= 0)) throw ConfigError(fmt::format("{}: clip must be >= 0", parent.path_of(key)));
  return g;
}

inline raster::Light read_light(const json& v, const std::string& path) {
  ObjectReader r(v, path);
  raster::Light l = default_initial_light();
  l.direction = r.get("direction", l.direction);
  l.ambient = r.get("ambient", l.ambient);
  l.diffuse = r.get("diffuse", l.diffuse);
  l.specular = r.get("specular", l.specular);
  r.finish();
  if (!(l.direction.norm() > 0)) throw ConfigError(path + ".direction: must be nonzero");
  return l;
}

inline raster::Material read_material(const json& v, const std::string& path) {
  ObjectReader r(v, path);
  raster::Material m;
  m.ambient = r.get("ambient", m.ambient);
  m.diffuse = r.get("diffuse", m.diffuse);
  m.specular = r.get("specular", m.specular);
  m.shininess = r.get("shininess", m.shininess);
  r.finish();
  if (!(m.shininess > 0) || !std::isfinite(m.shininess)) throw ConfigError(path + ".shininess: must be > 0");
  return m;
}

inline objective::CameraDist read_camera(const json& v, const std::string& path) {
  ObjectReader r(v, path);
  objective::CameraDist d;
  const auto mode = r.get<std::string>("mode", "orbit");
  if (mode == "orbit") {
    d.mode = objective::CameraMode::orbit;
    d.azimuth = r.get("azimuth", d.azimuth);
    d.elevation = r.get("elevation", d.elevation);
    d.radius = r.get("radius", d.radius);
    d.look_at = r.get("look_at", d.look_at);
  } else if (mode == "part_grid") {
    d.mode = objective::CameraMode::part_grid;
    d.group = r.get("group", d.group);
    d.rows = r.get("rows", d.rows);
    d.cols = r.get("cols", d.cols);
    d.spread = r.get("spread", d.spread);
    d.zoom_radius = r.get("zoom_radius", d.zoom_radius);
  } else {
    throw ConfigError(fmt::format("{}.mode: unknown camera mode '{}'", path, mode));
  }
  d.fov = r.get("fov", d.fov);
  r.finish();
  d.validate(path);
  return d;
}

inline objective::PoseDist read_pose(const json& v, const std::string& path, const ModelSpec& model) {
  ObjectReader r(v, path);
  objective::PoseDist d;
  const auto mode = r.get<std::string>("mode", "rest");
  if (mode == "rest") {
    d.mode = objective::PoseMode::rest;
  } else if (mode == "per_joint_uniform") {
    const json* lo = r.find("lo");
    const json* hi = r.find("hi");
    if (lo == nullptr && hi == nullptr && model.path.empty()) {
      d = objective::humanoid_pose_bounds();
    } else {
      if (lo == nullptr || hi == nullptr) throw ConfigError(path + ": per_joint_uniform requires both lo and hi");
      d.mode = objective::PoseMode::per_joint_uniform;
      d.lo = read_joint_list(*lo, path + ".lo");
      d.hi = read_joint_list(*hi, path + ".hi");
    }
  } else if (mode == "keyframe_interp") {
    d.mode = objective::PoseMode::keyframe_interp;
    const json* k = r.find("keyframes");
    if (k == nullptr || !k->is_array()) throw ConfigError(path + ".keyframes: expected an array of poses");
    for (std::size_t i = 0; i < k->size(); ++i) d.keyframes.push_back(read_joint_list((*k)[i], fmt::format("{}.keyframes[{}]", path, i)));
    if (d.keyframes.size() < 2) throw ConfigError(path + ".keyframes: at least 2 keyframes required");
  } else {
    throw ConfigError(fmt::format("{}.mode: unknown pose mode '{}'", path, mode));
  }
  r.finish();
  return d;
}

inline json to_json(const Vec3d& v) { return json::array({v.x(), v.y(), v.z()}); }
inline json to_json(const objective::Range& r) { return json::array({r.lo, r.hi}); }
inline json to_json(const Resolution& r) { return json::array({r.height, r.width}); }
inline json to_json(const GroupSettings& g) { return {{"lr", g.lr}, {"enabled", g.enabled}, {"clip", g.clip}}; }
inline json to_json(const std::vector<Vec3d>& list) {
  json a = json::array();
  for (const auto& v : list) a.push_back(to_json(v));
  return a;
}

}  // namespace detail

inline void check_resolution(const Resolution& r, const std::string& path) {
  if (r.height < 8 || r.width < 8) throw ConfigError(fmt::format("{}: resolution {}x{} below 8x8", path, r.height, r.width));
}

/// Parses and validates a run configuration. Every key not documented here is
/// rejected with its path.
inline RunConfig parse_config(std::string_view text) {
  using detail::ObjectReader;
  const json root = detail::parse_strict_json(text);
  ObjectReader r(root, "");
  RunConfig c;

  if (const json* m = r.find("model")) {
    ObjectReader mr(*m, "model");
    c.model.path = mr.get("path", c.model.path);
    c.model.segments = mr.get("segments", c.model.segments);
    c.model.shape_components = mr.get("shape_components", c.model.shape_components);
    mr.finish();
    if (c.model.path.empty()) {
      if (c.model.segments < 1) throw ConfigError("model.segments: must be >= 1");
      if (c.model.shape_components < 0 || c.model.shape_components > 4) {
        throw ConfigError("model.shape_components: must be in [0, 4]");
      }
    }
  }

  c.cameras["default"] = objective::CameraDist{};
  if (const json* cams = r.find("cameras")) {
    if (!cams->is_object()) throw ConfigError("cameras: expected an object of named distributions");
    for (auto it = cams->begin(); it != cams->end(); ++it) {
      c.cameras[it.key()] = detail::read_camera(it.value(), "cameras." + it.key());
    }
  }

  const json* prompts = r.find("prompts");
  if (prompts == nullptr || !prompts->is_array() || prompts->empty()) {
    throw ConfigError("prompts: expected a nonempty array");
  }
  for (std::size_t i = 0; i < prompts->size(); ++i) {
    const std::string path = fmt::format("prompts[{}]", i);
    ObjectReader pr((*prompts)[i], path);
    objective::PromptSpec p;
    p.text = pr.require<std::string>("text");
    p.camera = pr.get("camera", p.camera);
    p.textured = pr.get("textured", p.textured);
    p.weight = pr.get("weight", p.weight);
    pr.finish();
    if (!(p.weight >= 0) || !std::isfinite(p.weight)) throw ConfigError(path + ".weight: must be finite and >= 0");
    if (!c.cameras.count(p.camera)) {
      throw ConfigError(fmt::format("{}.camera: no camera distribution named '{}'", path, p.camera));
    }
    c.prompts.push_back(std::move(p));
  }

  if (const json* p = r.find("pose")) c.pose = detail::read_pose(*p, "pose", c.model);

  if (const json* s = r.find("scorer")) {
    ObjectReader sr(*s, "scorer");
    c.scorer.type = sr.get("type", c.scorer.type);
    if (c.scorer.type == "random_projection") {
      c.scorer.embed_dim = sr.get("embed_dim", c.scorer.embed_dim);
      c.scorer.seed = sr.get("seed", c.scorer.seed);
      if (c.scorer.embed_dim < 1) throw ConfigError("scorer.embed_dim: must be >= 1");
    } else if (c.scorer.type == "target_image") {
      const json* t = sr.find("targets");
      if (t == nullptr || !t->is_array() || t->empty()) throw ConfigError("scorer.targets: expected a nonempty array");
      for (std::size_t i = 0; i < t->size(); ++i) {
        c.scorer.targets.push_back(ObjectReader::convert<std::string>((*t)[i], fmt::format("scorer.targets[{}]", i)));
      }
      if (c.scorer.targets.size() != 1 && c.scorer.targets.size() != c.prompts.size()) {
        throw ConfigError(fmt::format("scorer.targets: {} targets for {} prompts", c.scorer.targets.size(),
                                      c.prompts.size()));
      }
    } else if (c.scorer.type == "remote") {
      c.scorer.endpoint = sr.get("endpoint", c.scorer.endpoint);
      c.scorer.timeout_s = sr.get("timeout_s", c.scorer.timeout_s);
      c.scorer.max_attempts = sr.get("max_attempts", c.scorer.max_attempts);
      c.scorer.backoff_s = sr.get("backoff_s", c.scorer.backoff_s);
      if (!(c.scorer.timeout_s > 0)) throw ConfigError("scorer.timeout_s: must be > 0");
      if (c.scorer.max_attempts < 1) throw ConfigError("scorer.max_attempts: must be >= 1");
      if (!(c.scorer.backoff_s >= 0)) throw ConfigError("scorer.backoff_s: must be >= 0");
    } else {
      throw ConfigError(fmt::format("scorer.type: unknown scorer '{}'", c.scorer.type));
    }
    sr.finish();
  }

  if (const json* g = r.find("regularization")) {
    ObjectReader gr(*g, "regularization");
    c.reg.lambda = gr.get("lambda", c.reg.lambda);
    c.reg.laplacian = gr.get("laplacian", c.reg.laplacian);
    c.reg.edge = gr.get("edge", c.reg.edge);
    c.reg.normal = gr.get("normal", c.reg.normal);
    gr.finish();
    c.reg.validate();
  }

  if (const json* o = r.find("optim")) {
    ObjectReader orr(*o, "optim");
    c.optim.max_steps = orr.get("max_steps", c.optim.max_steps);
    c.optim.batch = orr.get("batch", c.optim.batch);
    if (const json* groups = orr.find("groups")) {
      ObjectReader gr(*groups, "optim.groups");
      c.optim.texture = detail::read_group(gr, "texture", c.optim.texture);
      c.optim.delta = detail::read_group(gr, "delta", c.optim.delta);
      c.optim.beta = detail::read_group(gr, "beta", c.optim.beta);
      c.optim.light = detail::read_group(gr, "light", c.optim.light);
      c.optim.material = detail::read_group(gr, "material", c.optim.material);
      gr.finish();
    }
    orr.finish();
    if (c.optim.max_steps < 0) throw ConfigError("optim.max_steps: must be >= 0");
    if (c.optim.batch < 1) throw ConfigError("optim.batch: must be >= 1");
  }

  if (const json* rd = r.find("render")) {
    ObjectReader rr(*rd, "render");
    auto& s = c.render;
    s.train = rr.get("train_resolution", s.train);
    s.inference = rr.get("inference_resolution", s.inference);
    s.texture = rr.get("texture_resolution", s.texture);
    s.raster.sigma = rr.get("sigma", s.raster.sigma);
    s.raster.gamma = rr.get("gamma", s.raster.gamma);
    s.raster.faces_per_pixel = rr.get("faces_per_pixel", s.raster.faces_per_pixel);
    s.raster.background = rr.get("background", s.raster.background);
    s.near_clip = rr.get("near", s.near_clip);
    s.far_clip = rr.get("far", s.far_clip);
    s.light_material_mode = rr.get("light_material_mode", s.light_material_mode);
    if (const json* l = rr.find("light")) s.initial_light = detail::read_light(*l, "render.light");
    if (const json* m = rr.find("material")) s.initial_material = detail::read_material(*m, "render.material");
    rr.finish();
    check_resolution(s.train, "render.train_resolution");
    check_resolution(s.inference, "render.inference_resolution");
    if (s.texture.height < 2 || s.texture.width < 2) throw ConfigError("render.texture_resolution: must be at least 2x2");
    try {
      s.raster.validate();
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("render.") + e.what());
    }
    if (!(s.near_clip > 0 && s.near_clip < s.far_clip)) throw ConfigError("render.near/far: require 0 < near < far");
    if (s.light_material_mode != "global" && s.light_material_mode != "per_prompt") {
      throw ConfigError(fmt::format("render.light_material_mode: expected 'global' or 'per_prompt', got '{}'",
                                    s.light_material_mode));
    }
  }

  if (const json* o = r.find("output")) {
    ObjectReader orr(*o, "output");
    c.output.dir = orr.get("dir", c.output.dir);
    c.output.snapshot_every = orr.get("snapshot_every", c.output.snapshot_every);
    c.output.checkpoint_every = orr.get("checkpoint_every", c.output.checkpoint_every);
    orr.finish();
    if (c.output.snapshot_every < 0) throw ConfigError("output.snapshot_every: must be >= 0");
    if (c.output.checkpoint_every < 0) throw ConfigError("output.checkpoint_every: must be >= 0");
  }

  c.seed = r.get("seed", c.seed);
  r.finish();
  return c;
}

inline json config_to_json(const RunConfig& c) {
  using detail::to_json;
  json j;
  j["model"] = {{"path", c.model.path}, {"segments", c.model.segments}, {"shape_components", c.model.shape_components}};
  j["prompts"] = json::array();
  for (const auto& p : c.prompts) {
    j["prompts"].push_back({{"text", p.text}, {"camera", p.camera}, {"textured", p.textured}, {"weight", p.weight}});
  }
  j["cameras"] = json::object();
  for (const auto& [name, d] : c.cameras) {
    json cj;
    if (d.mode == objective::CameraMode::orbit) {
      cj = {{"mode", "orbit"}, {"azimuth", to_json(d.azimuth)}, {"elevation", to_json(d.elevation)},
            {"radius", to_json(d.radius)}, {"look_at", d.look_at}};
    } else {
      cj = {{"mode", "part_grid"}, {"group", d.group}, {"rows", d.rows}, {"cols", d.cols},
            {"spread", d.spread}, {"zoom_radius", d.zoom_radius}};
    }
    cj["fov"] = to_json(d.fov);
    j["cameras"][name] = cj;
  }
  switch (c.pose.mode) {
    case objective::PoseMode::rest:
      j["pose"] = {{"mode", "rest"}};
      break;
    case objective::PoseMode::per_joint_uniform:
      j["pose"] = {{"mode", "per_joint_uniform"}, {"lo", to_json(c.pose.lo)}, {"hi", to_json(c.pose.hi)}};
      break;
    case objective::PoseMode::keyframe_interp: {
      json k = json::array();
      for (const auto& f : c.pose.keyframes) k.push_back(to_json(f));
      j["pose"] = {{"mode", "keyframe_interp"}, {"keyframes", k}};
      break;
    }
  }
  const auto& s = c.scorer;
  if (s.type == "random_projection") {
    j["scorer"] = {{"type", s.type}, {"embed_dim", s.embed_dim}, {"seed", s.seed}};
  } else if (s.type == "target_image") {
    j["scorer"] = {{"type", s.type}, {"targets", s.targets}};
  } else {
    j["scorer"] = {{"type", s.type}, {"endpoint", s.endpoint}, {"timeout_s", s.timeout_s},
                   {"max_attempts", s.max_attempts}, {"backoff_s", s.backoff_s}};
  }
  j["regularization"] = {{"lambda", c.reg.lambda}, {"laplacian", c.reg.laplacian}, {"edge", c.reg.edge},
                         {"normal", c.reg.normal}};
  j["optim"] = {{"max_steps", c.optim.max_steps},
                {"batch", c.optim.batch},
                {"groups",
                 {{"texture", to_json(c.optim.texture)},
                  {"delta", to_json(c.optim.delta)},
                  {"beta", to_json(c.optim.beta)},
                  {"light", to_json(c.optim.light)},
                  {"material", to_json(c.optim.material)}}}};
  const auto& r = c.render;
  j["render"] = {{"train_resolution", to_json(r.train)},
                 {"inference_resolution", to_json(r.inference)},
                 {"texture_resolution", to_json(r.texture)},
                 {"sigma", r.raster.sigma},
                 {"gamma", r.raster.gamma},
                 {"faces_per_pixel", r.raster.faces_per_pixel},
                 {"background", to_json(r.raster.background)},
                 {"near", r.near_clip},
                 {"far", r.far_clip},
                 {"light_material_mode", r.light_material_mode},
                 {"light",
                  {{"direction", to_json(r.initial_light.direction)},
                   {"ambient", to_json(r.initial_light.ambient)},
                   {"diffuse", to_json(r.initial_light.diffuse)},
                   {"specular", to_json(r.initial_light.specular)}}},
                 {"material",
                  {{"ambient", to_json(r.initial_material.ambient)},
                   {"diffuse", to_json(r.initial_material.diffuse)},
                   {"specular", to_json(r.initial_material.specular)},
                   {"shininess", r.initial_material.shininess}}}};
  j["output"] = {{"dir", c.output.dir},
                 {"snapshot_every", c.output.snapshot_every},
                 {"checkpoint_every", c.output.checkpoint_every}};
  j["seed"] = c.seed;
  return j;
}

inline std::string serialize_config(const RunConfig& c) { return config_to_json(c).dump(2) + "\n"; }

/// The parts of a config that determine the optimization trajectory: output
/// location and step budget are dropped so that resumed and fresh runs agree.
inline json trajectory_config(const RunConfig& c) {
  RunConfig t = c;
  t.output = OutputSettings{};
  t.optim.max_steps = 0;
  return config_to_json(t);
}

inline std::uint64_t config_hash(const RunConfig& c) { return fnv1a(trajectory_config(c).dump()); }

inline RunConfig load_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const IoError& e) {
    throw ConfigError(fmt::format("cannot read config '{}': {}", path.string(), e.what()));
  }
  return parse_config(text);
}

/// Cross-references that need the model: vertex groups and pose dimensions.
inline void validate_against_model(const RunConfig& c, const body::TemplateModel<double>& model) {
  for (const auto& [name, d] : c.cameras) {
    const std::string group = d.referenced_group();
    if (!group.empty() && !model.vertex_groups.count(group)) {
      const char* key = d.mode == objective::CameraMode::part_grid ? "group" : "look_at";
      throw ConfigError(fmt::format("cameras.{}.{}: vertex group '{}' not in model", name, key, group));
    }
  }
  try {
    c.pose.validate(model.joint_count());
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("pose: ") + e.what());
  }
}

}  // namespace clipmatrix::io
