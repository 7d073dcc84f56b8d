#pragma once

#include "clipmatrix/io/binary.hpp"
#include "clipmatrix/optim/adam.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include <filesystem>
#include <string>

namespace clipmatrix::optim {

inline constexpr std::string_view kCheckpointMagic = "MMC1";
inline constexpr int kCheckpointVersion = 1;

/// Everything needed to continue (or render) a run. The random stream is
/// fully determined by (seed, step), so no generator state is stored.
struct Checkpoint {
  ParamGroups params;
  OptState state;
  std::uint64_t config_hash = 0;
  nlohmann::json config = nlohmann::json::object();  // trajectory-relevant run config
  std::string scorer_model;

  bool operator==(const Checkpoint&) const = default;
};

inline std::string serialize_checkpoint(const Checkpoint& ck) {
  io::PayloadWriter payload;
  nlohmann::json groups = nlohmann::json::array();
  for (const auto& g : ck.params.groups) {
    payload.add_f32(g.name + ".value", g.value);
    payload.add_f32(g.name + ".m", g.m);
    payload.add_f32(g.name + ".v", g.v);
    groups.push_back({{"name", g.name}, {"count", g.size()}, {"lr", g.lr}, {"enabled", g.enabled}, {"clip", g.clip}});
  }
  nlohmann::json h;
  h["format"] = std::string(kCheckpointMagic);
  h["version"] = kCheckpointVersion;
  h["step"] = ck.state.step;
  h["seed"] = ck.state.seed;
  h["adam"] = {{"beta1", ck.state.adam.beta1}, {"beta2", ck.state.adam.beta2}, {"eps", ck.state.adam.eps}};
  h["config_hash"] = fmt::format("{:016x}", ck.config_hash);
  h["config"] = ck.config;
  h["scorer_model"] = ck.scorer_model;
  h["texture"] = {{"height", ck.params.texture_height}, {"width", ck.params.texture_width}};
  h["groups"] = groups;
  h["fields"] = payload.fields();
  h["payload_bytes"] = payload.payload().size();
  h["payload_fnv1a"] = fmt::format("{:016x}", fnv1a(payload.payload()));
  return io::assemble_container(kCheckpointMagic, h, payload.payload());
}

/// Decodes an MMC1 file. Any inconsistency raises LoadError; nothing partial is returned.
inline Checkpoint parse_checkpoint(std::string bytes) {
  const io::Container c = io::parse_container(std::move(bytes), kCheckpointMagic);
  const auto& h = c.header;
  Checkpoint ck;
  try {
    const int version = h.at("version").get<int>();
    if (version != kCheckpointVersion) {
      throw LoadError(fmt::format("header.version: {} is not supported (expected {})", version, kCheckpointVersion));
    }
    const auto declared = h.at("payload_bytes").get<std::size_t>();
    if (c.payload_size() != declared) {
      throw LoadError(fmt::format("payload: {} bytes, header declares {} (truncated?)", c.payload_size(), declared));
    }
    const std::string_view payload(c.bytes.data() + c.payload_start, c.payload_size());
    if (h.at("payload_fnv1a").get<std::string>() != fmt::format("{:016x}", fnv1a(payload))) {
      throw LoadError("payload: checksum mismatch (corrupted file)");
    }
    ck.state.step = h.at("step").get<std::uint64_t>();
    ck.state.seed = h.at("seed").get<std::uint64_t>();
    const auto& adam = h.at("adam");
    ck.state.adam = {adam.at("beta1").get<double>(), adam.at("beta2").get<double>(), adam.at("eps").get<double>()};
    ck.config_hash = std::stoull(h.at("config_hash").get<std::string>(), nullptr, 16);
    ck.config = h.at("config");
    ck.scorer_model = h.at("scorer_model").get<std::string>();
    ck.params.texture_height = h.at("texture").at("height").get<int>();
    ck.params.texture_width = h.at("texture").at("width").get<int>();
    const auto& groups = h.at("groups");
    if (!groups.is_array() || groups.size() != kGroupCount) throw LoadError("header.groups: expected 5 groups");
    for (std::size_t g = 0; g < kGroupCount; ++g) {
      const auto& gj = groups[g];
      ParamGroup& group = ck.params.groups[g];
      group.name = gj.at("name").get<std::string>();
      if (group.name != kGroupNames[g]) {
        throw LoadError(fmt::format("header.groups[{}]: expected '{}', found '{}'", g, kGroupNames[g], group.name));
      }
      const auto count = gj.at("count").get<std::size_t>();
      group.lr = gj.at("lr").get<double>();
      group.enabled = gj.at("enabled").get<bool>();
      group.clip = gj.at("clip").get<double>();
      group.value = c.f32_raw(group.name + ".value", count);
      group.m = c.f32_raw(group.name + ".m", count);
      group.v = c.f32_raw(group.name + ".v", count);
    }
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("checkpoint header: ") + e.what());
  } catch (const std::invalid_argument&) {
    throw LoadError("checkpoint header: config_hash is not hexadecimal");
  } catch (const std::out_of_range&) {
    throw LoadError("checkpoint header: config_hash out of range");
  }
  const std::size_t texels = static_cast<std::size_t>(ck.params.texture_height) * ck.params.texture_width * 3;
  if (ck.params[kTexture].size() != texels) throw LoadError("texture: logits do not match the declared resolution");
  if (ck.params[kDelta].size() % 3 != 0) throw LoadError("delta: size is not a multiple of 3");
  if (ck.params[kLight].size() % kLightBlock != 0 || ck.params[kMaterial].size() % kMaterialBlock != 0 ||
      ck.params.light_blocks() != ck.params.material_blocks() || ck.params.light_blocks() == 0) {
    throw LoadError("light/material: inconsistent block sizes");
  }
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  io::write_file_atomic(path, serialize_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::string bytes = io::read_file(path);
  try {
    return parse_checkpoint(std::move(bytes));
  } catch (const LoadError& e) {
    throw LoadError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

}  // namespace clipmatrix::optim
