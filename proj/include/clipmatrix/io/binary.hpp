#pragma once

#include "clipmatrix/common.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

namespace clipmatrix::io {

// Container layout shared by the MMX1 model and MMC1 checkpoint formats:
//   4-byte magic | u32 LE header length | UTF-8 JSON header | payload
// Payload arrays are little-endian and live at header-declared byte offsets
// relative to the start of the payload.

inline void append_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

inline std::uint32_t read_u32(const char* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}

inline void append_f32(std::string& out, float f) { append_u32(out, std::bit_cast<std::uint32_t>(f)); }

inline float read_f32(const char* p) { return std::bit_cast<float>(read_u32(p)); }

/// Accumulates typed arrays into a payload and records their offsets.
class PayloadWriter {
 public:
  template <typename Range>
  void add_f32(const std::string& name, const Range& values) {
    const std::size_t offset = payload_.size();
    std::size_t count = 0;
    for (auto v : values) {
      append_f32(payload_, static_cast<float>(v));
      ++count;
    }
    fields_[name] = {{"offset", offset}, {"count", count}, {"type", "f32"}};
  }

  template <typename Range>
  void add_u32(const std::string& name, const Range& values) {
    const std::size_t offset = payload_.size();
    std::size_t count = 0;
    for (auto v : values) {
      append_u32(payload_, static_cast<std::uint32_t>(v));
      ++count;
    }
    fields_[name] = {{"offset", offset}, {"count", count}, {"type", "u32"}};
  }

  const nlohmann::json& fields() const { return fields_; }
  const std::string& payload() const { return payload_; }

 private:
  nlohmann::json fields_ = nlohmann::json::object();
  std::string payload_;
};

inline std::string assemble_container(std::string_view magic, const nlohmann::json& header,
                                      const std::string& payload) {
  const std::string text = header.dump();
  std::string out;
  out.reserve(8 + text.size() + payload.size());
  out.append(magic);
  append_u32(out, static_cast<std::uint32_t>(text.size()));
  out.append(text);
  out.append(payload);
  return out;
}

/// Parsed container: header plus a view of the payload bytes.
struct Container {
  nlohmann::json header;
  std::string bytes;
  std::size_t payload_start = 0;

  std::size_t payload_size() const { return bytes.size() - payload_start; }

  std::vector<double> f32_array(const std::string& name, std::size_t expected_count) const {
    const auto& field = field_entry(name, "f32", expected_count);
    const std::size_t offset = field.at("offset").get<std::size_t>();
    std::vector<double> out(expected_count);
    const char* base = bytes.data() + payload_start + offset;
    for (std::size_t i = 0; i < expected_count; ++i) out[i] = read_f32(base + 4 * i);
    return out;
  }

  std::vector<float> f32_raw(const std::string& name, std::size_t expected_count) const {
    const auto& field = field_entry(name, "f32", expected_count);
    const std::size_t offset = field.at("offset").get<std::size_t>();
    std::vector<float> out(expected_count);
    const char* base = bytes.data() + payload_start + offset;
    for (std::size_t i = 0; i < expected_count; ++i) out[i] = read_f32(base + 4 * i);
    return out;
  }

  std::vector<std::uint32_t> u32_array(const std::string& name, std::size_t expected_count) const {
    const auto& field = field_entry(name, "u32", expected_count);
    const std::size_t offset = field.at("offset").get<std::size_t>();
    std::vector<std::uint32_t> out(expected_count);
    const char* base = bytes.data() + payload_start + offset;
    for (std::size_t i = 0; i < expected_count; ++i) out[i] = read_u32(base + 4 * i);
    return out;
  }

 private:
  const nlohmann::json& field_entry(const std::string& name, const char* type, std::size_t expected_count) const {
    const auto fields = header.find("fields");
    if (fields == header.end() || !fields->is_object() || !fields->contains(name)) {
      throw LoadError("fields." + name + ": missing from header");
    }
    const auto& field = fields->at(name);
    try {
      if (field.at("type").get<std::string>() != type) throw LoadError("fields." + name + ": wrong element type");
      const auto count = field.at("count").get<std::size_t>();
      const auto offset = field.at("offset").get<std::size_t>();
      if (count != expected_count) {
        throw LoadError("fields." + name + ": count " + std::to_string(count) + " does not match expected " +
                        std::to_string(expected_count));
      }
      if (offset > payload_size() || count * 4 > payload_size() - offset) {
        throw LoadError("fields." + name + ": extends past end of file (truncated?)");
      }
    } catch (const nlohmann::json::exception& e) {
      throw LoadError("fields." + name + ": " + e.what());
    }
    return field;
  }
};

inline Container parse_container(std::string bytes, std::string_view magic) {
  if (bytes.size() < magic.size() + 4 || std::string_view(bytes).substr(0, magic.size()) != magic) {
    throw LoadError("header: bad magic, expected " + std::string(magic));
  }
  const std::uint32_t header_len = read_u32(bytes.data() + magic.size());
  const std::size_t header_start = magic.size() + 4;
  if (header_len > bytes.size() - header_start) throw LoadError("header: truncated");
  Container c;
  try {
    c.header = nlohmann::json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(header_start),
                                     bytes.begin() + static_cast<std::ptrdiff_t>(header_start + header_len));
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("header: malformed JSON: ") + e.what());
  }
  if (!c.header.is_object()) throw LoadError("header: not a JSON object");
  c.payload_start = header_start + header_len;
  c.bytes = std::move(bytes);
  return c;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path.string());
  return data;
}

/// Writes to a temporary sibling and renames, so readers never see a partial file.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view data) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!out) throw IoError("write failed: " + path.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot write " + path.string() + ": " + ec.message());
}

}  // namespace clipmatrix::io
