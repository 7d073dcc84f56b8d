#pragma once

#include "clipmatrix/io/binary.hpp"
#include "clipmatrix/objective/scorer.hpp"

#include <httplib.h>
#include <json.hpp>
#include <openssl/evp.h>

#include <chrono>
#include <thread>

namespace clipmatrix::objective {

/// Base64 helpers for the scorer wire format (backed by OpenSSL's EVP codec).
inline std::string base64_encode(std::string_view bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(bytes.data()), static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

inline std::string base64_decode(std::string_view text) {
  if (text.size() % 4 != 0) throw ScorerError("base64: length is not a multiple of 4");
  std::string out(3 * (text.size() / 4), '\0');
  const int n = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(text.data()), static_cast<int>(text.size()));
  if (n < 0) throw ScorerError("base64: invalid input");
  std::size_t padding = 0;
  if (!text.empty() && text.back() == '=') ++padding;
  if (text.size() > 1 && text[text.size() - 2] == '=') ++padding;
  out.resize(static_cast<std::size_t>(n) - padding);
  return out;
}

/// H*W*3 little-endian float32 values, row-major, RGB interleaved.
inline std::string encode_image_f32(const RgbGrid& img) {
  std::string bytes;
  bytes.reserve(img.values.size() * 4);
  for (double v : img.values) io::append_f32(bytes, static_cast<float>(v));
  return base64_encode(bytes);
}

inline RgbGrid decode_image_f32(std::string_view text, int height, int width) {
  const std::string bytes = base64_decode(text);
  RgbGrid img(height, width);
  if (bytes.size() != img.values.size() * 4) {
    throw ScorerError(fmt::format("image payload has {} bytes, expected {}", bytes.size(), img.values.size() * 4));
  }
  for (std::size_t i = 0; i < img.values.size(); ++i) img.values[i] = io::read_f32(bytes.data() + 4 * i);
  return img;
}

struct RemoteScorerOptions {
  std::string endpoint;     // e.g. http://127.0.0.1:8080
  double timeout_s = 60.0;  // per request
  int max_attempts = 4;
  double backoff_s = 0.5;   // doubled after every failed attempt
};

/// Client for an external embedding service (POST /v1/prompts, POST /v1/score,
/// GET /v1/health). Transport failures and 503 responses are retried; request
/// faults (4xx) are not.
class RemoteScorer final : public Scorer {
 public:
  explicit RemoteScorer(RemoteScorerOptions options) : options_(std::move(options)) {
    if (options_.endpoint.empty()) throw ConfigError("scorer.endpoint: empty URL");
    if (options_.max_attempts < 1) throw ConfigError("scorer.max_attempts: must be >= 1");
    const auto scheme = options_.endpoint.find("://");
    const auto path_start = options_.endpoint.find('/', scheme == std::string::npos ? 0 : scheme + 3);
    host_ = options_.endpoint.substr(0, path_start);
    if (path_start != std::string::npos) prefix_ = options_.endpoint.substr(path_start);
    while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
  }

  nlohmann::json health() { return request("GET", "/v1/health", nullptr); }

  void register_prompts(const std::vector<std::string>& texts) override {
    if (texts.empty()) throw ConfigError("prompts: at least one prompt required");
    nlohmann::json body = {{"texts", texts}};
    const auto reply = request("POST", "/v1/prompts", &body);
    try {
      ids_ = reply.at("ids").get<std::vector<nlohmann::json>>();
      dim_ = reply.at("dim").get<int>();
    } catch (const nlohmann::json::exception& e) {
      throw ScorerError(std::string("/v1/prompts: malformed reply: ") + e.what());
    }
    if (ids_.size() != texts.size()) throw ScorerError("/v1/prompts: id count does not match prompt count");
    try {
      model_ = health().value("model", "remote");
    } catch (const ScorerError&) {
      model_ = "remote";
    }
  }

  ScoreResult score(std::span<const Image> images, std::size_t prompt) override {
    if (prompt >= ids_.size()) throw ScorerError(fmt::format("remote: prompt {} was not registered", prompt));
    nlohmann::json body;
    body["ids"] = nlohmann::json::array({ids_[prompt]});
    body["images"] = nlohmann::json::array();
    for (const Image& img : images) {
      body["images"].push_back({{"h", img.height}, {"w", img.width}, {"data", encode_image_f32(img)}});
    }
    const auto reply = request("POST", "/v1/score", &body);
    ScoreResult out;
    try {
      const auto& losses = reply.at("losses");
      const auto& grads = reply.at("grads");
      if (losses.size() != images.size() || grads.size() != images.size()) {
        throw ScorerError("/v1/score: reply does not cover every image");
      }
      for (std::size_t i = 0; i < images.size(); ++i) {
        out.losses.push_back(losses[i].at(0).get<double>());
        out.grads.push_back(decode_image_f32(grads[i].get<std::string>(), images[i].height, images[i].width));
      }
    } catch (const nlohmann::json::exception& e) {
      throw ScorerError(std::string("/v1/score: malformed reply: ") + e.what());
    }
    for (const auto& g : out.grads) {
      for (double v : g.values) {
        if (!std::isfinite(v)) throw ScorerError("/v1/score: non-finite gradient");
      }
    }
    return out;
  }

  std::string model_id() const override { return model_.empty() ? "remote" : model_; }
  int embed_dim() const { return dim_; }

 private:
  nlohmann::json request(const char* method, const std::string& path, const nlohmann::json* body) {
    httplib::Client client(host_);
    const auto timeout = std::chrono::duration<double>(options_.timeout_s);
    client.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
    client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
    client.set_write_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));

    double wait = options_.backoff_s;
    std::string last_error;
    for (int attempt = 1; attempt <= options_.max_attempts; ++attempt) {
      httplib::Result res = std::string(method) == "GET"
                                ? client.Get(prefix_ + path)
                                : client.Post(prefix_ + path, body->dump(), "application/json");
      if (!res) {
        last_error = httplib::to_string(res.error());
      } else if (res->status == 503 || res->status >= 500) {
        last_error = fmt::format("HTTP {}", res->status);
      } else if (res->status != 200) {
        std::string detail = res->body;
        try {
          detail = nlohmann::json::parse(res->body).value("error", res->body);
        } catch (const nlohmann::json::exception&) {
        }
        throw ScorerError(fmt::format("{} {}: HTTP {}: {}", method, path, res->status, detail));
      } else {
        try {
          return nlohmann::json::parse(res->body);
        } catch (const nlohmann::json::exception& e) {
          throw ScorerError(fmt::format("{} {}: reply is not JSON: {}", method, path, e.what()));
        }
      }
      if (attempt < options_.max_attempts) {
        std::this_thread::sleep_for(std::chrono::duration<double>(wait));
        wait *= 2;
      }
    }
    throw ScorerUnavailable(fmt::format("scorer at {} unreachable after {} attempts ({})", options_.endpoint,
                                        options_.max_attempts, last_error));
  }

  RemoteScorerOptions options_;
  std::string host_;
  std::string prefix_;
  std::vector<nlohmann::json> ids_;
  int dim_ = 0;
  std::string model_;
};

}  // namespace clipmatrix::objective
