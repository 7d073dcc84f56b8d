#include "clipmatrix/objective/remote_scorer.hpp"
#include "clipmatrix/optim/run.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <atomic>
#include <cstring>
#include <thread>

namespace cm = clipmatrix;
namespace obj = clipmatrix::objective;
using nlohmann::json;

namespace {

const char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

std::string b64_encode(const std::string& in) {
  std::string out;
  std::size_t i = 0;
  for (; i + 2 < in.size(); i += 3) {
    const unsigned n = (static_cast<unsigned char>(in[i]) << 16) | (static_cast<unsigned char>(in[i + 1]) << 8) |
                       static_cast<unsigned char>(in[i + 2]);
    for (int s = 18; s >= 0; s -= 6) out += kAlphabet[(n >> s) & 63];
  }
  if (i < in.size()) {
    unsigned n = static_cast<unsigned char>(in[i]) << 16;
    if (i + 1 < in.size()) n |= static_cast<unsigned char>(in[i + 1]) << 8;
    out += kAlphabet[(n >> 18) & 63];
    out += kAlphabet[(n >> 12) & 63];
    out += i + 1 < in.size() ? kAlphabet[(n >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

std::string b64_decode(const std::string& in) {
  std::string out;
  unsigned buf = 0;
  int bits = 0;
  for (char ch : in) {
    if (ch == '=') break;
    buf = (buf << 6) | static_cast<unsigned>(std::strchr(kAlphabet, ch) - kAlphabet);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out += static_cast<char>((buf >> bits) & 0xff);
    }
  }
  return out;
}

std::vector<float> floats_of(const std::string& bytes) {
  std::vector<float> v(bytes.size() / 4);
  std::memcpy(v.data(), bytes.data(), bytes.size());  // little-endian host
  return v;
}

std::string bytes_of(const std::vector<float>& v) {
  std::string s(v.size() * 4, '\0');
  std::memcpy(s.data(), v.data(), s.size());
  return s;
}

/// In-process stand-in for the embedding service. Loss per image is the mean
/// pixel value; its gradient is the constant 1/(H*W*3).
class MockService {
 public:
  std::atomic<int> score_calls{0};
  std::atomic<int> prompt_calls{0};
  std::atomic<int> fail_first{0};    // score calls answered with 503 before succeeding
  std::atomic<int> fail_after{-1};   // score calls answered normally before 503 forever
  std::atomic<bool> reject{false};   // answer score calls with 400
  json last_score_request;

  MockService() {
    server_.Post("/v1/prompts", [this](const httplib::Request& req, httplib::Response& res) {
      ++prompt_calls;
      const auto body = json::parse(req.body);
      json ids = json::array();
      for (std::size_t i = 0; i < body.at("texts").size(); ++i) ids.push_back(fmt::format("id{}", i));
      res.set_content(json{{"ids", ids}, {"dim", 4}}.dump(), "application/json");
    });
    server_.Get("/v1/health", [](const httplib::Request&, httplib::Response& res) {
      res.set_content(R"({"version": "1", "model": "mock-embedder", "dim": 4})", "application/json");
    });
    server_.Post("/v1/score", [this](const httplib::Request& req, httplib::Response& res) {
      const int call = score_calls++;
      if (reject) {
        res.status = 400;
        res.set_content(R"({"error": "unknown prompt id"})", "application/json");
        return;
      }
      if (call < fail_first || (fail_after >= 0 && call >= fail_after)) {
        res.status = 503;
        return;
      }
      const auto body = json::parse(req.body);
      last_score_request = body;
      json losses = json::array(), grads = json::array();
      for (const auto& img : body.at("images")) {
        const auto values = floats_of(b64_decode(img.at("data").get<std::string>()));
        double sum = 0;
        for (float v : values) sum += v;
        losses.push_back(json::array({sum / static_cast<double>(values.size())}));
        grads.push_back(b64_encode(bytes_of(std::vector<float>(values.size(), 1.0f / static_cast<float>(values.size())))));
      }
      res.set_content(json{{"losses", losses}, {"grads", grads}}.dump(), "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  ~MockService() {
    server_.stop();
    thread_.join();
  }

  std::string url() const { return fmt::format("http://127.0.0.1:{}", port_); }

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

obj::RemoteScorerOptions fast_options(const std::string& url, int attempts = 4) {
  return {url, 5.0, attempts, 0.01};
}

int unused_port() {
  httplib::Server probe;
  const int port = probe.bind_to_any_port("127.0.0.1");
  return port;  // released when probe goes out of scope
}

}  // namespace

TEST(Base64, MatchesReferenceEncoder) {
  cm::Rng rng(1);
  for (std::size_t n = 0; n < 40; ++n) {
    std::string bytes(n, '\0');
    for (auto& b : bytes) b = static_cast<char>(rng() & 0xff);
    EXPECT_EQ(obj::base64_encode(bytes), b64_encode(bytes)) << n;
    EXPECT_EQ(obj::base64_decode(b64_encode(bytes)), bytes) << n;
  }
  EXPECT_THROW(obj::base64_decode("abc"), cm::ScorerError);
}

TEST(RemoteScorer, RegistersAndScores) {
  MockService service;
  obj::RemoteScorer scorer(fast_options(service.url()));
  scorer.register_prompts({"a knight", "a robot"});
  EXPECT_EQ(scorer.embed_dim(), 4);
  EXPECT_EQ(scorer.model_id(), "mock-embedder");

  cm::Image a(3, 5, 0.25), b(3, 5, 0.75);
  a.at(1, 2, 0) = 0.5;
  const std::vector<cm::Image> images{a, b};
  const auto r = scorer.score(images, 1);
  ASSERT_EQ(r.losses.size(), 2u);
  EXPECT_NEAR(r.losses[0], (0.25 * 44 + 0.5) / 45, 1e-7);
  EXPECT_NEAR(r.losses[1], 0.75, 1e-7);
  for (double g : r.grads[1].values) EXPECT_NEAR(g, 1.0 / 45, 1e-9);

  const auto& req = service.last_score_request;
  EXPECT_EQ(req.at("ids"), json::array({"id1"}));
  EXPECT_EQ(req.at("images")[0].at("h"), 3);
  EXPECT_EQ(req.at("images")[0].at("w"), 5);
  const auto sent = floats_of(b64_decode(req.at("images")[0].at("data").get<std::string>()));
  ASSERT_EQ(sent.size(), 45u);
  EXPECT_EQ(sent[(1 * 5 + 2) * 3 + 0], 0.5f);
  EXPECT_EQ(sent[0], 0.25f);
}

TEST(RemoteScorer, EndpointPathPrefixIsKept) {
  MockService service;
  obj::RemoteScorer scorer(fast_options(service.url() + "/"));
  EXPECT_NO_THROW(scorer.register_prompts({"x"}));
}

TEST(RemoteScorer, RetriesWhileServiceIsLoading) {
  MockService service;
  service.fail_first = 2;
  obj::RemoteScorer scorer(fast_options(service.url()));
  scorer.register_prompts({"x"});
  const cm::Image img(2, 2, 0.5);
  const auto r = scorer.score(std::span<const cm::Image>(&img, 1), 0);
  EXPECT_NEAR(r.losses[0], 0.5, 1e-7);
  EXPECT_EQ(service.score_calls.load(), 3);
}

TEST(RemoteScorer, RequestFaultIsNotRetried) {
  MockService service;
  service.reject = true;
  obj::RemoteScorer scorer(fast_options(service.url()));
  scorer.register_prompts({"x"});
  const cm::Image img(2, 2, 0.5);
  try {
    scorer.score(std::span<const cm::Image>(&img, 1), 0);
    FAIL();
  } catch (const cm::ScorerUnavailable&) {
    FAIL() << "a 400 reply must not be reported as unavailability";
  } catch (const cm::ScorerError& e) {
    EXPECT_NE(std::string(e.what()).find("unknown prompt id"), std::string::npos) << e.what();
  }
  EXPECT_EQ(service.score_calls.load(), 1);
}

TEST(RemoteScorer, PersistentOverloadGivesUp) {
  MockService service;
  service.fail_first = 1000;
  obj::RemoteScorer scorer(fast_options(service.url(), 3));
  scorer.register_prompts({"x"});
  const cm::Image img(2, 2, 0.5);
  EXPECT_THROW(scorer.score(std::span<const cm::Image>(&img, 1), 0), cm::ScorerUnavailable);
  EXPECT_EQ(service.score_calls.load(), 3);
}

TEST(RemoteScorer, UnreachableEndpointIsUnavailable) {
  const auto url = fmt::format("http://127.0.0.1:{}", unused_port());
  obj::RemoteScorer scorer({url, 1.0, 3, 0.05});
  const auto start = std::chrono::steady_clock::now();
  EXPECT_THROW(scorer.register_prompts({"x"}), cm::ScorerUnavailable);
  const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  EXPECT_GE(elapsed, 0.05 + 0.1);  // two backoff waits, doubling
}

TEST(RemoteScorer, RunKeepsResumableCheckpointWhenServiceDisappears) {
  MockService service;
  service.fail_after = 3;  // one prompt, batch 1: three successful steps
  cm::testing::TempDir dir;
  auto config = cm::io::parse_config(fmt::format(
      R"({{"model": {{"segments": 1}}, "prompts": [{{"text": "x"}}],
          "scorer": {{"type": "remote", "endpoint": "{}", "max_attempts": 2, "backoff_s": 0.01}},
          "optim": {{"max_steps": 10, "batch": 1}},
          "render": {{"train_resolution": [16, 16], "texture_resolution": [4, 4]}},
          "output": {{"dir": "{}", "snapshot_every": 0, "checkpoint_every": 100}}}})",
      service.url(), (dir / "out").string()));
  auto scorer = cm::optim::make_scorer(config.scorer);
  EXPECT_THROW(cm::optim::run_optimization(config, *scorer), cm::ScorerUnavailable);
  const auto ck = cm::optim::load_checkpoint(dir / "out/checkpoints/latest.mmc");
  EXPECT_EQ(ck.state.step, 3u);
  EXPECT_TRUE(std::filesystem::exists(dir / "out/checkpoints/step_000003.mmc"));
}
