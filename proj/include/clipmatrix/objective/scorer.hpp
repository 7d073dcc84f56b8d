#pragma once

#include "clipmatrix/common.hpp"

#include <fmt/format.h>

#include <cmath>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace clipmatrix::objective {

struct CosineLoss {
  double value = 0;
  std::vector<double> grad;  // d value / d a
};

/// -cos(a, b) and its gradient with respect to `a`.
inline CosineLoss cosine_loss(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ScorerError("cosine_loss: embedding sizes differ");
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (!(aa > 0) || !(bb > 0)) throw ScorerError("cosine_loss: zero-norm embedding");
  const double na = std::sqrt(aa), nb = std::sqrt(bb);
  const double cos = ab / (na * nb);
  CosineLoss out{-cos, std::vector<double>(a.size())};
  // d cos / d a = b / (|a||b|) - cos * a / |a|^2
  for (std::size_t i = 0; i < a.size(); ++i) out.grad[i] = -(b[i] / (na * nb) - cos * a[i] / aa);
  return out;
}

/// Per-image losses and exact d(loss_i)/d(image_i).
struct ScoreResult {
  std::vector<double> losses;
  std::vector<ImageGrad> grads;
};

/// Maps rendered images to losses against one registered prompt.
class Scorer {
 public:
  virtual ~Scorer() = default;
  /// Called once before scoring; prompt indices refer to positions in `texts`.
  virtual void register_prompts(const std::vector<std::string>& texts) = 0;
  virtual ScoreResult score(std::span<const Image> images, std::size_t prompt) = 0;
  /// Identifier recorded in checkpoints for provenance.
  virtual std::string model_id() const = 0;
};

/// Mean squared error against a fixed target image per prompt.
class TargetImageScorer final : public Scorer {
 public:
  /// One target shared by all prompts, or one per prompt.
  explicit TargetImageScorer(std::vector<Image> targets) : targets_(std::move(targets)) {
    if (targets_.empty()) throw ConfigError("scorer.targets: at least one target image required");
  }

  void register_prompts(const std::vector<std::string>& texts) override {
    if (targets_.size() != 1 && targets_.size() != texts.size()) {
      throw ConfigError(fmt::format("scorer.targets: {} targets for {} prompts", targets_.size(), texts.size()));
    }
  }

  ScoreResult score(std::span<const Image> images, std::size_t prompt) override {
    const Image& target = targets_.size() == 1 ? targets_.front() : targets_.at(prompt);
    ScoreResult out;
    for (const Image& img : images) {
      if (!img.same_shape(target)) {
        throw ScorerError(fmt::format("target_image: render is {}x{}, target is {}x{}", img.height, img.width,
                                      target.height, target.width));
      }
      const double inv = 1.0 / static_cast<double>(img.values.size());
      double loss = 0;
      ImageGrad g(img.height, img.width);
      for (std::size_t i = 0; i < img.values.size(); ++i) {
        const double d = img.values[i] - target.values[i];
        loss += d * d * inv;
        g.values[i] = 2.0 * d * inv;
      }
      out.losses.push_back(loss);
      out.grads.push_back(std::move(g));
    }
    return out;
  }

  std::string model_id() const override { return "target_image"; }

  const std::vector<Image>& targets() const { return targets_; }

 private:
  std::vector<Image> targets_;
};

/// Differentiable stand-in for a text/image embedding model: a fixed Gaussian
/// matrix P maps vec(image) to an embed_dim vector, compared with a per-prompt
/// Gaussian embedding through cosine_loss.
class RandomProjectionScorer final : public Scorer {
 public:
  RandomProjectionScorer(int embed_dim, std::uint64_t seed) : dim_(embed_dim), seed_(seed) {
    if (embed_dim < 1) throw ConfigError("scorer.embed_dim: must be >= 1");
  }

  void register_prompts(const std::vector<std::string>& texts) override {
    embeddings_.clear();
    for (const auto& text : texts) embeddings_.push_back(text_embedding(text));
  }

  /// Overrides the embedding of one registered prompt.
  void set_prompt_embedding(std::size_t prompt, std::vector<double> embedding) {
    if (embedding.size() != static_cast<std::size_t>(dim_)) throw ConfigError("prompt embedding has wrong size");
    if (prompt >= embeddings_.size()) embeddings_.resize(prompt + 1);
    embeddings_[prompt] = std::move(embedding);
  }

  std::vector<double> text_embedding(const std::string& text) const {
    Rng rng(fnv1a(text) ^ seed_);
    std::vector<double> e(static_cast<std::size_t>(dim_));
    for (auto& x : e) x = normal01(rng);
    return e;
  }

  /// P . vec(image)
  std::vector<double> embed(const Image& img) {
    const auto& p = projection(img.values.size());
    std::vector<double> e(static_cast<std::size_t>(dim_), 0.0);
    const std::size_t m = img.values.size();
    for (int r = 0; r < dim_; ++r) {
      const float* row = p.data() + static_cast<std::size_t>(r) * m;
      double acc = 0;
      for (std::size_t i = 0; i < m; ++i) acc += static_cast<double>(row[i]) * img.values[i];
      e[static_cast<std::size_t>(r)] = acc;
    }
    return e;
  }

  ScoreResult score(std::span<const Image> images, std::size_t prompt) override {
    if (prompt >= embeddings_.size()) throw ScorerError(fmt::format("random_projection: unknown prompt {}", prompt));
    ScoreResult out;
    for (const Image& img : images) {
      const auto e = embed(img);
      const CosineLoss cl = cosine_loss(e, embeddings_[prompt]);
      const auto& p = projection(img.values.size());
      const std::size_t m = img.values.size();
      ImageGrad g(img.height, img.width);
      for (int r = 0; r < dim_; ++r) {
        const double gr = cl.grad[static_cast<std::size_t>(r)];
        const float* row = p.data() + static_cast<std::size_t>(r) * m;
        for (std::size_t i = 0; i < m; ++i) g.values[i] += gr * static_cast<double>(row[i]);
      }
      out.losses.push_back(cl.value);
      out.grads.push_back(std::move(g));
    }
    return out;
  }

  std::string model_id() const override { return fmt::format("random_projection(dim={},seed={})", dim_, seed_); }

  int embed_dim() const { return dim_; }

 private:
  // Entries N(0,1) in 32-bit floats, generated once per input size.
  const std::vector<float>& projection(std::size_t input_size) {
    auto it = projections_.find(input_size);
    if (it != projections_.end()) return it->second;
    Rng rng(derive_seed(seed_, {input_size, static_cast<std::uint64_t>(dim_)}));
    std::vector<float> p(input_size * static_cast<std::size_t>(dim_));
    for (auto& x : p) x = static_cast<float>(normal01(rng));
    return projections_.emplace(input_size, std::move(p)).first->second;
  }

  int dim_;
  std::uint64_t seed_;
  std::vector<std::vector<double>> embeddings_;
  std::map<std::size_t, std::vector<float>> projections_;
};

}  // namespace clipmatrix::objective
