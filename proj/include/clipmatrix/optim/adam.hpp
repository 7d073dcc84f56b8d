#pragma once

#include "clipmatrix/optim/params.hpp"

#include <fmt/format.h>

#include <cmath>
#include <cstdint>
#include <limits>

namespace clipmatrix::optim {

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  bool operator==(const AdamHyper&) const = default;
};

/// Optimizer bookkeeping besides the per-group moments (which live in ParamGroup).
struct OptState {
  std::uint64_t step = 0;  // number of completed updates
  std::uint64_t seed = 0;
  AdamHyper adam;
  bool operator==(const OptState&) const = default;
};

/// Gradient norm of one group, after clipping if it was applied.
struct ClipReport {
  double norm_before = 0;
  double norm_after = 0;
  bool clipped = false;
};

/// One bias-corrected Adam update of every enabled group. All gradients are
/// checked before anything is written, so a NaN leaves groups and state intact.
inline std::array<ClipReport, kGroupCount> adam_step(ParamGroups& groups, GroupGrads grads, OptState& state) {
  if (state.step >= (std::uint64_t{1} << 63)) throw NumericError("adam: step counter overflow");
  std::array<ClipReport, kGroupCount> report{};
  for (std::size_t g = 0; g < kGroupCount; ++g) {
    const ParamGroup& group = groups.groups[g];
    if (!group.enabled) continue;
    if (grads[g].size() != group.size()) {
      throw ConfigError(fmt::format("adam: gradient for group '{}' has {} entries, expected {}", group.name,
                                    grads[g].size(), group.size()));
    }
    double sq = 0;
    for (double x : grads[g]) {
      if (!std::isfinite(x)) throw NumericError(fmt::format("adam: non-finite gradient in group '{}'", group.name));
      sq += x * x;
    }
    report[g].norm_before = report[g].norm_after = std::sqrt(sq);
    if (group.clip > 0 && report[g].norm_before > group.clip) {
      const double scale = group.clip / report[g].norm_before;
      for (double& x : grads[g]) x *= scale;
      report[g].clipped = true;
      report[g].norm_after = group.clip;
    }
  }

  const double t = static_cast<double>(state.step + 1);
  const double c1 = 1.0 - std::pow(state.adam.beta1, t);
  const double c2 = 1.0 - std::pow(state.adam.beta2, t);
  for (std::size_t g = 0; g < kGroupCount; ++g) {
    ParamGroup& group = groups.groups[g];
    if (!group.enabled) continue;
    for (std::size_t i = 0; i < group.size(); ++i) {
      const double gi = grads[g][i];
      const double m = state.adam.beta1 * group.m[i] + (1.0 - state.adam.beta1) * gi;
      const double v = state.adam.beta2 * group.v[i] + (1.0 - state.adam.beta2) * gi * gi;
      const double update = group.lr * (m / c1) / (std::sqrt(v / c2) + state.adam.eps);
      group.m[i] = static_cast<float>(m);
      group.v[i] = static_cast<float>(v);
      group.value[i] = static_cast<float>(group.value[i] - update);
    }
  }
  ++state.step;
  return report;
}

}  // namespace clipmatrix::optim
