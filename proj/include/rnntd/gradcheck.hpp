#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rnntd/model.hpp"
#include "rnntd/rng.hpp"
#include "rnntd/trainer.hpp"

namespace rnntd {

struct GradCheckConfig {
  ModelDims dims{8, 5, 4, FeatureConfig{true, 0}};
  std::size_t length = 10;
  double weight_scale = 0.3;
  double step = 1e-5;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_block;
  std::size_t parameters_checked = 0;
};

/// Largest |analytic - central difference| / max(1, |analytic|) over every parameter.
inline GradCheckResult check_gradients(ModelParams p, const EventSequence& seq, double gamma, double step = 1e-5) {
  const auto analytic = gradients(p, seq, gamma).grad;
  const auto expected = detail::blocks(analytic);
  auto live = detail::blocks(p);
  auto objective = [&] {
    const auto r = nll(p, seq);
    return r.value + gamma * r.rate_sum;
  };
  GradCheckResult out;
  for (std::size_t b = 0; b < live.size(); ++b) {
    for (std::size_t k = 0; k < live[b].second.size(); ++k) {
      double& x = live[b].second[k];
      const double saved = x;
      x = saved + step;
      const double up = objective();
      x = saved - step;
      const double down = objective();
      x = saved;
      const double fd = (up - down) / (2 * step);
      const double a = expected[b].second[k];
      const double err = std::abs(a - fd) / std::max(1.0, std::abs(a));
      if (err > out.max_relative_error) {
        out.max_relative_error = err;
        out.worst_block = std::string(live[b].first);
      }
      ++out.parameters_checked;
    }
  }
  return out;
}

/// A random configuration: Gaussian weights, w uniform in [-0.5, 0.5), and a
/// sequence with exponential gaps and uniform marks.
inline std::pair<ModelParams, EventSequence> random_configuration(const GradCheckConfig& cfg, ShapingKind shaping,
                                                                   std::uint64_t seed, std::uint64_t trial) {
  Philox rng(seed, 0x67726164ULL + trial);
  auto p = ModelParams::zeros(cfg.dims, shaping);
  p.for_each_block([&](std::string_view, std::span<double> v) {
    for (double& x : v) x = cfg.weight_scale * rng.normal();
  });
  if (shaping == ShapingKind::Exponential) p.shaping.w = rng.uniform() - 0.5;
  EventSequence seq{"gradcheck", {}};
  double t = 10.0 * rng.uniform();
  for (std::size_t i = 0; i < cfg.length; ++i) {
    seq.events.push_back({t, rng.index(cfg.dims.marks)});
    t += 0.05 + rng.exponential(1.0);
  }
  return {std::move(p), std::move(seq)};
}

}  // namespace rnntd
