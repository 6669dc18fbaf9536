#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "rnntd/errors.hpp"
#include "rnntd/events.hpp"
#include "rnntd/linalg.hpp"
#include "rnntd/model.hpp"
#include "rnntd/rng.hpp"

namespace rnntd {

struct TrainConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t batch_size = 64;
  std::size_t max_epochs = 50;
  std::size_t patience = 5;
  double gamma = 0.0;
  std::uint64_t seed = 1;
  /// Global-norm gradient clipping threshold; 0 disables clipping.
  double clip_norm = 5.0;
  /// Worker threads for per-sequence gradients. Results do not depend on it.
  std::size_t threads = 1;
  /// Clamp logits and log-rates during training steps.
  ForwardOptions guard{true, 30.0};

  void validate() const {
    if (!(learning_rate > 0.0)) throw DataError("learning rate must be > 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
      throw DataError("Adam betas must lie in [0, 1)");
    if (!(eps > 0.0)) throw DataError("Adam eps must be > 0");
    if (batch_size == 0) throw DataError("batch size must be >= 1");
    if (max_epochs == 0) throw DataError("max epochs must be >= 1");
    if (patience == 0) throw DataError("patience must be >= 1");
    if (!(gamma >= 0.0)) throw DataError("gamma must be >= 0");
    if (!(clip_norm >= 0.0)) throw DataError("clip norm must be >= 0");
  }
};

struct AdamState {
  ModelParams m;
  ModelParams v;
  std::uint64_t t = 0;

  static AdamState for_params(const ModelParams& p) { return {p.zeros_like(), p.zeros_like(), 0}; }
};

namespace detail {

inline std::vector<std::pair<std::string_view, std::span<double>>> blocks(ModelParams& p) {
  std::vector<std::pair<std::string_view, std::span<double>>> out;
  p.for_each_block([&out](std::string_view name, std::span<double> v) { out.emplace_back(name, v); });
  return out;
}

inline std::vector<std::pair<std::string_view, std::span<const double>>> blocks(const ModelParams& p) {
  std::vector<std::pair<std::string_view, std::span<const double>>> out;
  p.for_each_block([&out](std::string_view name, std::span<const double> v) { out.emplace_back(name, v); });
  return out;
}

inline void add_into(ModelParams& acc, const ModelParams& g) {
  auto a = blocks(acc);
  const auto b = blocks(g);
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < a[i].second.size(); ++k) a[i].second[k] += b[i].second[k];
}

inline void scale(ModelParams& p, double factor) {
  for (auto& [name, v] : blocks(p))
    for (double& x : v) x *= factor;
}

inline double squared_norm(const ModelParams& p) {
  double s = 0.0;
  for (const auto& [name, v] : blocks(p))
    for (double x : v) s += x * x;
  return s;
}

inline constexpr std::uint64_t kInitStream = 0x696e6974;     // "init"
inline constexpr std::uint64_t kShuffleStream = 0x73687566;  // "shuf"

}  // namespace detail

/// Recurrent matrix orthogonal; every other block N(0, 0.1^2); w = 0.1 for exponential shaping.
inline ModelParams init_params(const ModelDims& dims, ShapingKind shaping, std::uint64_t seed,
                               IntensityHead head = IntensityHead::MarkSpecific) {
  auto p = ModelParams::zeros(dims, shaping, head);
  Philox rng(seed, detail::kInitStream);
  p.for_each_block([&](std::string_view name, std::span<double> v) {
    if (name == "recurrent" || name == "shaping_w") return;
    for (double& x : v) x = 0.1 * rng.normal();
  });
  p.recurrent = orthogonal_init(dims.hidden, seed);
  if (shaping == ShapingKind::Exponential) p.shaping.w = 0.1;
  return p;
}

/// One bias-corrected Adam update in place. A non-finite gradient entry raises
/// NumericalError naming the block and leaves params and state untouched.
inline void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state,
                      const TrainConfig& config) {
  auto p = detail::blocks(params);
  const auto g = detail::blocks(grads);
  if (p.size() != g.size()) throw DimensionError("adam_step: gradient shape mismatch");
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i].second.size() != g[i].second.size())
      throw DimensionError("adam_step: block " + std::string(p[i].first) + " shape mismatch");
    if (!all_finite(g[i].second))
      throw NumericalError("non-finite gradient in parameter block " + std::string(g[i].first));
  }
  auto m = detail::blocks(state.m);
  auto v = detail::blocks(state.v);
  ++state.t;
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < p.size(); ++i) {
    for (std::size_t k = 0; k < p[i].second.size(); ++k) {
      const double gk = g[i].second[k];
      double& mk = m[i].second[k];
      double& vk = v[i].second[k];
      mk = config.beta1 * mk + (1.0 - config.beta1) * gk;
      vk = config.beta2 * vk + (1.0 - config.beta2) * gk * gk;
      p[i].second[k] -= config.learning_rate * (mk / c1) / (std::sqrt(vk / c2) + config.eps);
    }
  }
}

/// Summed gradients of a batch. Each worker fills a disjoint slice of
/// per-sequence results; the sum runs in batch order so the total is
/// independent of the thread count.
struct BatchGradient {
  ModelParams grad;
  double nll = 0.0;
  double rate_sum = 0.0;
  std::size_t transitions = 0;
  std::size_t clamped = 0;
};

inline BatchGradient batch_gradients(const ModelParams& p, std::span<const EventSequence* const> batch,
                                     double gamma, const ForwardOptions& guard, std::size_t threads = 1) {
  std::vector<GradientResult> parts(batch.size());
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) parts[i] = gradients(p, *batch[i], gamma, guard);
  };
  const std::size_t workers = std::max<std::size_t>(1, std::min(threads, batch.size()));
  if (workers == 1) {
    work(0, batch.size());
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    const std::size_t chunk = (batch.size() + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          work(w * chunk, std::min(batch.size(), (w + 1) * chunk));
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  BatchGradient out;
  out.grad = p.zeros_like();
  for (const auto& r : parts) {
    detail::add_into(out.grad, r.grad);
    out.nll += r.nll;
    out.rate_sum += r.rate_sum;
    out.transitions += r.transitions;
    out.clamped += r.clamped;
  }
  return out;
}

/// Mean NLL per transition over a corpus, without clamping.
inline double mean_nll(const ModelParams& p, std::span<const EventSequence> corpus) {
  double total = 0.0;
  std::size_t steps = 0;
  for (const auto& s : corpus) {
    if (s.size() < 2) continue;
    total += nll(p, s).value;
    steps += s.size() - 1;
  }
  if (steps == 0) throw DataError("corpus has no transitions");
  return total / static_cast<double>(steps);
}

struct EpochRecord {
  std::size_t epoch = 0;
  /// Running mean NLL per transition over the epoch's batches.
  double train_nll = 0.0;
  double validation_nll = 0.0;
  /// Mean total rate per transition (the lasso quantity before gamma).
  double mean_rate = 0.0;
  std::size_t clamped = 0;
  double seconds = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  std::size_t stopping_epoch = 0;
  double best_validation_nll = std::numeric_limits<double>::infinity();

  void write_jsonl(std::ostream& out) const {
    for (const auto& e : epochs) {
      nlohmann::json j{{"epoch", e.epoch},          {"train_nll", e.train_nll},
                       {"validation_nll", e.validation_nll}, {"mean_rate", e.mean_rate},
                       {"clamped", e.clamped},      {"seconds", e.seconds}};
      out << j.dump() << '\n';
    }
  }
};

struct TrainResult {
  ModelParams params;
  TrainReport report;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Mini-batch Adam on the summed objective (nll + gamma * sum of rates), divided
/// by the batch transition count, with early stopping on validation NLL.
/// Returns the parameters of the best validation epoch.
inline TrainResult train(ModelParams params, std::span<const EventSequence> train_set,
                         std::span<const EventSequence> validation_set, const TrainConfig& config,
                         const EpochCallback& on_epoch = {}) {
  config.validate();
  params.validate();
  std::vector<const EventSequence*> order;
  for (const auto& s : train_set)
    if (s.size() >= 2) order.push_back(&s);
  if (order.empty()) throw DataError("training split has no sequences with a transition");
  if (validation_set.empty()) throw DataError("validation split is empty");

  TrainResult result{params, {}};
  AdamState state = AdamState::for_params(params);
  std::size_t since_best = 0;
  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    Philox rng(config.seed, detail::kShuffleStream + epoch);
    rng.shuffle(std::span<const EventSequence*>(order));
    EpochRecord rec;
    rec.epoch = epoch;
    double nll_total = 0.0, rate_total = 0.0;
    std::size_t steps_total = 0;
    for (std::size_t start = 0, b = 0; start < order.size(); start += config.batch_size, ++b) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      auto batch = batch_gradients(params, std::span<const EventSequence* const>(order).subspan(start, end - start),
                                   config.gamma, config.guard, config.threads);
      if (!std::isfinite(batch.nll) || !std::isfinite(batch.rate_sum))
        throw NumericalError("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(b));
      detail::scale(batch.grad, 1.0 / static_cast<double>(batch.transitions));
      if (config.clip_norm > 0.0) {
        const double norm = std::sqrt(detail::squared_norm(batch.grad));
        if (norm > config.clip_norm) detail::scale(batch.grad, config.clip_norm / norm);
      }
      try {
        adam_step(params, batch.grad, state, config);
      } catch (const NumericalError& e) {
        throw NumericalError(std::string(e.what()) + " at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(b));
      }
      nll_total += batch.nll;
      rate_total += batch.rate_sum;
      steps_total += batch.transitions;
      rec.clamped += batch.clamped;
    }
    rec.train_nll = nll_total / static_cast<double>(steps_total);
    rec.mean_rate = rate_total / static_cast<double>(steps_total);
    rec.validation_nll = mean_nll(params, validation_set);
    if (!std::isfinite(rec.validation_nll))
      throw NumericalError("validation NLL is not finite at epoch " + std::to_string(epoch));
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    result.report.epochs.push_back(rec);
    result.report.stopping_epoch = epoch;
    if (on_epoch) on_epoch(rec);

    if (rec.validation_nll < result.report.best_validation_nll) {
      result.report.best_validation_nll = rec.validation_nll;
      result.report.best_epoch = epoch;
      result.params = params;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  return result;
}

}  // namespace rnntd
