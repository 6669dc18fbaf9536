#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rnntd/checkpoint.hpp"
#include "rnntd/errors.hpp"
#include "rnntd/events.hpp"
#include "rnntd/linalg.hpp"
#include "rnntd/model.hpp"
#include "rnntd/quadrature.hpp"
#include "rnntd/trainer.hpp"

namespace rnntd {

// ---------------------------------------------------------------------------
// Markov chains over marks

struct MarkovModel {
  std::size_t order = 1;
  std::size_t marks = 0;
  double smoothing = 0.01;
  /// Context (oldest mark first, length 1..order) -> next-mark counts.
  std::map<std::vector<std::size_t>, std::vector<double>> counts;

  /// Next-mark distribution given the marks seen so far (oldest first).
  /// Uses the last min(order, |history|) marks. An unseen context falls back
  /// to the smoothed estimate (uniform) when smoothing > 0, otherwise to the
  /// longest shorter context that was seen; uniform if none was.
  Vector probabilities(std::span<const std::size_t> history) const {
    if (history.empty()) throw DataError("markov model needs at least one previous mark");
    const std::size_t k = std::min(order, history.size());
    for (std::size_t len = k; len >= 1; --len) {
      std::vector<std::size_t> ctx(history.end() - static_cast<std::ptrdiff_t>(len), history.end());
      auto it = counts.find(ctx);
      if (it == counts.end()) {
        if (smoothing > 0.0) break;
        continue;
      }
      const auto& c = it->second;
      double total = 0.0;
      for (double x : c) total += x;
      Vector p(marks);
      const double denom = total + smoothing * static_cast<double>(marks);
      for (std::size_t b = 0; b < marks; ++b) p[b] = (c[b] + smoothing) / denom;
      return p;
    }
    return Vector(marks, 1.0 / static_cast<double>(marks));
  }
};

inline MarkovModel mc_fit(std::span<const EventSequence> corpus, std::size_t order, std::size_t marks,
                          double smoothing = 0.01) {
  if (order < 1 || order > 3) throw DataError("markov order must be 1, 2 or 3");
  if (marks == 0) throw DataError("markov model needs at least one mark");
  if (!(smoothing >= 0.0)) throw DataError("smoothing must be >= 0");
  MarkovModel m{order, marks, smoothing, {}};
  std::size_t transitions = 0;
  for (const auto& seq : corpus) {
    validate_sequence(seq, marks);
    for (std::size_t j = 1; j < seq.size(); ++j) {
      for (std::size_t len = 1; len <= std::min(order, j); ++len) {
        std::vector<std::size_t> ctx;
        for (std::size_t i = j - len; i < j; ++i) ctx.push_back(seq.events[i].mark);
        auto [it, inserted] = m.counts.try_emplace(std::move(ctx), std::vector<double>(marks, 0.0));
        it->second[seq.events[j].mark] += 1.0;
      }
      ++transitions;
    }
  }
  if (transitions == 0) throw DataError("markov fit: corpus has no transitions");
  return m;
}

inline void store_markov(Checkpoint& c, const MarkovModel& m) {
  c.set("variant", "mc" + std::to_string(m.order));
  c.set("marks", static_cast<std::int64_t>(m.marks));
  c.set("order", static_cast<std::int64_t>(m.order));
  c.set("smoothing", m.smoothing);
  Checkpoint::Strings contexts;
  Matrix table(m.counts.size(), m.marks);
  std::size_t r = 0;
  for (const auto& [ctx, counts] : m.counts) {
    std::string key;
    for (std::size_t i = 0; i < ctx.size(); ++i) key += (i ? "," : "") + std::to_string(ctx[i]);
    contexts.push_back(key);
    std::copy(counts.begin(), counts.end(), table.row(r++).begin());
  }
  c.set("contexts", contexts);
  c.set("counts", table);
}

inline MarkovModel load_markov(const Checkpoint& c) {
  MarkovModel m{c.count("order"), c.count("marks"), c.real("smoothing"), {}};
  const auto& contexts = c.strings("contexts");
  const auto& table = c.matrix("counts");
  if (table.rows() != contexts.size() || table.cols() != m.marks)
    throw DataError("checkpoint: markov count table has the wrong shape");
  for (std::size_t r = 0; r < contexts.size(); ++r) {
    std::vector<std::size_t> ctx;
    std::size_t pos = 0;
    const auto& key = contexts[r];
    while (pos <= key.size()) {
      const auto comma = std::min(key.find(',', pos), key.size());
      ctx.push_back(std::stoul(key.substr(pos, comma - pos)));
      pos = comma + 1;
    }
    m.counts[ctx] = std::vector<double>(table.row(r).begin(), table.row(r).end());
  }
  return m;
}

// ---------------------------------------------------------------------------
// Point-process baselines

enum class PointProcessKind { PpPoisson, PpHawkes, MsppPoisson, MsppHawkes };

inline std::string to_string(PointProcessKind k) {
  switch (k) {
    case PointProcessKind::PpPoisson: return "pp-poisson";
    case PointProcessKind::PpHawkes: return "pp-hawkes";
    case PointProcessKind::MsppPoisson: return "mspp-poisson";
    case PointProcessKind::MsppHawkes: return "mspp-hawkes";
  }
  return "?";
}

inline std::optional<PointProcessKind> parse_point_process(std::string_view s) {
  for (auto k : {PointProcessKind::PpPoisson, PointProcessKind::PpHawkes, PointProcessKind::MsppPoisson,
                 PointProcessKind::MsppHawkes})
    if (s == to_string(k)) return k;
  return std::nullopt;
}

/// Rates floor used when a mark (pair) was never observed.
inline constexpr double kRateFloor = 1e-6;

/// lambda_b(t) = base(prev, b) + alpha * sum_{t_i < t} exp(-(t - t_i)), decay fixed at 1.
/// `base` is 1 x K for the per-mark variants and K x K (row = previous mark) for
/// the mark-pair variants; alpha is 0 for the Poisson variants.
struct PointProcessModel {
  PointProcessKind kind = PointProcessKind::PpPoisson;
  Matrix base;
  double alpha = 0.0;

  std::size_t marks() const noexcept { return base.cols(); }
  bool mark_pair() const noexcept {
    return kind == PointProcessKind::MsppPoisson || kind == PointProcessKind::MsppHawkes;
  }
  bool hawkes() const noexcept {
    return kind == PointProcessKind::PpHawkes || kind == PointProcessKind::MsppHawkes;
  }
  std::span<const double> base_row(std::size_t prev) const {
    return base.row(mark_pair() ? prev : 0);
  }
};

/// Excitation sum_{t_i <= t_last} exp(-(t_last - t_i)) over a history, evaluated at its last event.
inline double excitation_at_last(std::span<const Event> history) {
  double e = 0.0;
  for (std::size_t i = 0; i < history.size(); ++i) {
    if (i) e *= std::exp(-(history[i].time - history[i - 1].time));
    e += 1.0;
  }
  return e;
}

inline double hawkes_intensity(const PointProcessModel& m, std::size_t mark, std::span<const Event> history,
                               double t) {
  if (mark >= m.marks()) throw DimensionError("hawkes_intensity: mark out of range");
  if (history.empty() && m.mark_pair())
    throw DataError("hawkes_intensity: mark-pair model needs a previous event");
  double excitation = 0.0;
  for (const auto& ev : history) {
    if (ev.time > t) throw DataError("hawkes_intensity: history event after t");
    if (ev.time < t) excitation += std::exp(-(t - ev.time));
  }
  const double base = m.base_row(history.empty() ? 0 : history.back().mark)[mark];
  return base + m.alpha * excitation;
}

/// Negative log-likelihood of the events after the first, given the first.
/// Poisson variants use the closed form: -sum log base(prev, m_j) + sum_b base(prev, b) * gap.
inline double poisson_nll(const PointProcessModel& m, const EventSequence& seq) {
  validate_sequence(seq, m.marks());
  double total = 0.0;
  for (std::size_t j = 1; j < seq.size(); ++j) {
    const auto row = m.base_row(seq.events[j - 1].mark);
    double rate = 0.0;
    for (double r : row) rate += r;
    total += rate * (seq.events[j].time - seq.events[j - 1].time) - std::log(row[seq.events[j].mark]);
  }
  return total;
}

struct HawkesGradient {
  Matrix base;  // d nll / d base
  double alpha = 0.0;
};

/// Exact Hawkes NLL of the events after the first, given the first, by the
/// recursive excitation state E_j = 1 + exp(-gap_j) * E_{j-1}.
inline double hawkes_nll(const PointProcessModel& m, const EventSequence& seq, HawkesGradient* grad = nullptr) {
  validate_sequence(seq, m.marks());
  const double k = static_cast<double>(m.marks());
  double total = 0.0;
  double excitation = 1.0;  // inclusive of the event just seen
  for (std::size_t j = 1; j < seq.size(); ++j) {
    const std::size_t prev = seq.events[j - 1].mark;
    const std::size_t row_index = m.mark_pair() ? prev : 0;
    const auto row = m.base.row(row_index);
    const double gap = seq.events[j].time - seq.events[j - 1].time;
    const double decay = std::exp(-gap);
    const double before = excitation * decay;  // excitation just before event j
    const double lambda = row[seq.events[j].mark] + m.alpha * before;
    double rate = 0.0;
    for (double r : row) rate += r;
    const double kernel_integral = excitation * -std::expm1(-gap);
    total += rate * gap + k * m.alpha * kernel_integral - std::log(lambda);
    if (grad) {
      auto g = grad->base.row(row_index);
      for (double& x : g) x += gap;
      g[seq.events[j].mark] -= 1.0 / lambda;
      grad->alpha += k * kernel_integral - before / lambda;
    }
    excitation = before + 1.0;
  }
  return total;
}

inline double point_process_nll(const PointProcessModel& m, const EventSequence& seq) {
  return m.hawkes() ? hawkes_nll(m, seq) : poisson_nll(m, seq);
}

struct HawkesFitOptions {
  std::size_t iterations = 3000;
  double learning_rate = 0.05;
  /// Stop once the mean NLL per event changes by less than this over 100 iterations.
  double tolerance = 1e-10;
};

namespace detail {

inline PointProcessModel fit_poisson(PointProcessKind kind, std::span<const EventSequence> corpus,
                                     std::size_t marks, std::ostream* warnings) {
  PointProcessModel m;
  m.kind = kind;
  const bool pair = m.mark_pair();
  const std::size_t rows = pair ? marks : 1;
  Matrix counts(rows, marks);
  Vector exposure(rows, 0.0);
  for (const auto& seq : corpus) {
    validate_sequence(seq, marks);
    for (std::size_t j = 1; j < seq.size(); ++j) {
      const std::size_t r = pair ? seq.events[j - 1].mark : 0;
      counts(r, seq.events[j].mark) += 1.0;
      exposure[r] += seq.events[j].time - seq.events[j - 1].time;
    }
  }
  m.base = Matrix(rows, marks);
  std::size_t floored = 0;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t b = 0; b < marks; ++b) {
      const double rate = exposure[r] > 0.0 ? counts(r, b) / exposure[r] : 0.0;
      if (rate > kRateFloor) {
        m.base(r, b) = rate;
      } else {
        m.base(r, b) = kRateFloor;
        ++floored;
      }
    }
  if (floored && warnings)
    *warnings << "warning: " << floored << " rate(s) without observations floored at 1e-6\n";
  return m;
}

}  // namespace detail

/// Fits a point-process baseline. Poisson variants use count / exposure (the
/// exposure of a mark pair is the total gap following the previous mark).
/// Hawkes variants maximize the exact likelihood by full-batch Adam on log-parameters,
/// starting from the Poisson fit.
inline PointProcessModel pp_fit(std::span<const EventSequence> corpus, PointProcessKind kind, std::size_t marks,
                                const HawkesFitOptions& options = {}, std::ostream* warnings = &std::cerr) {
  if (corpus.empty()) throw DataError("point-process fit: empty corpus");
  if (marks == 0) throw DataError("point-process fit: no marks");
  const PointProcessKind poisson_kind =
      kind == PointProcessKind::MsppHawkes || kind == PointProcessKind::MsppPoisson ? PointProcessKind::MsppPoisson
                                                                                      : PointProcessKind::PpPoisson;
  auto m = detail::fit_poisson(poisson_kind, corpus, marks, warnings);
  std::size_t events = 0;
  for (const auto& s : corpus) events += s.size() > 0 ? s.size() - 1 : 0;
  if (events == 0) throw DataError("point-process fit: corpus has no transitions");
  if (!m.hawkes() && kind == poisson_kind) return m;

  m.kind = kind;
  Vector theta;  // log base entries, then log alpha
  for (double b : m.base.values()) theta.push_back(std::log(0.5 * b));
  theta.push_back(std::log(0.1));
  Vector mom(theta.size(), 0.0), vel(theta.size(), 0.0);
  const double beta1 = 0.9, beta2 = 0.999;
  double checkpoint_nll = std::numeric_limits<double>::infinity();
  Vector best = theta;
  double best_nll = std::numeric_limits<double>::infinity();
  for (std::size_t it = 1; it <= options.iterations; ++it) {
    for (std::size_t i = 0; i + 1 < theta.size(); ++i) m.base.values()[i] = std::exp(theta[i]);
    m.alpha = std::exp(theta.back());
    HawkesGradient g{Matrix(m.base.rows(), m.base.cols()), 0.0};
    double total = 0.0;
    for (const auto& s : corpus) total += hawkes_nll(m, s, &g);
    const double mean = total / static_cast<double>(events);
    if (!std::isfinite(mean)) throw NumericalError("hawkes fit diverged at iteration " + std::to_string(it));
    if (mean < best_nll) {
      best_nll = mean;
      best = theta;
    }
    if (it % 100 == 0) {
      if (std::abs(checkpoint_nll - mean) < options.tolerance) break;
      checkpoint_nll = mean;
    }
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double value = i + 1 < theta.size() ? m.base.values()[i] : m.alpha;
      const double grad_raw = i + 1 < theta.size() ? g.base.values()[i] : g.alpha;
      const double gi = grad_raw * value / static_cast<double>(events);
      mom[i] = beta1 * mom[i] + (1 - beta1) * gi;
      vel[i] = beta2 * vel[i] + (1 - beta2) * gi * gi;
      const double mh = mom[i] / (1 - std::pow(beta1, static_cast<double>(it)));
      const double vh = vel[i] / (1 - std::pow(beta2, static_cast<double>(it)));
      theta[i] -= options.learning_rate * mh / (std::sqrt(vh) + 1e-12);
    }
  }
  for (std::size_t i = 0; i + 1 < best.size(); ++i) m.base.values()[i] = std::exp(best[i]);
  m.alpha = std::exp(best.back());
  return m;
}

/// Expected time of the next event of `mark` after the history's last event.
/// Poisson: t_last + 1 / base(prev, mark). Hawkes: t_last plus the integral of
/// the survival function exp(-(base * d + alpha * E * (1 - e^-d))) of that mark alone.
inline double pp_predict_time(const PointProcessModel& m, std::span<const Event> history, std::size_t mark) {
  if (history.empty()) throw DataError("pp_predict_time: empty history");
  if (mark >= m.marks()) throw DimensionError("pp_predict_time: mark out of range");
  const double t_last = history.back().time;
  const double base = m.base_row(history.back().mark)[mark];
  if (!m.hawkes() || m.alpha == 0.0) return t_last + 1.0 / base;
  const double e = excitation_at_last(history);
  const double mass = m.alpha * e;
  const double scale = 1.0 / (base + mass);
  const double mean = integrate(
      [&](double x) {
        const double d = x * scale;
        return std::exp(-(base * d - mass * std::expm1(-d))) * scale;
      },
      0.0, std::numeric_limits<double>::infinity(), {1e-10});
  return t_last + mean;
}

inline void store_point_process(Checkpoint& c, const PointProcessModel& m) {
  c.set("variant", to_string(m.kind));
  c.set("marks", static_cast<std::int64_t>(m.marks()));
  c.set("base", m.base);
  c.set("alpha", m.alpha);
}

inline PointProcessModel load_point_process(const Checkpoint& c) {
  const auto kind = parse_point_process(c.text("variant"));
  if (!kind) throw DataError("checkpoint: not a point-process model");
  PointProcessModel m{*kind, c.matrix("base"), c.real("alpha")};
  if (m.base.cols() != c.count("marks") || m.base.rows() != (m.mark_pair() ? m.marks() : 1))
    throw DataError("checkpoint: base rate table has the wrong shape");
  return m;
}

// ---------------------------------------------------------------------------
// Shared-intensity neural baseline

/// RMTPP-style contrast model: the same recurrence and mark head, one intensity
/// row plus bias for all marks, lambda(t) = exp(v.h + w*(t - t_j) + b).
inline ModelParams rmtpp_init(const ModelDims& dims, std::uint64_t seed) {
  return init_params(dims, ShapingKind::Exponential, seed, IntensityHead::Shared);
}

inline TrainResult rmtpp_like(std::span<const EventSequence> train_set, std::span<const EventSequence> validation_set,
                              const ModelDims& dims, const TrainConfig& config, const EpochCallback& on_epoch = {}) {
  return train(rmtpp_init(dims, config.seed), train_set, validation_set, config, on_epoch);
}

}  // namespace rnntd
