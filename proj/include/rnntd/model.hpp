#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rnntd/errors.hpp"
#include "rnntd/events.hpp"
#include "rnntd/linalg.hpp"
#include "rnntd/quadrature.hpp"

namespace rnntd {

enum class ShapingKind { Constant, Exponential };

inline std::string_view to_string(ShapingKind k) {
  return k == ShapingKind::Constant ? "const" : "exp";
}

inline ShapingKind parse_shaping(std::string_view s) {
  if (s == "const" || s == "constant" || s == "c") return ShapingKind::Constant;
  if (s == "exp" || s == "exponential") return ShapingKind::Exponential;
  throw DataError("unknown shaping '" + std::string(s) + "' (expected const|exp)");
}

/// Time-shaping factor tau(t; t_last) of the intensity, as a function of the
/// elapsed time since the conditioning event.
///
/// Constant: tau = 1 (the scale lives in the rate).
/// Exponential: tau = exp(w * elapsed), w a single learned scalar of any sign.
struct ShapingFunction {
  ShapingKind kind = ShapingKind::Constant;
  double w = 0.0;

  /// Below this |w| the exponential integral uses its first-order expansion.
  static constexpr double kSmallW = 1e-8;

  double log_tau(double elapsed) const noexcept {
    return kind == ShapingKind::Constant ? 0.0 : w * elapsed;
  }
  double tau(double elapsed) const noexcept { return std::exp(log_tau(elapsed)); }

  /// Integral of tau over [0, elapsed].
  double integral(double elapsed) const noexcept {
    if (kind == ShapingKind::Constant) return elapsed;
    if (std::abs(w) < kSmallW) return elapsed * (1.0 + 0.5 * w * elapsed);
    return std::expm1(w * elapsed) / w;
  }

  /// d integral / d w.
  double integral_dw(double elapsed) const noexcept {
    if (kind == ShapingKind::Constant) return 0.0;
    const double e2 = elapsed * elapsed;
    if (std::abs(w) < kSmallW) return 0.5 * e2;
    const double x = w * elapsed;
    if (std::abs(x) < 1e-3) return e2 * (0.5 + x / 3.0 + x * x / 8.0 + x * x * x / 30.0);
    return (x * std::exp(x) - std::expm1(x)) / (w * w);
  }

  /// Integral of tau over [0, infinity): finite only for a decaying exponential.
  double integral_limit() const noexcept {
    if (kind == ShapingKind::Exponential && w <= -kSmallW) return -1.0 / w;
    return std::numeric_limits<double>::infinity();
  }

  bool operator==(const ShapingFunction&) const = default;
};

/// Mark-specific (one intensity row per mark) or shared (one row plus bias,
/// the RMTPP-style contrast model).
enum class IntensityHead { MarkSpecific, Shared };

struct ModelDims {
  std::size_t hidden = 16;
  std::size_t marks = 2;
  std::size_t embed = 8;
  FeatureConfig features{};
};

/// All weights of the recurrent temporal model.
///
///   h_j     = tanh(input_time * phi(t_j) + input_mark * embed[m_j] + recurrent * h_{j-1})
///   r(e|h)  = softmax(mark_logits * h)_e
///   nu_e    = exp(intensity[row(e)] . h + bias)
///   lambda_e(t) = nu_e * tau(t - t_j)
struct ModelParams {
  std::size_t hidden = 0;
  std::size_t marks = 0;
  std::size_t embed_dim = 0;
  FeatureConfig features{};
  IntensityHead head = IntensityHead::MarkSpecific;

  Matrix input_time;      // hidden x time features
  Matrix input_mark;      // hidden x embed
  Matrix recurrent;       // hidden x hidden
  Matrix mark_logits;     // marks x hidden
  Matrix intensity;       // intensity_rows() x hidden
  Vector intensity_bias;  // empty for MarkSpecific, one entry for Shared
  Matrix mark_embedding;  // marks x embed
  ShapingFunction shaping{};

  static ModelParams zeros(const ModelDims& dims, ShapingKind shaping,
                           IntensityHead head = IntensityHead::MarkSpecific) {
    if (dims.hidden == 0 || dims.marks == 0 || dims.embed == 0)
      throw DimensionError("model dimensions must be positive");
    ModelParams p;
    p.hidden = dims.hidden;
    p.marks = dims.marks;
    p.embed_dim = dims.embed;
    p.features = dims.features;
    p.head = head;
    const std::size_t rows = head == IntensityHead::Shared ? 1 : dims.marks;
    p.input_time = Matrix(dims.hidden, dims.features.dim());
    p.input_mark = Matrix(dims.hidden, dims.embed);
    p.recurrent = Matrix(dims.hidden, dims.hidden);
    p.mark_logits = Matrix(dims.marks, dims.hidden);
    p.intensity = Matrix(rows, dims.hidden);
    if (head == IntensityHead::Shared) p.intensity_bias = Vector(1, 0.0);
    p.mark_embedding = Matrix(dims.marks, dims.embed);
    p.shaping.kind = shaping;
    return p;
  }

  ModelDims dims() const { return {hidden, marks, embed_dim, features}; }
  std::size_t time_dim() const noexcept { return features.dim(); }
  std::size_t intensity_rows() const noexcept { return intensity.rows(); }
  std::size_t intensity_row(std::size_t mark) const noexcept {
    return head == IntensityHead::Shared ? 0 : mark;
  }

  /// Same shapes, all zeros: the container used for gradients and optimizer moments.
  ModelParams zeros_like() const {
    ModelParams z = *this;
    z.for_each_block([](std::string_view, std::span<double> v) { std::fill(v.begin(), v.end(), 0.0); });
    return z;
  }

  /// Visit every trainable block as (name, values).
  template <typename F>
  void for_each_block(F&& f) {
    f("input_time", input_time.values());
    f("input_mark", input_mark.values());
    f("recurrent", recurrent.values());
    f("mark_logits", mark_logits.values());
    f("intensity", intensity.values());
    if (!intensity_bias.empty()) f("intensity_bias", std::span<double>(intensity_bias));
    f("mark_embedding", mark_embedding.values());
    if (shaping.kind == ShapingKind::Exponential) f("shaping_w", std::span<double>(&shaping.w, 1));
  }
  template <typename F>
  void for_each_block(F&& f) const {
    f("input_time", input_time.values());
    f("input_mark", input_mark.values());
    f("recurrent", recurrent.values());
    f("mark_logits", mark_logits.values());
    f("intensity", intensity.values());
    if (!intensity_bias.empty()) f("intensity_bias", std::span<const double>(intensity_bias));
    f("mark_embedding", mark_embedding.values());
    if (shaping.kind == ShapingKind::Exponential)
      f("shaping_w", std::span<const double>(&shaping.w, 1));
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each_block([&n](std::string_view, std::span<const double> v) { n += v.size(); });
    return n;
  }

  /// Throws DimensionError / NumericalError on inconsistent shapes or non-finite entries.
  void validate() const {
    auto expect = [](const Matrix& m, std::size_t r, std::size_t c, const char* name) {
      if (m.rows() != r || m.cols() != c)
        throw DimensionError(std::string(name) + " is " + std::to_string(m.rows()) + "x" +
                             std::to_string(m.cols()) + ", expected " + std::to_string(r) + "x" +
                             std::to_string(c));
    };
    const std::size_t rows = head == IntensityHead::Shared ? 1 : marks;
    expect(input_time, hidden, time_dim(), "input_time");
    expect(input_mark, hidden, embed_dim, "input_mark");
    expect(recurrent, hidden, hidden, "recurrent");
    expect(mark_logits, marks, hidden, "mark_logits");
    expect(intensity, rows, hidden, "intensity");
    expect(mark_embedding, marks, embed_dim, "mark_embedding");
    if (intensity_bias.size() != (head == IntensityHead::Shared ? 1u : 0u))
      throw DimensionError("intensity_bias has wrong size");
    for_each_block([](std::string_view name, std::span<const double> v) {
      if (!all_finite(v)) throw NumericalError("parameter block " + std::string(name) + " is not finite");
    });
  }

  bool operator==(const ModelParams&) const = default;
};

// ---------------------------------------------------------------------------
// Single-step pieces

/// One recurrence step: h = tanh(input_time*phi + input_mark*embed[mark] + recurrent*h_prev).
inline Vector step(const ModelParams& p, std::span<const double> h_prev,
                   std::span<const double> features, std::size_t mark) {
  if (h_prev.size() != p.hidden)
    throw DimensionError("step: hidden state has " + std::to_string(h_prev.size()) +
                         " entries, expected " + std::to_string(p.hidden));
  if (features.size() != p.time_dim())
    throw DimensionError("step: feature vector has " + std::to_string(features.size()) +
                         " entries, expected " + std::to_string(p.time_dim()));
  if (mark >= p.marks) throw DimensionError("step: mark " + std::to_string(mark) + " out of range");
  Vector u(p.hidden, 0.0);
  gemv_add(p.input_time, features, u);
  gemv_add(p.input_mark, p.mark_embedding.row(mark), u);
  gemv_add(p.recurrent, h_prev, u);
  for (double& x : u) x = std::tanh(x);
  return u;
}

/// Next-mark distribution r(.|h).
inline Vector mark_distribution(const ModelParams& p, std::span<const double> h) {
  return softmax(gemv(p.mark_logits, h));
}

/// log nu for every intensity row.
inline Vector log_rates(const ModelParams& p, std::span<const double> h) {
  Vector a = gemv(p.intensity, h);
  for (std::size_t r = 0; r < a.size() && r < p.intensity_bias.size(); ++r) a[r] += p.intensity_bias[r];
  return a;
}

inline double total_rate(std::span<const double> log_nu) {
  double s = 0.0;
  for (double a : log_nu) s += std::exp(a);
  return s;
}

/// lambda_mark(t) = nu_mark * tau(t - t_last).
inline double intensity(const ModelParams& p, std::span<const double> h, std::size_t mark, double t,
                        double t_last) {
  if (t < t_last) throw DataError("intensity: t precedes the conditioning event");
  if (mark >= p.marks) throw DimensionError("intensity: mark out of range");
  const Vector a = log_rates(p, h);
  return std::exp(a[p.intensity_row(mark)] + p.shaping.log_tau(t - t_last));
}

/// Compensator of one mark: integral of lambda_mark over [t_last, t].
inline double integrated_intensity(const ModelParams& p, std::span<const double> h, std::size_t mark,
                                   double t_last, double t) {
  if (t < t_last) throw DataError("integrated_intensity: t precedes the conditioning event");
  if (mark >= p.marks) throw DimensionError("integrated_intensity: mark out of range");
  const Vector a = log_rates(p, h);
  return std::exp(a[p.intensity_row(mark)]) * p.shaping.integral(t - t_last);
}

/// Sum of all compensators over [t_last, t].
inline double total_integrated_intensity(const ModelParams& p, std::span<const double> h,
                                         double t_last, double t) {
  return total_rate(log_rates(p, h)) * p.shaping.integral(t - t_last);
}

/// s(t | mark, h) = lambda_mark(t) * exp(-sum_e integral lambda_e).
inline double time_density(const ModelParams& p, std::span<const double> h, std::size_t mark,
                           double t_last, double t) {
  if (t < t_last) throw DataError("time_density: t precedes the conditioning event");
  if (mark >= p.marks) throw DimensionError("time_density: mark out of range");
  const Vector a = log_rates(p, h);
  const double elapsed = t - t_last;
  return std::exp(a[p.intensity_row(mark)] + p.shaping.log_tau(elapsed) -
                  total_rate(a) * p.shaping.integral(elapsed));
}

// ---------------------------------------------------------------------------
// Sequence likelihood and gradients

struct ForwardOptions {
  /// Clamp logits and log-rates to [-clamp_limit, clamp_limit] (training guard).
  bool clamp = false;
  double clamp_limit = 30.0;
};

/// Saved activations of one transition (history up to event j -> event j+1).
struct StepCache {
  Vector features;        // phi(t_j)
  Vector hidden;          // h_j
  Vector mark_probs;      // r(.|h_j)
  Vector log_rates;       // log nu after clamping
  std::vector<char> rate_clamped;
  std::vector<char> logit_clamped;
  double elapsed = 0.0;   // t_{j+1} - t_j
  std::size_t mark = 0;   // m_j
  std::size_t target = 0; // m_{j+1}
};

struct NllResult {
  double value = 0.0;
  /// Sum over transitions and intensity rows of nu (the lasso term before gamma).
  double rate_sum = 0.0;
  std::size_t clamped = 0;
  std::vector<StepCache> steps;
};

/// Negative log-likelihood of one sequence, with the per-step caches needed by BPTT.
///
///   -sum_j [ log r(m_{j+1}|h_j) + log nu_{m_{j+1}} + log tau(dt) - sum_e nu_e * int_0^dt tau ]
inline NllResult nll(const ModelParams& p, const EventSequence& seq, const ForwardOptions& options = {}) {
  if (seq.events.size() < 2) throw DataError("nll: sequence '" + seq.id + "' has fewer than 2 events");
  validate_sequence(seq, p.marks);
  const std::size_t n_steps = seq.events.size() - 1;
  NllResult result;
  result.steps.resize(n_steps);
  Vector h(p.hidden, 0.0);
  const double limit = options.clamp_limit;
  for (std::size_t j = 0; j < n_steps; ++j) {
    StepCache& c = result.steps[j];
    const auto& ev = seq.events[j];
    const auto& next = seq.events[j + 1];
    const std::optional<double> prev = j == 0 ? std::nullopt : std::optional<double>(seq.events[j - 1].time);
    c.features = featurize(prev, ev.time, p.features);
    c.mark = ev.mark;
    c.target = next.mark;
    c.elapsed = next.time - ev.time;
    h = step(p, h, c.features, ev.mark);
    c.hidden = h;

    Vector logits = gemv(p.mark_logits, h);
    c.logit_clamped.assign(logits.size(), 0);
    if (options.clamp)
      for (std::size_t k = 0; k < logits.size(); ++k)
        if (std::abs(logits[k]) > limit) {
          logits[k] = std::clamp(logits[k], -limit, limit);
          c.logit_clamped[k] = 1;
          ++result.clamped;
        }
    const Vector logp = log_softmax(logits);
    c.mark_probs.resize(logp.size());
    for (std::size_t k = 0; k < logp.size(); ++k) c.mark_probs[k] = std::exp(logp[k]);

    c.log_rates = log_rates(p, h);
    c.rate_clamped.assign(c.log_rates.size(), 0);
    if (options.clamp)
      for (std::size_t r = 0; r < c.log_rates.size(); ++r)
        if (std::abs(c.log_rates[r]) > limit) {
          c.log_rates[r] = std::clamp(c.log_rates[r], -limit, limit);
          c.rate_clamped[r] = 1;
          ++result.clamped;
        }
    const double rates = total_rate(c.log_rates);
    const double term = logp[next.mark] + c.log_rates[p.intensity_row(next.mark)] +
                        p.shaping.log_tau(c.elapsed) - rates * p.shaping.integral(c.elapsed);
    result.value -= term;
    result.rate_sum += rates;
  }
  return result;
}

struct GradientResult {
  ModelParams grad;
  double nll = 0.0;
  double rate_sum = 0.0;
  std::size_t clamped = 0;
  std::size_t transitions = 0;

  /// nll + gamma * rate_sum, the quantity grad differentiates.
  double objective(double gamma) const noexcept { return nll + gamma * rate_sum; }
};

/// Exact gradient of nll(seq) + gamma * sum_steps sum_e nu_e by backpropagation through time.
inline GradientResult gradients(const ModelParams& p, const EventSequence& seq, double gamma,
                                const ForwardOptions& options = {}) {
  NllResult fwd = nll(p, seq, options);
  GradientResult out;
  out.grad = p.zeros_like();
  out.nll = fwd.value;
  out.rate_sum = fwd.rate_sum;
  out.clamped = fwd.clamped;
  out.transitions = fwd.steps.size();
  ModelParams& g = out.grad;

  const std::size_t n_steps = fwd.steps.size();
  Vector dh_carry(p.hidden, 0.0);  // gradient flowing into h_j from step j+1
  Vector dz(p.marks), da(p.intensity_rows()), du(p.hidden), dh(p.hidden);
  Vector d_embed(p.embed_dim);
  for (std::size_t jj = n_steps; jj-- > 0;) {
    const StepCache& c = fwd.steps[jj];
    const std::size_t target_row = p.intensity_row(c.target);

    for (std::size_t k = 0; k < p.marks; ++k)
      dz[k] = c.logit_clamped[k] ? 0.0 : c.mark_probs[k] - (k == c.target ? 1.0 : 0.0);

    const double integral = p.shaping.integral(c.elapsed);
    double dw = -c.elapsed;  // from -log tau = -w*dt
    for (std::size_t r = 0; r < da.size(); ++r) {
      const double nu = std::exp(c.log_rates[r]);
      dw += nu * p.shaping.integral_dw(c.elapsed);
      da[r] = c.rate_clamped[r] ? 0.0 : nu * integral + gamma * nu - (r == target_row ? 1.0 : 0.0);
    }
    if (p.shaping.kind == ShapingKind::Exponential) g.shaping.w += dw;

    outer_add(g.mark_logits, dz, c.hidden);
    outer_add(g.intensity, da, c.hidden);
    for (std::size_t r = 0; r < g.intensity_bias.size(); ++r) g.intensity_bias[r] += da[r];

    dh = dh_carry;
    gemv_t_add(p.mark_logits, dz, dh);
    gemv_t_add(p.intensity, da, dh);

    for (std::size_t i = 0; i < p.hidden; ++i) du[i] = dh[i] * (1.0 - c.hidden[i] * c.hidden[i]);
    outer_add(g.input_time, du, c.features);
    outer_add(g.input_mark, du, p.mark_embedding.row(c.mark));
    std::fill(d_embed.begin(), d_embed.end(), 0.0);
    gemv_t_add(p.input_mark, du, d_embed);
    auto erow = g.mark_embedding.row(c.mark);
    for (std::size_t i = 0; i < p.embed_dim; ++i) erow[i] += d_embed[i];

    std::fill(dh_carry.begin(), dh_carry.end(), 0.0);
    if (jj > 0) {
      outer_add(g.recurrent, du, fwd.steps[jj - 1].hidden);
      gemv_t_add(p.recurrent, du, dh_carry);
    }
    // h_{-1} = 0: the first step adds nothing to the recurrent gradient.
  }
  return out;
}

// ---------------------------------------------------------------------------
// History encoding and prediction

/// Hidden state after consuming events [0, upto] of seq (inclusive).
inline Vector encode_history(const ModelParams& p, const EventSequence& seq, std::size_t upto) {
  if (upto >= seq.events.size()) throw DimensionError("encode_history: index out of range");
  Vector h(p.hidden, 0.0);
  for (std::size_t j = 0; j <= upto; ++j) {
    const std::optional<double> prev = j == 0 ? std::nullopt : std::optional<double>(seq.events[j - 1].time);
    h = step(p, h, featurize(prev, seq.events[j].time, p.features), seq.events[j].mark);
  }
  return h;
}

enum class ExpectationMode {
  /// Mean of s(t|e,h) / integral of s: a proper conditional waiting time.
  Normalized,
  /// integral of t * s(t|e,h) dt taken literally, without normalization.
  Raw,
};

struct ExpectationOptions {
  ExpectationMode mode = ExpectationMode::Normalized;
  double rel_tol = 1e-8;
  /// predict_next uses t_last + fallback_horizon for marks whose expectation fails.
  double fallback_horizon = 1000.0;
};

namespace detail {

/// Elapsed time at which the total compensator reaches `target`.
inline double compensator_inverse(const ShapingFunction& s, double rate, double target) {
  if (s.kind == ShapingKind::Constant || std::abs(s.w) < ShapingFunction::kSmallW) return target / rate;
  const double arg = s.w * target / rate;
  if (arg <= -1.0) return std::numeric_limits<double>::infinity();
  return std::log1p(arg) / s.w;
}

struct WaitingTimeMoments {
  double mass;          // integral over [0, inf) of Lambda*tau*exp(-Lambda*I)
  double mean_elapsed;  // conditional mean of the elapsed time given an event occurs
};

/// Moments of the total-intensity waiting time for log-rates `a`.
inline WaitingTimeMoments waiting_time(const ShapingFunction& s, std::span<const double> a,
                                       const ExpectationOptions& options) {
  const double rate = total_rate(a);
  if (!(rate > 0.0) || !std::isfinite(rate)) throw NumericalError("infinite expected time");
  if (s.kind == ShapingKind::Constant) return {1.0, 1.0 / rate};
  const double limit = s.integral_limit();
  const double mass = std::isinf(limit) ? 1.0 : -std::expm1(-rate * limit);
  if (!(mass > 0.0)) throw NumericalError("infinite expected time");
  // Median of the conditional waiting time sets the quadrature scale.
  const double median_comp = -std::log1p(-0.5 * mass);
  double scale = compensator_inverse(s, rate, median_comp);
  if (!(scale > 0.0) || !std::isfinite(scale)) scale = 1.0 / rate;
  auto integrand = [&](double x) {
    const double dt = x * scale;
    const double log_density = std::log(rate) + s.log_tau(dt) - rate * s.integral(dt);
    return dt * std::exp(log_density) * scale;
  };
  double first_moment;
  try {
    first_moment = integrate(integrand, 0.0, std::numeric_limits<double>::infinity(),
                             {options.rel_tol, 0.0, 4000});
  } catch (const QuadratureError&) {
    throw NumericalError("infinite expected time");
  }
  const double mean = first_moment / mass;
  if (!std::isfinite(mean)) throw NumericalError("infinite expected time");
  return {mass, mean};
}

}  // namespace detail

/// Expected time of the next event given its mark.
///
/// Normalized (default): t_last plus the mean of s(.|mark,h) after normalizing
/// it to a density. Since s(.|e,h) = nu_e * (shared factor), this does not
/// depend on the mark. Constant shaping gives t_last + 1/Lambda in closed form;
/// exponential shaping uses adaptive quadrature.
/// Raw: the unnormalized integral of t * s(t|mark,h) over [t_last, inf).
/// Throws NumericalError("infinite expected time") when the integral diverges.
inline double expected_time(const ModelParams& p, std::span<const double> h, std::size_t mark,
                            double t_last, const ExpectationOptions& options = {}) {
  if (mark >= p.marks) throw DimensionError("expected_time: mark out of range");
  const Vector a = log_rates(p, h);
  const auto moments = detail::waiting_time(p.shaping, a, options);
  if (options.mode == ExpectationMode::Normalized) return t_last + moments.mean_elapsed;
  // Mark mass = nu_mark / Lambda of the (possibly defective) total mass.
  const double mark_mass = std::exp(a[p.intensity_row(mark)]) / total_rate(a) * moments.mass;
  return mark_mass * (t_last + moments.mean_elapsed);
}

struct PredictionCandidate {
  std::size_t mark = 0;
  double expected_time = 0.0;
  /// r(mark|h) * s(expected_time | mark, h)
  double likelihood = 0.0;
};

/// Orders candidates by descending likelihood, then ascending mark id.
inline void rank_candidates(std::vector<PredictionCandidate>& cands) {
  std::stable_sort(cands.begin(), cands.end(), [](const auto& x, const auto& y) {
    if (x.likelihood != y.likelihood) return x.likelihood > y.likelihood;
    return x.mark < y.mark;
  });
}

/// Two-step next-event prediction: expected time per mark, then rank marks by
/// r(e|h) * s(t_e|e,h). Marks whose expectation fails rank last with likelihood 0.
inline std::vector<PredictionCandidate> predict_next(const ModelParams& p, std::span<const double> h,
                                                     double t_last, std::size_t top_n,
                                                     const ExpectationOptions& options = {}) {
  if (top_n > p.marks) throw DimensionError("predict_next: top_n exceeds the number of marks");
  const Vector probs = mark_distribution(p, h);
  std::vector<PredictionCandidate> cands;
  cands.reserve(p.marks);
  // Under normalization the expected time is the same for every mark.
  std::optional<double> shared_time;
  if (options.mode == ExpectationMode::Normalized) {
    try {
      shared_time = expected_time(p, h, 0, t_last, options);
    } catch (const NumericalError&) {
    }
  }
  for (std::size_t e = 0; e < p.marks; ++e) {
    PredictionCandidate c{e, t_last + options.fallback_horizon, 0.0};
    try {
      std::optional<double> t = shared_time;
      if (options.mode == ExpectationMode::Raw) t = expected_time(p, h, e, t_last, options);
      if (t) {
        c.expected_time = *t;
        if (*t >= t_last) c.likelihood = probs[e] * time_density(p, h, e, t_last, *t);
      }
    } catch (const NumericalError&) {
    }
    cands.push_back(c);
  }
  rank_candidates(cands);
  cands.resize(top_n);
  return cands;
}

/// Mark scores for ranking when the next event time is known: r(e|h) * s(t|e,h).
inline Vector given_time_scores(const ModelParams& p, std::span<const double> h, double t_last, double t) {
  const Vector probs = mark_distribution(p, h);
  const Vector a = log_rates(p, h);
  const double elapsed = t - t_last;
  if (elapsed < 0.0) throw DataError("given_time_scores: t precedes the conditioning event");
  const double log_survival = -total_rate(a) * p.shaping.integral(elapsed) + p.shaping.log_tau(elapsed);
  Vector out(p.marks);
  for (std::size_t e = 0; e < p.marks; ++e)
    out[e] = probs[e] * std::exp(a[p.intensity_row(e)] + log_survival);
  return out;
}

}  // namespace rnntd
