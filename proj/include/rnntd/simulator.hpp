#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "rnntd/baselines.hpp"
#include "rnntd/errors.hpp"
#include "rnntd/events.hpp"
#include "rnntd/model.hpp"
#include "rnntd/rng.hpp"

namespace rnntd {

// ---------------------------------------------------------------------------
// Ogata thinning

/// Intensity at t given the accepted times so far.
using IntensityOracle = std::function<double(double t, std::span<const double> accepted)>;

/// Upper bound valid on [t, window_end): returns {bound, window_end}.
struct IntensityBound {
  double bound;
  double window_end;
};
using BoundOracle = std::function<IntensityBound(double t, std::span<const double> accepted)>;

/// First accepted time after t_start, or nullopt when none occurs before horizon.
inline std::optional<double> thinning_next(const IntensityOracle& intensity, const BoundOracle& bound,
                                           double t_start, double horizon, std::span<const double> accepted,
                                           Philox& rng) {
  double t = t_start;
  while (t < horizon) {
    const auto [b, window_end] = bound(t, accepted);
    if (!(window_end > t)) throw NumericalError("thinning: bound window does not advance");
    if (!(b > 0.0)) {
      t = window_end;
      continue;
    }
    const double candidate = t + rng.exponential(b);
    if (candidate >= window_end) {
      t = window_end;
      continue;
    }
    if (candidate >= horizon) return std::nullopt;
    t = candidate;
    const double lambda = intensity(t, accepted);
    if (lambda > b * (1.0 + 1e-12))
      throw NumericalError("thinning: intensity " + std::to_string(lambda) + " exceeds bound " +
                           std::to_string(b) + " at t=" + std::to_string(t));
    if (rng.uniform() * b < lambda) return t;
  }
  return std::nullopt;
}

/// All event times in (t_start, horizon) of the process defined by `intensity`.
inline std::vector<double> thinning_sample(const IntensityOracle& intensity, const BoundOracle& bound,
                                           double t_start, double horizon, Philox& rng,
                                           std::size_t max_events = std::numeric_limits<std::size_t>::max()) {
  std::vector<double> times;
  double t = t_start;
  while (times.size() < max_events) {
    const auto next = thinning_next(intensity, bound, t, horizon, times, rng);
    if (!next) break;
    times.push_back(*next);
    t = *next;
  }
  return times;
}

// ---------------------------------------------------------------------------
// Generators

enum class GeneratorKind { MsppPoisson, Hawkes, MarkovDuration, RnnTdModel };

inline std::string to_string(GeneratorKind k) {
  switch (k) {
    case GeneratorKind::MsppPoisson: return "mspp-poisson";
    case GeneratorKind::Hawkes: return "hawkes";
    case GeneratorKind::MarkovDuration: return "markov-duration";
    case GeneratorKind::RnnTdModel: return "rnn-td-model";
  }
  return "?";
}

inline GeneratorKind parse_generator_kind(const std::string& s) {
  for (auto k : {GeneratorKind::MsppPoisson, GeneratorKind::Hawkes, GeneratorKind::MarkovDuration,
                 GeneratorKind::RnnTdModel})
    if (s == to_string(k)) return k;
  throw DataError("unknown generator kind '" + s + "'");
}

/// First-order mark chain with log-normal gaps keyed by the mark being entered:
/// gap before an event of mark b ~ LogNormal(mu_b, sigma_b).
struct MarkDurationSpec {
  Matrix transition;
  Vector mu;
  Vector sigma;

  static double mean_gap(double mu, double sigma) { return std::exp(mu + 0.5 * sigma * sigma); }
  static double mu_for_mean(double mean, double sigma) { return std::log(mean) - 0.5 * sigma * sigma; }
};

struct GeneratorSpec {
  GeneratorKind kind = GeneratorKind::MsppPoisson;
  double horizon = 1e9;
  std::size_t max_events = 100;
  std::uint64_t seed = 1;
  /// Distribution of the first mark; uniform when empty.
  Vector initial;

  Matrix rates;                   // mspp-poisson: K x K, row = previous mark
  Vector hawkes_base;             // hawkes: per-mark base rate
  double hawkes_alpha = 0.0;      // hawkes: excitation, decay 1
  MarkDurationSpec duration;      // markov-duration
  std::optional<ModelParams> model;  // rnn-td-model

  std::size_t marks() const {
    switch (kind) {
      case GeneratorKind::MsppPoisson: return rates.rows();
      case GeneratorKind::Hawkes: return hawkes_base.size();
      case GeneratorKind::MarkovDuration: return duration.transition.rows();
      case GeneratorKind::RnnTdModel: return model ? model->marks : 0;
    }
    return 0;
  }

  /// Rough expected sequence length at the horizon, for the feasibility check.
  double expected_length() const {
    const double k = static_cast<double>(marks());
    double rate = 0.0;
    switch (kind) {
      case GeneratorKind::MsppPoisson:
        for (double r : rates.values()) rate += r / k;
        return 1.0 + horizon * rate;
      case GeneratorKind::Hawkes: {
        for (double b : hawkes_base) rate += b;
        const double branching = k * hawkes_alpha;
        return branching >= 1.0 ? std::numeric_limits<double>::infinity() : horizon * rate / (1.0 - branching);
      }
      case GeneratorKind::MarkovDuration: {
        double mean = 0.0;
        for (std::size_t b = 0; b < duration.mu.size(); ++b)
          mean += MarkDurationSpec::mean_gap(duration.mu[b], duration.sigma[b]) / k;
        return 1.0 + horizon / mean;
      }
      case GeneratorKind::RnnTdModel: return std::numeric_limits<double>::infinity();
    }
    return 0.0;
  }

  void validate() const {
    if (!(horizon > 0.0)) throw DataError("generator horizon must be > 0");
    const std::size_t k = marks();
    if (k == 0) throw DataError("generator has no marks");
    if (!initial.empty()) {
      if (initial.size() != k) throw DataError("initial distribution has the wrong length");
      for (double p : initial)
        if (!(p >= 0.0)) throw DataError("initial probabilities must be >= 0");
    }
    switch (kind) {
      case GeneratorKind::MsppPoisson:
        if (rates.cols() != k) throw DataError("mspp-poisson rates must be square");
        for (double r : rates.values())
          if (!(r > 0.0)) throw DataError("mspp-poisson rates must be > 0");
        break;
      case GeneratorKind::Hawkes:
        for (double b : hawkes_base)
          if (!(b > 0.0)) throw DataError("hawkes base rates must be > 0");
        if (!(hawkes_alpha >= 0.0)) throw DataError("hawkes alpha must be >= 0");
        break;
      case GeneratorKind::MarkovDuration:
        if (duration.transition.cols() != k || duration.mu.size() != k || duration.sigma.size() != k)
          throw DataError("markov-duration parameters have inconsistent sizes");
        for (std::size_t a = 0; a < k; ++a) {
          double s = 0.0;
          for (double p : duration.transition.row(a)) {
            if (!(p >= 0.0)) throw DataError("transition probabilities must be >= 0");
            s += p;
          }
          if (std::abs(s - 1.0) > 1e-9) throw DataError("transition rows must sum to 1");
          if (!(duration.sigma[a] > 0.0)) throw DataError("log-normal sigma must be > 0");
        }
        break;
      case GeneratorKind::RnnTdModel:
        model->validate();
        break;
    }
    if (expected_length() < 3.0 || max_events < 3)
      throw DataError("infeasible generator spec: expected sequence length below 3 at the horizon");
  }
};

inline Matrix matrix_from_json(const nlohmann::json& j, const std::string& what) {
  if (!j.is_array() || j.empty()) throw DataError(what + " must be a nonempty array of rows");
  Matrix m(j.size(), j[0].size());
  for (std::size_t r = 0; r < j.size(); ++r) {
    if (j[r].size() != m.cols()) throw DataError(what + " rows have different lengths");
    for (std::size_t c = 0; c < m.cols(); ++c) m(r, c) = j[r][c].get<double>();
  }
  return m;
}

inline nlohmann::json matrix_to_json(const Matrix& m) {
  auto j = nlohmann::json::array();
  for (std::size_t r = 0; r < m.rows(); ++r) j.push_back(std::vector<double>(m.row(r).begin(), m.row(r).end()));
  return j;
}

/// Parses a generator spec. Recognized keys: kind, horizon, max_events, seed,
/// initial, and per kind: rates (mspp-poisson); base, alpha (hawkes);
/// transition plus mu/sigma or mean_gap/sigma (markov-duration); model, a
/// checkpoint path, or init {hidden, embed, marks, shaping, scale, w}
/// (rnn-td-model).
inline GeneratorSpec parse_generator_spec(const nlohmann::json& j) {
  try {
    GeneratorSpec s;
    s.kind = parse_generator_kind(j.at("kind").get<std::string>());
    s.horizon = j.value("horizon", s.horizon);
    s.max_events = j.value("max_events", s.max_events);
    s.seed = j.value("seed", s.seed);
    if (j.contains("initial")) s.initial = j["initial"].get<Vector>();
    switch (s.kind) {
      case GeneratorKind::MsppPoisson: s.rates = matrix_from_json(j.at("rates"), "rates"); break;
      case GeneratorKind::Hawkes:
        s.hawkes_base = j.at("base").get<Vector>();
        s.hawkes_alpha = j.at("alpha").get<double>();
        break;
      case GeneratorKind::MarkovDuration: {
        s.duration.transition = matrix_from_json(j.at("transition"), "transition");
        s.duration.sigma = j.at("sigma").get<Vector>();
        if (j.contains("mu")) {
          s.duration.mu = j["mu"].get<Vector>();
        } else {
          const auto means = j.at("mean_gap").get<Vector>();
          if (means.size() != s.duration.sigma.size()) throw DataError("mean_gap and sigma differ in length");
          for (std::size_t b = 0; b < means.size(); ++b)
            s.duration.mu.push_back(MarkDurationSpec::mu_for_mean(means[b], s.duration.sigma[b]));
        }
        break;
      }
      case GeneratorKind::RnnTdModel: {
        if (j.contains("model")) {
          s.model = load_model(Checkpoint::load(j["model"].get<std::string>()));
        } else {
          const auto& init = j.at("init");
          FeatureConfig features{init.value("calendar", false), 0};
          const ModelDims dims{init.value("hidden", std::size_t{4}), init.at("marks").get<std::size_t>(),
                               init.value("embed", std::size_t{2}), features};
          const auto shaping = parse_shaping(init.value("shaping", std::string("const")));
          const double scale = init.value("scale", 0.0);
          ModelParams p = ModelParams::zeros(dims, shaping);
          if (scale > 0.0) {
            Philox rng(s.seed, 0x67656e);
            p.for_each_block([&](std::string_view, std::span<double> v) {
              for (double& x : v) x = scale * rng.normal();
            });
          }
          if (shaping == ShapingKind::Exponential) p.shaping.w = init.value("w", 0.0);
          s.model = std::move(p);
        }
        break;
      }
    }
    s.validate();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("generator spec: ") + e.what());
  }
}

struct SequenceTruth {
  std::string id;
  /// NLL of the events after the first under the generator, given the first.
  double nll = 0.0;
  /// The same events scored with the mark-then-time factorization r(e) * s(t|e)
  /// at the generator's parameters (mspp-poisson and rnn-td-model only).
  std::optional<double> nll_rnntd_form;
  std::size_t transitions = 0;
};

struct GeneratedCorpus {
  std::vector<EventSequence> sequences;
  MarkVocabulary vocabulary;
  std::vector<SequenceTruth> truth;
  std::size_t resamples = 0;
};

namespace detail {

inline std::size_t draw_initial(const GeneratorSpec& spec, Philox& rng) {
  if (spec.initial.empty()) return rng.index(spec.marks());
  return rng.categorical(spec.initial);
}

inline PointProcessModel mspp_truth(const GeneratorSpec& spec) {
  return PointProcessModel{PointProcessKind::MsppPoisson, spec.rates, 0.0};
}

inline PointProcessModel hawkes_truth(const GeneratorSpec& spec) {
  return PointProcessModel{PointProcessKind::PpHawkes, Matrix(1, spec.hawkes_base.size(), spec.hawkes_base),
                           spec.hawkes_alpha};
}

inline std::vector<Event> sample_mspp(const GeneratorSpec& spec, Philox& rng) {
  std::vector<Event> ev{{0.0, draw_initial(spec, rng)}};
  while (ev.size() < spec.max_events) {
    const auto row = spec.rates.row(ev.back().mark);
    double total = 0.0;
    for (double r : row) total += r;
    const double t = ev.back().time + rng.exponential(total);
    if (t > spec.horizon) break;
    ev.push_back({t, rng.categorical(row)});
  }
  return ev;
}

inline std::vector<Event> sample_hawkes(const GeneratorSpec& spec, Philox& rng) {
  const auto truth = hawkes_truth(spec);
  const double k = static_cast<double>(truth.marks());
  double base_total = 0.0;
  for (double b : spec.hawkes_base) base_total += b;
  std::vector<Event> ev;
  double excitation = 0.0, t_last = 0.0;  // excitation at t_last, inclusive
  auto total_at = [&](double t) { return base_total + k * spec.hawkes_alpha * excitation * std::exp(-(t - t_last)); };
  const IntensityOracle intensity = [&](double t, std::span<const double>) { return total_at(t); };
  const BoundOracle bound = [&](double t, std::span<const double>) {
    return IntensityBound{total_at(t), std::numeric_limits<double>::infinity()};
  };
  double t = 0.0;
  while (ev.size() < spec.max_events) {
    const auto next = thinning_next(intensity, bound, t, spec.horizon, {}, rng);
    if (!next) break;
    t = *next;
    const double decayed = excitation * std::exp(-(t - t_last));
    Vector lambda(spec.hawkes_base.size());
    for (std::size_t b = 0; b < lambda.size(); ++b) lambda[b] = spec.hawkes_base[b] + spec.hawkes_alpha * decayed;
    ev.push_back({t, rng.categorical(lambda)});
    excitation = decayed + 1.0;
    t_last = t;
  }
  return ev;
}

inline double sample_lognormal(double mu, double sigma, Philox& rng) { return std::exp(mu + sigma * rng.normal()); }

inline std::vector<Event> sample_markov_duration(const GeneratorSpec& spec, Philox& rng) {
  const auto& d = spec.duration;
  std::vector<Event> ev{{0.0, draw_initial(spec, rng)}};
  while (ev.size() < spec.max_events) {
    const std::size_t b = rng.categorical(d.transition.row(ev.back().mark));
    const double t = ev.back().time + sample_lognormal(d.mu[b], d.sigma[b], rng);
    if (t > spec.horizon) break;
    ev.push_back({t, b});
  }
  return ev;
}

/// Next event of the normalized RNN-TD process: the waiting time follows the
/// total intensity Lambda * tau, the mark is drawn proportional to r_e * nu_e.
inline std::vector<Event> sample_rnntd(const GeneratorSpec& spec, Philox& rng) {
  const ModelParams& p = *spec.model;
  std::vector<Event> ev{{0.0, draw_initial(spec, rng)}};
  Vector h(p.hidden, 0.0);
  while (ev.size() < spec.max_events) {
    const std::size_t j = ev.size() - 1;
    const std::optional<double> prev = j ? std::optional<double>(ev[j - 1].time) : std::nullopt;
    h = step(p, h, featurize(prev, ev[j].time, p.features), ev[j].mark);
    const Vector a = log_rates(p, h);
    const double rate = total_rate(a);
    const double t_last = ev[j].time;
    const IntensityOracle intensity = [&](double t, std::span<const double>) {
      return rate * p.shaping.tau(t - t_last);
    };
    const BoundOracle bound = [&](double t, std::span<const double>) {
      const double window = 1.0 / rate;
      if (p.shaping.kind == ShapingKind::Exponential && p.shaping.w > 0.0)
        return IntensityBound{rate * p.shaping.tau(t + window - t_last), t + window};
      return IntensityBound{rate * p.shaping.tau(t - t_last), t + window};
    };
    if (!(rate > 0.0) || !std::isfinite(rate)) break;
    const auto next = thinning_next(intensity, bound, t_last, spec.horizon, {}, rng);
    if (!next) break;
    const Vector r = mark_distribution(p, h);
    Vector weights(p.marks);
    for (std::size_t e = 0; e < p.marks; ++e) weights[e] = r[e] * std::exp(a[p.intensity_row(e)]);
    ev.push_back({*next, rng.categorical(weights)});
  }
  return ev;
}

inline double markov_duration_nll(const MarkDurationSpec& d, const EventSequence& seq) {
  double total = 0.0;
  for (std::size_t j = 1; j < seq.size(); ++j) {
    const std::size_t a = seq.events[j - 1].mark, b = seq.events[j].mark;
    const double gap = seq.events[j].time - seq.events[j - 1].time;
    const double z = (std::log(gap) - d.mu[b]) / d.sigma[b];
    const double log_pdf = -std::log(gap * d.sigma[b]) - 0.5 * std::log(2 * std::numbers::pi) - 0.5 * z * z;
    total -= std::log(d.transition(a, b)) + log_pdf;
  }
  return total;
}

/// -sum [log(R_ab / Lambda_a) + log R_ab - Lambda_a * gap]: the mark-then-time
/// likelihood at r = R_a / Lambda_a and nu = R_a.
inline double mspp_rnntd_form_nll(const Matrix& rates, const EventSequence& seq) {
  double total = 0.0;
  for (std::size_t j = 1; j < seq.size(); ++j) {
    const auto row = rates.row(seq.events[j - 1].mark);
    double lambda = 0.0;
    for (double r : row) lambda += r;
    const double r_b = row[seq.events[j].mark];
    total -= std::log(r_b / lambda) + std::log(r_b) - lambda * (seq.events[j].time - seq.events[j - 1].time);
  }
  return total;
}

}  // namespace detail

/// Sequence i uses Philox stream i + 1 of spec.seed, so any sequence can be
/// regenerated independently. Sequences shorter than 3 events are redrawn.
inline GeneratedCorpus generate_corpus(const GeneratorSpec& spec, std::size_t n_sequences) {
  spec.validate();
  GeneratedCorpus out;
  out.vocabulary = MarkVocabulary::numbered(spec.marks());
  constexpr std::size_t kMaxAttempts = 1000;
  for (std::size_t i = 0; i < n_sequences; ++i) {
    Philox rng(spec.seed, i + 1);
    EventSequence seq{"sim" + std::to_string(i), {}};
    for (std::size_t attempt = 0;; ++attempt) {
      if (attempt == kMaxAttempts)
        throw DataError("infeasible generator spec: no sequence of length >= 3 after 1000 draws");
      switch (spec.kind) {
        case GeneratorKind::MsppPoisson: seq.events = detail::sample_mspp(spec, rng); break;
        case GeneratorKind::Hawkes: seq.events = detail::sample_hawkes(spec, rng); break;
        case GeneratorKind::MarkovDuration: seq.events = detail::sample_markov_duration(spec, rng); break;
        case GeneratorKind::RnnTdModel: seq.events = detail::sample_rnntd(spec, rng); break;
      }
      if (seq.size() >= 3) break;
      ++out.resamples;
    }
    SequenceTruth truth{seq.id, 0.0, std::nullopt, seq.size() - 1};
    switch (spec.kind) {
      case GeneratorKind::MsppPoisson:
        truth.nll = poisson_nll(detail::mspp_truth(spec), seq);
        truth.nll_rnntd_form = detail::mspp_rnntd_form_nll(spec.rates, seq);
        break;
      case GeneratorKind::Hawkes: truth.nll = hawkes_nll(detail::hawkes_truth(spec), seq); break;
      case GeneratorKind::MarkovDuration: truth.nll = detail::markov_duration_nll(spec.duration, seq); break;
      case GeneratorKind::RnnTdModel:
        truth.nll = nll(*spec.model, seq).value;
        truth.nll_rnntd_form = truth.nll;
        break;
    }
    out.truth.push_back(std::move(truth));
    out.sequences.push_back(std::move(seq));
  }
  return out;
}

/// Ground-truth parameters plus per-sequence NLL records, as JSON.
inline nlohmann::json ground_truth_json(const GeneratorSpec& spec, const GeneratedCorpus& corpus) {
  nlohmann::json j{{"kind", to_string(spec.kind)}, {"seed", spec.seed}, {"horizon", spec.horizon},
                   {"max_events", spec.max_events}, {"marks", spec.marks()}, {"resamples", corpus.resamples}};
  switch (spec.kind) {
    case GeneratorKind::MsppPoisson: j["rates"] = matrix_to_json(spec.rates); break;
    case GeneratorKind::Hawkes:
      j["base"] = spec.hawkes_base;
      j["alpha"] = spec.hawkes_alpha;
      break;
    case GeneratorKind::MarkovDuration:
      j["transition"] = matrix_to_json(spec.duration.transition);
      j["mu"] = spec.duration.mu;
      j["sigma"] = spec.duration.sigma;
      break;
    case GeneratorKind::RnnTdModel:
      j["shaping"] = std::string(to_string(spec.model->shaping.kind));
      j["w"] = spec.model->shaping.w;
      break;
  }
  double total = 0.0, total_form = 0.0;
  std::size_t steps = 0;
  auto seqs = nlohmann::json::array();
  for (const auto& t : corpus.truth) {
    nlohmann::json s{{"id", t.id}, {"nll", t.nll}, {"transitions", t.transitions}};
    if (t.nll_rnntd_form) {
      s["nll_rnntd_form"] = *t.nll_rnntd_form;
      total_form += *t.nll_rnntd_form;
    }
    total += t.nll;
    steps += t.transitions;
    seqs.push_back(std::move(s));
  }
  j["mean_nll"] = total / static_cast<double>(steps);
  if (!corpus.truth.empty() && corpus.truth.front().nll_rnntd_form)
    j["mean_nll_rnntd_form"] = total_form / static_cast<double>(steps);
  j["sequences"] = std::move(seqs);
  return j;
}

}  // namespace rnntd
