#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "rnntd/baselines.hpp"
#include "rnntd/errors.hpp"
#include "rnntd/events.hpp"
#include "rnntd/model.hpp"

namespace rnntd {

struct RankedPrediction {
  std::size_t true_mark = 0;
  /// 1-based rank of the true mark.
  std::size_t rank = 1;
  /// NaN when the model makes no time prediction.
  double predicted_time = std::numeric_limits<double>::quiet_NaN();
  double true_time = 0.0;
};

/// 1 + number of marks scoring above the true mark, counting equal scores of
/// lower mark ids as above (ties broken by ascending mark id).
inline std::size_t rank_of(std::span<const double> scores, std::size_t true_mark) {
  if (true_mark >= scores.size()) throw DimensionError("rank_of: true mark out of range");
  const double s = scores[true_mark];
  std::size_t rank = 1;
  for (std::size_t b = 0; b < scores.size(); ++b)
    if (scores[b] > s || (scores[b] == s && b < true_mark)) ++rank;
  return rank;
}

inline double mrr(std::span<const RankedPrediction> predictions) {
  if (predictions.empty()) throw DataError("mrr: no predictions");
  double s = 0.0;
  for (const auto& p : predictions) s += 1.0 / static_cast<double>(p.rank);
  return s / static_cast<double>(predictions.size());
}

inline double acc_at_k(std::span<const RankedPrediction> predictions, std::size_t k) {
  if (predictions.empty()) throw DataError("acc_at_k: no predictions");
  if (k == 0) throw DataError("acc_at_k: k must be >= 1");
  std::size_t hits = 0;
  for (const auto& p : predictions) hits += p.rank <= k;
  return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

/// Fraction of transitions with |predicted - true| < theta (strict). Missing
/// time predictions count as misses.
inline double acc_at_theta(std::span<const RankedPrediction> predictions, double theta) {
  if (predictions.empty()) throw DataError("acc_at_theta: no predictions");
  if (!(theta > 0.0)) throw DataError("acc_at_theta: theta must be > 0");
  std::size_t hits = 0;
  for (const auto& p : predictions) hits += std::abs(p.predicted_time - p.true_time) < theta;
  return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

/// n log-spaced points from lo to hi inclusive.
inline std::vector<double> log_grid(double lo, double hi, std::size_t n) {
  if (!(lo > 0.0 && hi > lo) || n < 2) throw DataError("theta grid needs 0 < lo < hi and >= 2 points");
  std::vector<double> g(n);
  for (std::size_t i = 0; i < n; ++i)
    g[i] = std::exp(std::log(lo) + (std::log(hi) - std::log(lo)) * static_cast<double>(i) / static_cast<double>(n - 1));
  g.front() = lo;
  g.back() = hi;
  return g;
}

/// "log:LO:HI:N", "memetracker" (log:0.1:100:50), "dianping" (log:1:1440:50),
/// or a comma-separated list of values.
inline std::vector<double> parse_theta_grid(const std::string& spec) {
  if (spec == "memetracker") return log_grid(0.1, 100, 50);
  if (spec == "dianping") return log_grid(1, 1440, 50);
  std::vector<std::string> parts;
  const char sep = spec.rfind("log:", 0) == 0 ? ':' : ',';
  std::size_t pos = sep == ':' ? 4 : 0;
  while (pos <= spec.size()) {
    const auto next = std::min(spec.find(sep, pos), spec.size());
    parts.push_back(spec.substr(pos, next - pos));
    pos = next + 1;
  }
  try {
    if (sep == ':') {
      if (parts.size() != 3) throw DataError("theta grid 'log:LO:HI:N' needs three fields");
      return log_grid(std::stod(parts[0]), std::stod(parts[1]), std::stoul(parts[2]));
    }
    std::vector<double> g;
    for (const auto& p : parts) g.push_back(std::stod(p));
    if (g.empty()) throw DataError("empty theta grid");
    for (std::size_t i = 0; i < g.size(); ++i)
      if (!(g[i] > 0.0) || (i && g[i] <= g[i - 1])) throw DataError("theta values must be positive and increasing");
    return g;
  } catch (const std::logic_error&) {
    throw DataError("cannot parse theta grid '" + spec + "'");
  }
}

// ---------------------------------------------------------------------------
// Predictors

/// Walks one sequence under teacher forcing.
class SequenceWalker {
 public:
  virtual ~SequenceWalker() = default;
  /// Appends the next true event to the history.
  virtual void observe(const Event& e) = 0;
  /// Scores used to rank marks without knowing the next time.
  virtual Vector mark_scores() = 0;
  /// Scores when the next event time is known; nullopt if unsupported.
  virtual std::optional<Vector> scores_at(double t) = 0;
  /// Expected next-event time given the true mark; nullopt if unsupported.
  virtual std::optional<double> predict_time(std::size_t mark) = 0;
};

class Predictor {
 public:
  virtual ~Predictor() = default;
  virtual std::string name() const = 0;
  virtual std::size_t marks() const = 0;
  virtual std::unique_ptr<SequenceWalker> walker() const = 0;
};

class NeuralPredictor final : public Predictor {
 public:
  NeuralPredictor(ModelParams params, std::string name, ExpectationOptions options = {})
      : params_(std::move(params)), name_(std::move(name)), options_(options) {}

  std::string name() const override { return name_; }
  std::size_t marks() const override { return params_.marks; }
  const ModelParams& params() const noexcept { return params_; }

  std::unique_ptr<SequenceWalker> walker() const override { return std::make_unique<Walker>(*this); }

 private:
  class Walker final : public SequenceWalker {
   public:
    explicit Walker(const NeuralPredictor& owner) : p_(owner.params_), options_(owner.options_), h_(p_.hidden, 0.0) {}

    void observe(const Event& e) override {
      h_ = step(p_, h_, featurize(last_time_, e.time, p_.features), e.mark);
      last_time_ = e.time;
    }
    /// Likelihood r(e) * s(t_hat | e) at the predicted time of each mark.
    Vector mark_scores() override {
      Vector scores(p_.marks, 0.0);
      for (const auto& c : predict_next(p_, h_, *last_time_, p_.marks, options_)) scores[c.mark] = c.likelihood;
      return scores;
    }
    std::optional<Vector> scores_at(double t) override { return given_time_scores(p_, h_, *last_time_, t); }
    std::optional<double> predict_time(std::size_t mark) override {
      try {
        return expected_time(p_, h_, mark, *last_time_, options_);
      } catch (const NumericalError&) {
        return std::nullopt;
      }
    }

   private:
    const ModelParams& p_;
    ExpectationOptions options_;
    Vector h_;
    std::optional<double> last_time_;
  };

  ModelParams params_;
  std::string name_;
  ExpectationOptions options_;
};

class MarkovPredictor final : public Predictor {
 public:
  explicit MarkovPredictor(MarkovModel model) : model_(std::move(model)) {}
  std::string name() const override { return "mc" + std::to_string(model_.order); }
  std::size_t marks() const override { return model_.marks; }

  std::unique_ptr<SequenceWalker> walker() const override { return std::make_unique<Walker>(model_); }

 private:
  class Walker final : public SequenceWalker {
   public:
    explicit Walker(const MarkovModel& m) : m_(m) {}
    void observe(const Event& e) override { history_.push_back(e.mark); }
    Vector mark_scores() override { return m_.probabilities(history_); }
    std::optional<Vector> scores_at(double) override { return std::nullopt; }
    std::optional<double> predict_time(std::size_t) override { return std::nullopt; }

   private:
    const MarkovModel& m_;
    std::vector<std::size_t> history_;
  };

  MarkovModel model_;
};

class PointProcessPredictor final : public Predictor {
 public:
  explicit PointProcessPredictor(PointProcessModel model) : model_(std::move(model)) {}
  std::string name() const override { return to_string(model_.kind); }
  std::size_t marks() const override { return model_.marks(); }

  std::unique_ptr<SequenceWalker> walker() const override { return std::make_unique<Walker>(model_); }

 private:
  class Walker final : public SequenceWalker {
   public:
    explicit Walker(const PointProcessModel& m) : m_(m) {}
    void observe(const Event& e) override {
      excitation_ = history_.empty() ? 1.0 : excitation_ * std::exp(-(e.time - history_.back().time)) + 1.0;
      history_.push_back(e);
    }
    /// Probability that the next event has each mark: proportional to the
    /// intensities just after the last event.
    Vector mark_scores() override { return scores_at(history_.back().time).value(); }
    std::optional<Vector> scores_at(double t) override {
      const auto row = m_.base_row(history_.back().mark);
      const double excite = m_.alpha * excitation_ * std::exp(-(t - history_.back().time));
      Vector s(row.size());
      for (std::size_t b = 0; b < row.size(); ++b) s[b] = row[b] + excite;
      return s;
    }
    std::optional<double> predict_time(std::size_t mark) override { return pp_predict_time(m_, history_, mark); }

   private:
    const PointProcessModel& m_;
    std::vector<Event> history_;
    double excitation_ = 0.0;
  };

  PointProcessModel model_;
};

// ---------------------------------------------------------------------------
// Evaluation

enum class EvalMode { Free, GivenTime };

inline std::string to_string(EvalMode m) { return m == EvalMode::Free ? "free" : "given-time"; }

inline EvalMode parse_eval_mode(const std::string& s) {
  if (s == "free") return EvalMode::Free;
  if (s == "given-time") return EvalMode::GivenTime;
  throw DataError("unknown eval mode '" + s + "' (expected free|given-time)");
}

inline constexpr std::array<std::size_t, 5> kAccuracyCutoffs{1, 3, 5, 10, 20};

struct MetricsReport {
  std::string model;
  EvalMode mode = EvalMode::Free;
  std::size_t transitions = 0;
  double mrr = 0.0;
  std::vector<std::pair<std::size_t, double>> acc_at_k;
  std::vector<double> thetas;
  std::vector<double> acc_at_theta;
  bool has_time = false;

  double acc_k(std::size_t k) const {
    for (const auto& [kk, v] : acc_at_k)
      if (kk == k) return v;
    throw DataError("acc@" + std::to_string(k) + " not in report");
  }
  double acc_theta(double theta) const {
    for (std::size_t i = 0; i < thetas.size(); ++i)
      if (thetas[i] == theta) return acc_at_theta[i];
    throw DataError("theta " + std::to_string(theta) + " not in report grid");
  }
};

inline MetricsReport summarize(std::span<const RankedPrediction> preds, const std::vector<double>& thetas,
                               const std::string& model, EvalMode mode) {
  MetricsReport r;
  r.model = model;
  r.mode = mode;
  r.transitions = preds.size();
  r.mrr = mrr(preds);
  for (std::size_t k : kAccuracyCutoffs) r.acc_at_k.emplace_back(k, acc_at_k(preds, k));
  r.thetas = thetas;
  for (double th : thetas) r.acc_at_theta.push_back(acc_at_theta(preds, th));
  r.has_time = std::any_of(preds.begin(), preds.end(), [](const auto& p) { return !std::isnan(p.predicted_time); });
  for (std::size_t i = 1; i < r.acc_at_k.size(); ++i)
    if (r.acc_at_k[i].second < r.acc_at_k[i - 1].second) throw NumericalError("acc@k is not monotone");
  for (std::size_t i = 1; i < r.acc_at_theta.size(); ++i)
    if (r.thetas[i] > r.thetas[i - 1] && r.acc_at_theta[i] < r.acc_at_theta[i - 1])
      throw NumericalError("acc@theta is not monotone");
  if (r.mrr < r.acc_at_k.front().second) throw NumericalError("mrr below acc@1");
  return r;
}

/// Teacher-forced predictions at every transition of every sequence.
inline std::vector<RankedPrediction> collect_predictions(const Predictor& model, std::span<const EventSequence> data,
                                                         EvalMode mode) {
  std::vector<RankedPrediction> out;
  for (const auto& seq : data) {
    validate_sequence(seq, model.marks());
    if (seq.size() < 2) continue;
    auto w = model.walker();
    w->observe(seq.events[0]);
    for (std::size_t j = 1; j < seq.size(); ++j) {
      const auto& next = seq.events[j];
      std::optional<Vector> scores;
      if (mode == EvalMode::GivenTime) scores = w->scores_at(next.time);
      if (!scores) scores = w->mark_scores();
      RankedPrediction p;
      p.true_mark = next.mark;
      p.rank = rank_of(*scores, next.mark);
      p.true_time = next.time;
      if (auto t = w->predict_time(next.mark)) p.predicted_time = *t;
      out.push_back(p);
      w->observe(next);
    }
  }
  if (out.empty()) throw DataError("evaluation split has no transitions");
  return out;
}

inline MetricsReport evaluate(const Predictor& model, std::span<const EventSequence> data, EvalMode mode,
                              const std::vector<double>& thetas) {
  const auto preds = collect_predictions(model, data, mode);
  return summarize(preds, thetas, model.name(), mode);
}

inline void check_vocabulary(const Predictor& model, const MarkVocabulary& vocab) {
  if (model.marks() != vocab.size())
    throw DataError("model has " + std::to_string(model.marks()) + " marks but the data vocabulary has " +
                    std::to_string(vocab.size()));
}

// ---------------------------------------------------------------------------
// Reports

inline void write_table(std::ostream& out, const std::vector<MetricsReport>& reports,
                        std::span<const double> show_thetas = {}) {
  char buf[256];
  std::string header = "model            mode        n        MRR     Acc@1   Acc@3   Acc@5   Acc@10  Acc@20";
  for (double th : show_thetas) {
    std::snprintf(buf, sizeof buf, "  Acc@%gh", th);
    header += buf;
  }
  out << header << '\n';
  for (const auto& r : reports) {
    std::snprintf(buf, sizeof buf, "%-16s %-11s %-8zu %.4f", r.model.c_str(), to_string(r.mode).c_str(),
                  r.transitions, r.mrr);
    out << buf;
    for (const auto& [k, v] : r.acc_at_k) {
      std::snprintf(buf, sizeof buf, "  %.4f", v);
      out << buf;
    }
    for (double th : show_thetas) {
      if (r.has_time) {
        std::snprintf(buf, sizeof buf, "  %.4f", r.acc_theta(th));
        out << buf;
      } else {
        out << "  -     ";
      }
    }
    out << '\n';
  }
}

inline nlohmann::json report_json(const MetricsReport& r) {
  nlohmann::json acc = nlohmann::json::object();
  for (const auto& [k, v] : r.acc_at_k) acc[std::to_string(k)] = v;
  nlohmann::json j{{"model", r.model}, {"mode", to_string(r.mode)}, {"transitions", r.transitions},
                   {"mrr", r.mrr},     {"acc_at_k", acc},         {"has_time", r.has_time}};
  if (r.has_time) {
    j["theta"] = r.thetas;
    j["acc_at_theta"] = r.acc_at_theta;
  }
  return j;
}

inline MetricsReport report_from_json(const nlohmann::json& j) {
  MetricsReport r;
  r.model = j.at("model").get<std::string>();
  r.mode = parse_eval_mode(j.at("mode").get<std::string>());
  r.transitions = j.at("transitions").get<std::size_t>();
  r.mrr = j.at("mrr").get<double>();
  for (auto& [k, v] : j.at("acc_at_k").items()) r.acc_at_k.emplace_back(std::stoul(k), v.get<double>());
  std::sort(r.acc_at_k.begin(), r.acc_at_k.end());
  r.has_time = j.value("has_time", false);
  if (r.has_time) {
    r.thetas = j.at("theta").get<std::vector<double>>();
    r.acc_at_theta = j.at("acc_at_theta").get<std::vector<double>>();
  }
  return r;
}

/// Acc@theta curves on a log-scaled theta axis as a standalone SVG document.
inline void write_acc_theta_svg(std::ostream& out, const std::vector<MetricsReport>& reports) {
  std::vector<const MetricsReport*> curves;
  for (const auto& r : reports)
    if (r.has_time && !r.thetas.empty()) curves.push_back(&r);
  if (curves.empty()) throw DataError("plot: no report carries time predictions");
  double lo = curves.front()->thetas.front(), hi = curves.front()->thetas.back();
  for (const auto* r : curves) {
    lo = std::min(lo, r->thetas.front());
    hi = std::max(hi, r->thetas.back());
  }
  if (!(hi > lo)) hi = lo * 10;
  const double width = 640, height = 420, left = 60, right = 160, top = 20, bottom = 50;
  const double pw = width - left - right, ph = height - top - bottom;
  auto x_of = [&](double th) { return left + pw * (std::log(th) - std::log(lo)) / (std::log(hi) - std::log(lo)); };
  auto y_of = [&](double a) { return top + ph * (1.0 - a); };
  static constexpr const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
                                            "#e377c2", "#7f7f7f", "#bcbd22"};
  char buf[256];
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  std::snprintf(buf, sizeof buf, "<rect x=\"%g\" y=\"%g\" width=\"%g\" height=\"%g\" fill=\"none\" stroke=\"black\"/>\n",
                left, top, pw, ph);
  out << buf;
  for (int i = 0; i <= 4; ++i) {
    const double a = i / 4.0;
    std::snprintf(buf, sizeof buf, "<text x=\"%g\" y=\"%g\" text-anchor=\"end\">%.2f</text>\n", left - 6,
                  y_of(a) + 4, a);
    out << buf;
  }
  for (double decade = std::pow(10.0, std::floor(std::log10(lo))); decade <= hi * 1.0001; decade *= 10) {
    if (decade < lo * 0.9999) continue;
    std::snprintf(buf, sizeof buf, "<text x=\"%g\" y=\"%g\" text-anchor=\"middle\">%g</text>\n", x_of(decade),
                  top + ph + 16, decade);
    out << buf;
  }
  std::snprintf(buf, sizeof buf, "<text x=\"%g\" y=\"%g\" text-anchor=\"middle\">theta (hours)</text>\n",
                left + pw / 2, height - 12);
  out << buf;
  std::snprintf(buf, sizeof buf,
                "<text x=\"14\" y=\"%g\" text-anchor=\"middle\" transform=\"rotate(-90 14 %g)\">Acc@theta</text>\n",
                top + ph / 2, top + ph / 2);
  out << buf;
  for (std::size_t c = 0; c < curves.size(); ++c) {
    const char* color = kColors[c % std::size(kColors)];
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < curves[c]->thetas.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%s%.2f,%.2f", i ? " " : "", x_of(curves[c]->thetas[i]),
                    y_of(curves[c]->acc_at_theta[i]));
      out << buf;
    }
    out << "\"/>\n";
    const double ly = top + 16 + 18 * static_cast<double>(c);
    std::snprintf(buf, sizeof buf,
                  "<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"%s\" stroke-width=\"2\"/>"
                  "<text x=\"%g\" y=\"%g\">%s (%s)</text>\n",
                  left + pw + 10, ly, left + pw + 30, ly, color, left + pw + 36, ly + 4, curves[c]->model.c_str(),
                  to_string(curves[c]->mode).c_str());
    out << buf;
  }
  out << "</svg>\n";
}

}  // namespace rnntd
