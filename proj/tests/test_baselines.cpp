#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "rnntd/baselines.hpp"
#include "rnntd/simulator.hpp"
#include "test_support.hpp"

using namespace rnntd;

namespace {

EventSequence seq_of(std::initializer_list<Event> events) { return {"s", events}; }

std::vector<EventSequence> random_corpus(std::size_t n, std::size_t k, std::uint64_t seed) {
  Philox rng(seed, 0);
  std::vector<EventSequence> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(rnntd::testing::random_sequence(rng, k, 3 + rng.index(15)));
  return out;
}

}  // namespace

// --- Markov chains ---------------------------------------------------------

TEST(Markov, AlternatingSequenceOrderOne) {
  const std::vector<EventSequence> c{seq_of({{0, 0}, {1, 1}, {2, 0}, {3, 1}})};
  const auto m = mc_fit(c, 1, 2, 0.0);
  const std::vector<std::size_t> a{0}, b{1};
  EXPECT_EQ(m.probabilities(a)[1], 1.0);
  EXPECT_EQ(m.probabilities(b)[0], 1.0);
}

TEST(Markov, SmoothingOneUnseenContextIsUniform) {
  const std::vector<EventSequence> c{seq_of({{0, 0}, {1, 0}, {2, 0}})};
  const auto m = mc_fit(c, 1, 2, 1.0);
  const std::vector<std::size_t> unseen{1};
  EXPECT_EQ(m.probabilities(unseen)[0], 0.5);
  EXPECT_EQ(m.probabilities(unseen)[1], 0.5);
}

TEST(Markov, SequenceStartBacksOffToShorterContext) {
  const std::vector<EventSequence> c{seq_of({{0, 0}, {1, 1}, {2, 1}, {3, 0}, {4, 1}})};
  const auto m = mc_fit(c, 3, 2, 0.0);
  // Only one mark of history: order-1 estimate P(. | 0) = (0, 1).
  const std::vector<std::size_t> h{0};
  EXPECT_EQ(m.probabilities(h)[1], 1.0);
  // Unseen order-3 context (1,1,1) backs off to (1,1) then (1).
  const std::vector<std::size_t> h3{1, 1, 1};
  EXPECT_DOUBLE_EQ(m.probabilities(h3)[0], 1.0);
}

TEST(Markov, MatchesBruteForceCounter) {
  const auto corpus = random_corpus(100, 4, 77);
  for (std::size_t order = 1; order <= 3; ++order) {
    const double s = 0.01;
    const auto m = mc_fit(corpus, order, 4, s);
    std::vector<std::size_t> ctx(order, 0);
    for (std::size_t code = 0; code < static_cast<std::size_t>(std::pow(4, order)); ++code) {
      for (std::size_t i = 0, c = code; i < order; ++i, c /= 4) ctx[i] = c % 4;
      const auto counts = rnntd::testing::brute_force_ngram(corpus, ctx, 4);
      double total = 0.0;
      for (double x : counts) total += x;
      if (total == 0.0) continue;
      const auto p = m.probabilities(ctx);
      for (std::size_t b = 0; b < 4; ++b) EXPECT_EQ(p[b], (counts[b] + s) / (total + 4 * s));
    }
  }
}

TEST(Markov, ProbabilitiesSumToOne) {
  const auto corpus = random_corpus(30, 5, 3);
  const auto m = mc_fit(corpus, 2, 5);
  for (const auto& [ctx, counts] : m.counts) {
    const auto p = m.probabilities(ctx);
    double s = 0.0;
    for (double x : p) s += x;
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Markov, RejectsBadArguments) {
  const auto corpus = random_corpus(3, 2, 1);
  EXPECT_THROW(mc_fit(corpus, 0, 2), DataError);
  EXPECT_THROW(mc_fit(corpus, 4, 2), DataError);
  EXPECT_THROW(mc_fit({}, 1, 2), DataError);
}

// --- Hawkes and Poisson ----------------------------------------------------

TEST(Hawkes, IntensityDirectEvaluation) {
  PointProcessModel m{PointProcessKind::PpHawkes, Matrix(1, 1, 0.1), 0.5};
  const std::vector<Event> h{{1.0, 0}, {2.0, 0}};
  EXPECT_NEAR(hawkes_intensity(m, 0, h, 3.0), 0.1 + 0.5 * (std::exp(-2.0) + std::exp(-1.0)), 1e-15);
  EXPECT_NEAR(hawkes_intensity(m, 0, h, 3.0), 0.351607, 1e-6);
  EXPECT_EQ(hawkes_intensity(m, 0, {}, 3.0), 0.1);
  m.alpha = 0.0;
  EXPECT_EQ(hawkes_intensity(m, 0, h, 3.0), 0.1);
}

TEST(Hawkes, ZeroAlphaEqualsPoissonLikelihood) {
  const auto corpus = random_corpus(50, 3, 5);
  PointProcessModel pp{PointProcessKind::PpPoisson, Matrix(1, 3, std::vector<double>{0.3, 1.1, 0.6}), 0.0};
  PointProcessModel hk = pp;
  hk.kind = PointProcessKind::PpHawkes;
  for (const auto& s : corpus) EXPECT_NEAR(hawkes_nll(hk, s), poisson_nll(pp, s), 1e-10);
}

TEST(Hawkes, NllMatchesIntensityAndQuadrature) {
  PointProcessModel m{PointProcessKind::PpHawkes, Matrix(1, 2, std::vector<double>{0.2, 0.4}), 0.3};
  const auto s = seq_of({{0.0, 0}, {0.5, 1}, {2.0, 0}, {2.2, 1}});
  double expect = 0.0;
  for (std::size_t j = 1; j < s.size(); ++j) {
    const std::span<const Event> hist(s.events.data(), j);
    expect -= std::log(hawkes_intensity(m, s.events[j].mark, hist, s.events[j].time));
    expect += integrate(
        [&](double t) { return hawkes_intensity(m, 0, hist, t) + hawkes_intensity(m, 1, hist, t); },
        s.events[j - 1].time, s.events[j].time, {1e-12});
  }
  EXPECT_NEAR(hawkes_nll(m, s), expect, 1e-9);
}

TEST(Hawkes, GradientMatchesFiniteDifference) {
  const auto corpus = random_corpus(5, 2, 8);
  PointProcessModel m{PointProcessKind::MsppHawkes, Matrix(2, 2, std::vector<double>{0.2, 0.4, 0.7, 0.1}), 0.3};
  HawkesGradient g{Matrix(2, 2), 0.0};
  for (const auto& s : corpus) hawkes_nll(m, s, &g);
  auto total = [&](const PointProcessModel& q) {
    double t = 0.0;
    for (const auto& s : corpus) t += hawkes_nll(q, s);
    return t;
  };
  const double h = 1e-6;
  for (std::size_t i = 0; i < 4; ++i) {
    auto up = m, down = m;
    up.base.values()[i] += h;
    down.base.values()[i] -= h;
    EXPECT_NEAR(g.base.values()[i], (total(up) - total(down)) / (2 * h), 1e-5);
  }
  auto up = m, down = m;
  up.alpha += h;
  down.alpha -= h;
  EXPECT_NEAR(g.alpha, (total(up) - total(down)) / (2 * h), 1e-5);
}

TEST(PointProcess, PoissonRateIsCountOverExposure) {
  EventSequence s{"one", {}};
  for (int i = 0; i <= 10; ++i) s.events.push_back({static_cast<double>(i), 0});
  const std::vector<EventSequence> c{s};
  const auto m = pp_fit(c, PointProcessKind::PpPoisson, 1);
  EXPECT_DOUBLE_EQ(m.base(0, 0), 1.0);
}

TEST(PointProcess, MarkPairRateIsInverseMeanGap) {
  const std::vector<EventSequence> c{seq_of({{0, 0}, {2, 1}, {3, 0}, {5, 1}}), seq_of({{1, 0}, {3, 1}})};
  std::ostringstream warn;
  const auto m = pp_fit(c, PointProcessKind::MsppPoisson, 2, {}, &warn);
  EXPECT_DOUBLE_EQ(m.base(0, 1), 0.5);
  EXPECT_EQ(m.base(0, 0), kRateFloor);
  EXPECT_NE(warn.str().find("floored"), std::string::npos);
}

TEST(PointProcess, PredictTimeClosedForms) {
  PointProcessModel pp{PointProcessKind::PpPoisson, Matrix(1, 1, 2.0), 0.0};
  const std::vector<Event> h{{3.0, 0}};
  EXPECT_DOUBLE_EQ(pp_predict_time(pp, h, 0), 3.5);

  PointProcessModel mspp{PointProcessKind::MsppPoisson, Matrix(2, 2, std::vector<double>{0.5, 1.5, 1.0, 1.0}), 0.0};
  const std::vector<Event> h2{{1.0, 1}, {4.0, 0}};
  EXPECT_DOUBLE_EQ(pp_predict_time(mspp, h2, 1), 4.0 + 1.0 / 1.5);

  PointProcessModel hk{PointProcessKind::PpHawkes, Matrix(1, 1, 2.0), 0.0};
  EXPECT_EQ(pp_predict_time(hk, h, 0), pp_predict_time(pp, h, 0));
}

TEST(PointProcess, HawkesPredictTimeMatchesSurvivalIntegral) {
  PointProcessModel hk{PointProcessKind::PpHawkes, Matrix(1, 2, std::vector<double>{0.3, 0.5}), 0.6};
  const std::vector<Event> h{{0.0, 0}, {0.4, 1}, {1.0, 0}};
  const double e = std::exp(-1.0) + std::exp(-0.6) + 1.0;
  // Survival of mark 1 alone: exp(-(0.5 d + 0.6 e (1 - exp(-d)))).
  const double mean = integrate([&](double d) { return std::exp(-(0.5 * d + 0.6 * e * -std::expm1(-d))); }, 0.0,
                                std::numeric_limits<double>::infinity(), {1e-12});
  EXPECT_NEAR(pp_predict_time(hk, h, 1), 1.0 + mean, 1e-8);
}

TEST(PointProcess, HawkesRecovery) {
  GeneratorSpec spec;
  spec.kind = GeneratorKind::Hawkes;
  spec.hawkes_base = {0.2};
  spec.hawkes_alpha = 0.8;
  spec.max_events = 100;
  spec.seed = 2024;
  const auto corpus = generate_corpus(spec, 2000).sequences;
  const auto m = pp_fit(corpus, PointProcessKind::PpHawkes, 1);
  EXPECT_NEAR(m.base(0, 0), 0.2, 0.02);
  EXPECT_NEAR(m.alpha, 0.8, 0.08);
}

TEST(PointProcess, FittedRatesPositiveAndParse) {
  const auto corpus = random_corpus(20, 3, 4);
  for (auto kind : {PointProcessKind::PpPoisson, PointProcessKind::PpHawkes, PointProcessKind::MsppPoisson,
                    PointProcessKind::MsppHawkes}) {
    HawkesFitOptions opt;
    opt.iterations = 200;
    const auto m = pp_fit(corpus, kind, 3, opt, nullptr);
    for (double b : m.base.values()) EXPECT_GT(b, 0.0);
    EXPECT_GE(m.alpha, 0.0);
    EXPECT_EQ(parse_point_process(to_string(kind)), kind);
  }
  EXPECT_FALSE(parse_point_process("poisson"));
}

// --- rmtpp-like ------------------------------------------------------------

TEST(Rmtpp, SingleMarkMatchesExponentialRnnTd) {
  Philox rng(5, 0);
  const ModelDims dims{4, 1, 2, FeatureConfig{false, 0}};
  auto shared = rnntd::testing::random_params(rng, dims, ShapingKind::Exponential, 0.5, IntensityHead::Shared);
  auto specific = ModelParams::zeros(dims, ShapingKind::Exponential);
  specific.input_time = shared.input_time;
  specific.input_mark = shared.input_mark;
  specific.recurrent = shared.recurrent;
  specific.mark_logits = shared.mark_logits;
  specific.mark_embedding = shared.mark_embedding;
  specific.shaping = shared.shaping;
  specific.intensity = shared.intensity;
  const Vector h{0.1, -0.2, 0.3, 0.05};
  shared.intensity_bias[0] = 0.0;
  for (double t : {0.1, 0.7, 2.0})
    EXPECT_NEAR(time_density(shared, h, 0, 0.0, t), time_density(specific, h, 0, 0.0, t), 1e-14);
}

TEST(Rmtpp, PredictedTimeIndependentOfMark) {
  const auto p = rmtpp_init({4, 3, 2, FeatureConfig{false, 0}}, 3);
  const Vector h{0.3, -0.1, 0.2, 0.4};
  const double t0 = expected_time(p, h, 0, 1.0);
  EXPECT_EQ(expected_time(p, h, 1, 1.0), t0);
  EXPECT_EQ(expected_time(p, h, 2, 1.0), t0);
}
