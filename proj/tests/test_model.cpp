#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numbers>

#include "rnntd/model.hpp"
#include "test_support.hpp"

using namespace rnntd;
using rnntd::testing::random_params;
using rnntd::testing::random_sequence;

namespace {

ModelParams small_model(std::size_t k, ShapingKind shaping) {
  return ModelParams::zeros({1, k, 1, FeatureConfig{false, 0}}, shaping);
}

/// Sets the intensity head so that nu = exp(intensity . h) equals `nu` for h = (1).
void set_rates(ModelParams& p, std::initializer_list<double> nu) {
  std::size_t r = 0;
  for (double v : nu) p.intensity(r++, 0) = std::log(v);
}

const Vector kUnitH{1.0};

}  // namespace

// --- step ------------------------------------------------------------------

TEST(Step, ZeroWeightsGiveZeroState) {
  const auto p = ModelParams::zeros({4, 3, 2, FeatureConfig{}}, ShapingKind::Constant);
  const auto h = step(p, Vector(4, 0.3), featurize(1.0, 2.5, p.features), 1);
  for (double v : h) EXPECT_EQ(v, 0.0);
}

TEST(Step, ScalarPreactivationOfOne) {
  auto p = small_model(2, ShapingKind::Constant);
  p.input_time(0, 0) = 0.25;    // phi = log(dt) = log(e^2) = 2 -> 0.5
  p.mark_embedding(1, 0) = 1.0;
  p.input_mark(0, 0) = 0.2;     // 0.2
  p.recurrent(0, 0) = 0.6;      // h_prev = 0.5 -> 0.3
  const auto h = step(p, Vector{0.5}, featurize(0.0, std::exp(2.0), p.features), 1);
  EXPECT_NEAR(h[0], std::tanh(1.0), 1e-15);
  EXPECT_NEAR(h[0], 0.76159, 1e-5);
}

TEST(Step, PermutationEquivariance) {
  Philox rng(5);
  const auto p = random_params(rng, {4, 3, 2, FeatureConfig{}}, ShapingKind::Constant, 0.5);
  // Swap hidden units 0 and 2 in every matrix.
  auto q = p;
  auto swap_rows = [](Matrix& m, std::size_t a, std::size_t b) {
    for (std::size_t c = 0; c < m.cols(); ++c) std::swap(m(a, c), m(b, c));
  };
  auto swap_cols = [](Matrix& m, std::size_t a, std::size_t b) {
    for (std::size_t r = 0; r < m.rows(); ++r) std::swap(m(r, a), m(r, b));
  };
  swap_rows(q.input_time, 0, 2);
  swap_rows(q.input_mark, 0, 2);
  swap_rows(q.recurrent, 0, 2);
  swap_cols(q.recurrent, 0, 2);
  const Vector h_prev{0.1, -0.2, 0.3, 0.05};
  Vector h_prev_perm = h_prev;
  std::swap(h_prev_perm[0], h_prev_perm[2]);
  const auto phi = featurize(1.0, 3.0, p.features);
  auto h = step(p, h_prev, phi, 2);
  const auto hp = step(q, h_prev_perm, phi, 2);
  std::swap(h[0], h[2]);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(h[i], hp[i], 1e-15);
}

TEST(Step, DimensionMismatchIsAnError) {
  const auto p = ModelParams::zeros({4, 3, 2, FeatureConfig{}}, ShapingKind::Constant);
  EXPECT_THROW(step(p, Vector(3), featurize(1.0, 2.0, p.features), 0), DimensionError);
  EXPECT_THROW(step(p, Vector(4), Vector(2), 0), DimensionError);
  EXPECT_THROW(step(p, Vector(4), featurize(1.0, 2.0, p.features), 3), DimensionError);
}

// --- mark head -------------------------------------------------------------

TEST(MarkDistribution, ZeroWeightsAreUniform) {
  const auto p = ModelParams::zeros({3, 5, 2, FeatureConfig{}}, ShapingKind::Constant);
  for (double v : mark_distribution(p, Vector{0.2, -0.1, 0.4})) EXPECT_NEAR(v, 0.2, 1e-15);
}

TEST(MarkDistribution, TwoMarkExample) {
  auto p = small_model(2, ShapingKind::Constant);
  p.mark_logits(0, 0) = 1;
  p.mark_logits(1, 0) = 2;
  const auto r = mark_distribution(p, kUnitH);
  EXPECT_NEAR(r[0], 0.26894, 1e-5);
  EXPECT_NEAR(r[1], 0.73106, 1e-5);
  EXPECT_NEAR(r[0] + r[1], 1.0, 1e-12);
}

TEST(MarkDistribution, ArgmaxPropertiesUnderScalingAndRowShift) {
  Philox rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const auto p = random_params(rng, {6, 7, 3, FeatureConfig{}}, ShapingKind::Constant, 1.0);
    Vector h(6);
    for (double& x : h) x = std::tanh(rng.normal());
    const auto base = mark_distribution(p, h);
    const auto argmax = std::max_element(base.begin(), base.end()) - base.begin();

    Vector h2 = h;
    const double c = 0.5 + 3 * rng.uniform();
    for (double& x : h2) x *= c;
    const auto scaled = mark_distribution(p, h2);
    EXPECT_EQ(std::max_element(scaled.begin(), scaled.end()) - scaled.begin(), argmax);

    auto q = p;
    Vector shift(6);
    for (double& x : shift) x = rng.normal();
    for (std::size_t k = 0; k < q.marks; ++k)
      for (std::size_t c = 0; c < 6; ++c) q.mark_logits(k, c) += shift[c];
    const auto shifted = mark_distribution(q, h);
    EXPECT_EQ(std::max_element(shifted.begin(), shifted.end()) - shifted.begin(), argmax);
  }
}

// --- intensity calculus ----------------------------------------------------

TEST(Intensity, ZeroRowConstantShapingIsOne) {
  const auto p = small_model(2, ShapingKind::Constant);
  for (double t : {0.0, 0.5, 10.0}) EXPECT_EQ(intensity(p, kUnitH, 1, t, 0.0), 1.0);
}

TEST(Intensity, ExponentialExample) {
  auto p = small_model(1, ShapingKind::Exponential);
  set_rates(p, {2.0});
  p.shaping.w = 0.5;
  EXPECT_NEAR(intensity(p, kUnitH, 0, 4.0, 3.0), 2 * std::exp(0.5), 1e-12);
  EXPECT_NEAR(intensity(p, kUnitH, 0, 4.0, 3.0), 3.29744, 1e-5);
}

TEST(Intensity, ZeroWMatchesConstantShaping) {
  Philox rng(1);
  const auto pc = random_params(rng, {3, 4, 2, FeatureConfig{}}, ShapingKind::Constant, 0.7);
  auto pe = pc;
  pe.shaping = {ShapingKind::Exponential, 0.0};
  const Vector h{0.3, -0.4, 0.1};
  for (double t : {0.0, 0.3, 7.0})
    for (std::size_t e = 0; e < 4; ++e) {
      EXPECT_EQ(intensity(pc, h, e, t, 0.0), intensity(pe, h, e, t, 0.0));
      EXPECT_EQ(integrated_intensity(pc, h, e, 0.0, t), integrated_intensity(pe, h, e, 0.0, t));
    }
}

TEST(Intensity, TimeBeforeLastEventIsAnError) {
  const auto p = small_model(2, ShapingKind::Constant);
  EXPECT_THROW(intensity(p, kUnitH, 0, 1.0, 2.0), DataError);
  EXPECT_THROW(integrated_intensity(p, kUnitH, 0, 2.0, 1.0), DataError);
}

TEST(IntegratedIntensity, ConstantTwoMarkTotal) {
  auto p = small_model(2, ShapingKind::Constant);
  set_rates(p, {0.5, 1.5});
  const double total = integrated_intensity(p, kUnitH, 0, 1.0, 3.0) + integrated_intensity(p, kUnitH, 1, 1.0, 3.0);
  EXPECT_NEAR(total, 4.0, 1e-12);
  EXPECT_NEAR(total_integrated_intensity(p, kUnitH, 1.0, 3.0), 4.0, 1e-12);
}

TEST(IntegratedIntensity, ExponentialAntiderivative) {
  auto p = small_model(1, ShapingKind::Exponential);
  p.shaping.w = 1.0;
  EXPECT_NEAR(integrated_intensity(p, kUnitH, 0, 0.0, 1.0), std::numbers::e - 1, 1e-12);
}

TEST(IntegratedIntensity, EmptyIntervalIsZero) {
  auto pc = small_model(2, ShapingKind::Constant);
  auto pe = small_model(2, ShapingKind::Exponential);
  pe.shaping.w = -0.7;
  EXPECT_EQ(integrated_intensity(pc, kUnitH, 0, 2.0, 2.0), 0.0);
  EXPECT_EQ(integrated_intensity(pe, kUnitH, 0, 2.0, 2.0), 0.0);
}

TEST(Shaping, SmallWBranchAndDerivativeAgreeWithFiniteDifferences) {
  for (double w : {-2.0, -0.3, -1e-5, 1e-6, 1e-4, 0.2, 1.5}) {
    ShapingFunction s{ShapingKind::Exponential, w};
    for (double dt : {0.01, 0.7, 3.0}) {
      const double h = 1e-6 * std::max(1.0, std::abs(w));
      ShapingFunction up{ShapingKind::Exponential, w + h}, down{ShapingKind::Exponential, w - h};
      const double fd = (up.integral(dt) - down.integral(dt)) / (2 * h);
      EXPECT_NEAR(s.integral_dw(dt), fd, 1e-6 * std::max(1.0, std::abs(fd)));
      EXPECT_NEAR(s.integral(dt), std::expm1(w * dt) / w, 1e-12 * std::max(1.0, dt));
    }
  }
  ShapingFunction tiny{ShapingKind::Exponential, 5e-9};
  EXPECT_DOUBLE_EQ(tiny.integral(2.0), 2.0 * (1 + 0.5 * 5e-9 * 2.0));
}

TEST(TimeDensity, ConstantClosedForm) {
  const auto p = small_model(2, ShapingKind::Constant);  // nu = (1, 1)
  for (std::size_t e = 0; e < 2; ++e) {
    EXPECT_NEAR(time_density(p, kUnitH, e, 0.0, 1.0), std::exp(-2.0), 1e-15);
    EXPECT_NEAR(time_density(p, kUnitH, e, 0.0, 1.0), 0.13534, 1e-5);
  }
  auto q = small_model(2, ShapingKind::Constant);
  set_rates(q, {0.5, 1.5});
  EXPECT_DOUBLE_EQ(time_density(q, kUnitH, 1, 4.0, 4.0), 1.5);
}

TEST(TimeDensity, PerMarkMassByQuadrature) {
  auto p = small_model(2, ShapingKind::Constant);
  set_rates(p, {0.5, 1.5});
  const double inf = std::numeric_limits<double>::infinity();
  const double m0 = integrate([&](double t) { return time_density(p, kUnitH, 0, 0.0, t); }, 0.0, inf);
  const double m1 = integrate([&](double t) { return time_density(p, kUnitH, 1, 0.0, t); }, 0.0, inf);
  EXPECT_NEAR(m0, 0.25, 1e-9);
  EXPECT_NEAR(m1, 0.75, 1e-9);
}

TEST(DensityProperty, HazardIdentityCdfMonotonicityAndTotalMass) {
  Philox rng(77);
  const double inf = std::numeric_limits<double>::infinity();
  for (int trial = 0; trial < 40; ++trial) {
    const auto kind = trial % 2 ? ShapingKind::Exponential : ShapingKind::Constant;
    auto p = random_params(rng, {5, 4, 3, FeatureConfig{}}, kind, 0.6);
    if (kind == ShapingKind::Exponential) p.shaping.w = 0.05 + 1.5 * rng.uniform();
    Vector h(5);
    for (double& x : h) x = std::tanh(rng.normal());
    const double t_last = 3 * rng.uniform();
    double prev_cdf = 0.0;
    for (std::size_t e = 0; e < 4; ++e)
      EXPECT_EQ(1 - std::exp(-integrated_intensity(p, h, e, t_last, t_last)), 0.0);
    for (int i = 0; i < 20; ++i) {
      const double t = t_last + 0.25 * i;
      double comp = 0.0;
      for (std::size_t e = 0; e < 4; ++e) comp += integrated_intensity(p, h, e, t_last, t);
      for (std::size_t e = 0; e < 4; ++e) {
        const double lhs = time_density(p, h, e, t_last, t);
        const double rhs = intensity(p, h, e, t, t_last) * std::exp(-comp);
        EXPECT_NEAR(lhs, rhs, 1e-10 * std::max(1.0, rhs));
      }
      const double cdf = 1 - std::exp(-integrated_intensity(p, h, 0, t_last, t));
      EXPECT_GE(cdf, prev_cdf);
      prev_cdf = cdf;
    }
    double mass = 0.0;
    for (std::size_t e = 0; e < 4; ++e)
      mass += integrate([&](double t) { return time_density(p, h, e, t_last, t); }, t_last, inf, {1e-11});
    EXPECT_NEAR(mass, 1.0, 1e-6);
  }
}

// --- likelihood ------------------------------------------------------------

TEST(Nll, HandEvaluatedTwoEventSequence) {
  const auto p = ModelParams::zeros({3, 2, 2, FeatureConfig{}}, ShapingKind::Constant);
  const EventSequence seq{"s", {{0.0, 0}, {1.0, 1}}};
  EXPECT_NEAR(nll(p, seq).value, std::log(2.0) + 2.0, 1e-14);
  EXPECT_NEAR(nll(p, seq).value, 2.69315, 1e-5);
}

TEST(Nll, FactorizesIntoMarkAndTimeTerms) {
  Philox rng(21);
  for (int trial = 0; trial < 30; ++trial) {
    const auto kind = trial % 2 ? ShapingKind::Exponential : ShapingKind::Constant;
    const auto p = random_params(rng, {6, 4, 3, FeatureConfig{}}, kind, 0.5);
    const auto seq = random_sequence(rng, 4, 12);
    // Reference built only from the single-step operations.
    double ref = 0.0;
    Vector h(p.hidden, 0.0);
    for (std::size_t j = 0; j + 1 < seq.size(); ++j) {
      const std::optional<double> prev = j ? std::optional<double>(seq.events[j - 1].time) : std::nullopt;
      h = step(p, h, featurize(prev, seq.events[j].time, p.features), seq.events[j].mark);
      const auto& next = seq.events[j + 1];
      ref -= std::log(mark_distribution(p, h)[next.mark] *
                      time_density(p, h, next.mark, seq.events[j].time, next.time));
    }
    EXPECT_NEAR(nll(p, seq).value, ref, 1e-10 * std::max(1.0, std::abs(ref)));
  }
}

TEST(Nll, CorpusNllIsAdditive) {
  Philox rng(3);
  const auto p = random_params(rng, {4, 3, 2, FeatureConfig{}}, ShapingKind::Exponential, 0.5);
  const auto seq = random_sequence(rng, 3, 9);
  const double one = nll(p, seq).value;
  double corpus = 0.0;
  for (const auto& s : {seq, seq}) corpus += nll(p, s).value;
  EXPECT_EQ(corpus, 2 * one);
}

TEST(Nll, RejectsShortOrUnorderedSequences) {
  const auto p = ModelParams::zeros({3, 2, 2, FeatureConfig{}}, ShapingKind::Constant);
  EXPECT_THROW(nll(p, EventSequence{"s", {{0.0, 0}}}), DataError);
  EXPECT_THROW(nll(p, EventSequence{"s", {{1.0, 0}, {1.0, 1}}}), DataError);
  EXPECT_THROW(nll(p, EventSequence{"s", {{1.0, 0}, {0.5, 1}}}), DataError);
}

TEST(Nll, ClampGuardCountsSaturatedEntries) {
  auto p = ModelParams::zeros({1, 2, 1, FeatureConfig{false, 0}}, ShapingKind::Constant);
  p.mark_embedding(0, 0) = 1.0;
  p.input_mark(0, 0) = 5.0;  // h ~ 1
  p.intensity(0, 0) = 100.0;
  const EventSequence seq{"s", {{0.0, 0}, {1.0, 0}}};
  const auto clamped = nll(p, seq, {true, 30.0});
  EXPECT_EQ(clamped.clamped, 1u);
  EXPECT_TRUE(std::isfinite(clamped.value));
  EXPECT_EQ(nll(p, seq).clamped, 0u);
}

// --- gradients -------------------------------------------------------------

TEST(Gradients, RecurrentGradientVanishesForTwoEventsAtZero) {
  const auto p = ModelParams::zeros({4, 3, 2, FeatureConfig{}}, ShapingKind::Exponential);
  const auto g = gradients(p, EventSequence{"s", {{0.0, 0}, {2.0, 1}}}, 0.1);
  for (double v : g.grad.recurrent.values()) EXPECT_EQ(v, 0.0);
}

TEST(Gradients, MatchFiniteDifferencesBothShapings) {
  Philox rng(4242);
  for (auto kind : {ShapingKind::Constant, ShapingKind::Exponential}) {
    for (int trial = 0; trial < 5; ++trial) {
      const double gamma = trial % 2 ? 0.1 : 0.0;
      auto p = random_params(rng, {8, 5, 4, FeatureConfig{}}, kind, 0.3);
      const auto seq = random_sequence(rng, 5, 10);
      const double err = rnntd::testing::max_gradient_error(p, seq, gamma);
      EXPECT_LT(err, 1e-5) << "shaping " << to_string(kind) << " trial " << trial;
    }
  }
}

TEST(Gradients, SharedHeadMatchesFiniteDifferences) {
  Philox rng(99);
  auto p = random_params(rng, {6, 4, 3, FeatureConfig{}}, ShapingKind::Exponential, 0.3, IntensityHead::Shared);
  const auto seq = random_sequence(rng, 4, 10);
  EXPECT_LT(rnntd::testing::max_gradient_error(p, seq, 0.1), 1e-5);
}

TEST(Gradients, LassoOnlyTouchesIntensityPath) {
  Philox rng(6);
  const auto p = random_params(rng, {5, 3, 2, FeatureConfig{}}, ShapingKind::Exponential, 0.4);
  const auto seq = random_sequence(rng, 3, 8);
  const auto g0 = gradients(p, seq, 0.0);
  const auto g1 = gradients(p, seq, 0.1);
  // Mark head is untouched; the intensity head changes by gamma * nu * h.
  for (std::size_t i = 0; i < g0.grad.mark_logits.size(); ++i)
    EXPECT_EQ(g0.grad.mark_logits.values()[i], g1.grad.mark_logits.values()[i]);
  EXPECT_EQ(g0.grad.shaping.w, g1.grad.shaping.w);
  Matrix expected = g0.grad.intensity;
  const auto fwd = nll(p, seq);
  for (const auto& c : fwd.steps) {
    Vector nu(c.log_rates.size());
    for (std::size_t r = 0; r < nu.size(); ++r) nu[r] = 0.1 * std::exp(c.log_rates[r]);
    outer_add(expected, nu, c.hidden);
  }
  for (std::size_t i = 0; i < expected.size(); ++i)
    EXPECT_NEAR(g1.grad.intensity.values()[i], expected.values()[i], 1e-12);
  bool recurrent_changed = false;
  for (std::size_t i = 0; i < g0.grad.recurrent.size(); ++i)
    recurrent_changed |= g0.grad.recurrent.values()[i] != g1.grad.recurrent.values()[i];
  EXPECT_TRUE(recurrent_changed);
  EXPECT_DOUBLE_EQ(g1.objective(0.1), g0.nll + 0.1 * g0.rate_sum);
}

// --- expectation and prediction -------------------------------------------

TEST(ExpectedTime, ConstantClosedForm) {
  const auto p = small_model(2, ShapingKind::Constant);  // nu = (1, 1)
  EXPECT_DOUBLE_EQ(expected_time(p, kUnitH, 0, 0.0), 0.5);
  EXPECT_DOUBLE_EQ(expected_time(p, kUnitH, 1, 0.0), 0.5);
  auto q = small_model(3, ShapingKind::Constant);
  set_rates(q, {0.2, 1.0, 3.0});
  const double t0 = expected_time(q, kUnitH, 0, 10.0);
  for (std::size_t e = 1; e < 3; ++e) EXPECT_EQ(expected_time(q, kUnitH, e, 10.0), t0);
  EXPECT_NEAR(t0, 10.0 + 1 / 4.2, 1e-14);
}

TEST(ExpectedTime, GompertzMeanMatchesReference) {
  auto p = small_model(1, ShapingKind::Exponential);
  p.shaping.w = 1.0;
  // Reference integral of t*exp(t - (e^t - 1)) over [0, inf), computed offline
  // with an independent adaptive integrator at 1e-14 absolute tolerance.
  EXPECT_NEAR(expected_time(p, kUnitH, 0, 0.0), 0.5963473623231942, 1e-8);
  EXPECT_NEAR(expected_time(p, kUnitH, 0, 5.0), 5.5963473623231942, 1e-8);
}

TEST(ExpectedTime, MatchesSurvivalIntegralForGrowingHazard) {
  Philox rng(12);
  const double inf = std::numeric_limits<double>::infinity();
  for (int trial = 0; trial < 20; ++trial) {
    auto p = random_params(rng, {4, 3, 2, FeatureConfig{}}, ShapingKind::Exponential, 1.5);
    p.shaping.w = std::exp(2 * rng.normal());
    Vector h(4);
    for (double& x : h) x = std::tanh(rng.normal());
    // E[T] = integral of the survival function when the total mass is one.
    const double rate = total_rate(log_rates(p, h));
    const double ref = integrate([&](double t) { return std::exp(-rate * p.shaping.integral(t)); }, 0.0, inf, {1e-12});
    EXPECT_NEAR(expected_time(p, h, 1, 2.0) - 2.0, ref, 1e-7 * ref);
  }
}

TEST(ExpectedTime, DecayingHazardUsesConditionalMean) {
  auto p = small_model(1, ShapingKind::Exponential);
  p.shaping.w = -0.5;  // escape probability exp(-2)
  const double inf = std::numeric_limits<double>::infinity();
  const double mass = integrate([&](double t) { return time_density(p, kUnitH, 0, 0.0, t); }, 0.0, inf, {1e-12});
  EXPECT_NEAR(mass, 1 - std::exp(-2.0), 1e-9);
  const double first = integrate([&](double t) { return t * time_density(p, kUnitH, 0, 0.0, t); }, 0.0, inf, {1e-12});
  EXPECT_NEAR(expected_time(p, kUnitH, 0, 0.0), first / mass, 1e-8);
  ExpectationOptions raw;
  raw.mode = ExpectationMode::Raw;
  EXPECT_NEAR(expected_time(p, kUnitH, 0, 0.0, raw), first, 1e-8);
}

TEST(ExpectedTime, RawModeScalesByMarkMass) {
  auto p = small_model(2, ShapingKind::Constant);
  set_rates(p, {0.5, 1.5});
  ExpectationOptions raw;
  raw.mode = ExpectationMode::Raw;
  EXPECT_NEAR(expected_time(p, kUnitH, 0, 0.0, raw), 0.25 * 0.5, 1e-15);
  EXPECT_NEAR(expected_time(p, kUnitH, 1, 0.0, raw), 0.75 * 0.5, 1e-15);
}

TEST(ExpectedTime, UnderflowedMassIsInfinite) {
  auto p = small_model(1, ShapingKind::Exponential);
  p.intensity(0, 0) = -800.0;  // nu underflows to zero
  p.shaping.w = -1.0;
  try {
    expected_time(p, kUnitH, 0, 0.0);
    FAIL();
  } catch (const NumericalError& e) {
    EXPECT_STREQ(e.what(), "infinite expected time");
  }
  const auto cands = predict_next(p, kUnitH, 0.0, 1);
  EXPECT_EQ(cands[0].likelihood, 0.0);
}

TEST(PredictNext, SymmetricModelTiesInMarkOrder) {
  const auto p = ModelParams::zeros({3, 2, 2, FeatureConfig{}}, ShapingKind::Constant);
  const auto c = predict_next(p, Vector(3, 0.0), 1.0, 2);
  ASSERT_EQ(c.size(), 2u);
  EXPECT_EQ(c[0].mark, 0u);
  EXPECT_EQ(c[1].mark, 1u);
  EXPECT_EQ(c[0].likelihood, c[1].likelihood);
  EXPECT_DOUBLE_EQ(c[0].expected_time, 1.5);
}

TEST(PredictNext, LikelihoodRatioFollowsMarkProbabilities) {
  auto p = small_model(2, ShapingKind::Constant);  // nu = (1, 1)
  p.mark_logits(0, 0) = std::log(0.9);
  p.mark_logits(1, 0) = std::log(0.1);
  const auto c = predict_next(p, kUnitH, 0.0, 2);
  EXPECT_EQ(c[0].mark, 0u);
  EXPECT_EQ(c[1].mark, 1u);
  EXPECT_EQ(c[0].expected_time, c[1].expected_time);
  EXPECT_NEAR(c[0].likelihood / c[1].likelihood, 9.0, 1e-12);
  EXPECT_THROW(predict_next(p, kUnitH, 0.0, 3), DimensionError);
}

TEST(PredictNext, GivenTimeScoresUseObservedTime) {
  Philox rng(31);
  const auto p = random_params(rng, {4, 5, 2, FeatureConfig{}}, ShapingKind::Exponential, 0.7);
  const Vector h{0.2, -0.5, 0.1, 0.7};
  const auto scores = given_time_scores(p, h, 1.0, 2.5);
  const auto r = mark_distribution(p, h);
  for (std::size_t e = 0; e < 5; ++e)
    EXPECT_NEAR(scores[e], r[e] * time_density(p, h, e, 1.0, 2.5), 1e-15);
}

TEST(SharedHead, SingleMarkMatchesMarkSpecificDensity) {
  Philox rng(17);
  auto p = random_params(rng, {4, 1, 2, FeatureConfig{}}, ShapingKind::Exponential, 0.5);
  auto q = p;
  q.head = IntensityHead::Shared;
  q.intensity_bias = Vector(1, 0.0);
  const Vector h{0.3, 0.1, -0.2, 0.5};
  for (double t : {0.0, 0.4, 2.0})
    EXPECT_EQ(time_density(p, h, 0, 0.0, t), time_density(q, h, 0, 0.0, t));
  const auto seq = random_sequence(rng, 1, 6);
  EXPECT_EQ(nll(p, seq).value, nll(q, seq).value);
}

TEST(SharedHead, ExpectedTimeIsMarkIndependent) {
  Philox rng(18);
  const auto p = random_params(rng, {4, 3, 2, FeatureConfig{}}, ShapingKind::Exponential, 0.5, IntensityHead::Shared);
  const Vector h{0.3, 0.1, -0.2, 0.5};
  const double t0 = expected_time(p, h, 0, 1.0);
  for (std::size_t e = 1; e < 3; ++e) EXPECT_EQ(expected_time(p, h, e, 1.0), t0);
}
