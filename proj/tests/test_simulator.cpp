#include <gtest/gtest.h>

#include <cmath>

#include "rnntd/simulator.hpp"
#include "test_support.hpp"

using namespace rnntd;

namespace {

GeneratorSpec mspp_spec(Matrix rates, std::size_t max_events, std::uint64_t seed) {
  GeneratorSpec s;
  s.kind = GeneratorKind::MsppPoisson;
  s.rates = std::move(rates);
  s.max_events = max_events;
  s.seed = seed;
  return s;
}

IntensityOracle constant_rate(double r) {
  return [r](double, std::span<const double>) { return r; };
}

/// Bound above the true rate on unit windows, so proposals are actually thinned.
BoundOracle loose_bound(double b) {
  return [b](double t, std::span<const double>) { return IntensityBound{b, t + 1.0}; };
}

}  // namespace

// --- thinning --------------------------------------------------------------

TEST(Thinning, HomogeneousMeanCount) {
  Philox rng(42, 0);
  double total = 0.0;
  for (int run = 0; run < 10000; ++run)
    total += static_cast<double>(thinning_sample(constant_rate(2.0), loose_bound(3.0), 0.0, 10.0, rng).size());
  const double mean = total / 10000.0;
  EXPECT_GE(mean, 19.5);
  EXPECT_LE(mean, 20.5);
}

TEST(Thinning, InterArrivalsPassKsAgainstExponential) {
  Philox rng(43, 0);
  std::vector<double> gaps;
  while (gaps.size() < 10000) {
    const auto times = thinning_sample(constant_rate(2.0), loose_bound(2.5), 0.0, 50.0, rng);
    double prev = 0.0;
    for (double t : times) {
      if (gaps.size() == 10000) break;
      gaps.push_back(t - prev);
      prev = t;
    }
  }
  EXPECT_LT(rnntd::testing::ks_exponential(gaps, 2.0), rnntd::testing::ks_critical_001(gaps.size()));
}

TEST(Thinning, ZeroIntensityGivesNoEvents) {
  Philox rng(1, 0);
  EXPECT_TRUE(thinning_sample(constant_rate(0.0), loose_bound(1.0), 0.0, 100.0, rng).empty());
  EXPECT_TRUE(thinning_sample(constant_rate(0.0), loose_bound(0.0), 0.0, 100.0, rng).empty());
}

TEST(Thinning, BoundViolationIsReported) {
  Philox rng(1, 0);
  EXPECT_THROW(thinning_sample(constant_rate(5.0), loose_bound(1.0), 0.0, 100.0, rng), NumericalError);
}

TEST(Thinning, DeterministicPerSeed) {
  Philox a(9, 3), b(9, 3);
  EXPECT_EQ(thinning_sample(constant_rate(1.0), loose_bound(2.0), 0.0, 20.0, a),
            thinning_sample(constant_rate(1.0), loose_bound(2.0), 0.0, 20.0, b));
}

// --- generators ------------------------------------------------------------

TEST(Generate, MsppPerMarkMeanGaps) {
  // Each mark is its own Poisson stream; exposure / count estimates its mean
  // gap without the truncation bias of averaging observed within-sequence gaps.
  const auto corpus = generate_corpus(mspp_spec(Matrix(2, 2, std::vector<double>{0.5, 2.0, 0.5, 2.0}), 60, 5), 2000);
  double exposure = 0.0, count[2] = {0, 0};
  for (const auto& s : corpus.sequences) {
    exposure += s.events.back().time - s.events.front().time;
    for (std::size_t j = 1; j < s.size(); ++j) count[s.events[j].mark] += 1;
  }
  EXPECT_NEAR(exposure / count[0], 2.0, 0.1);
  EXPECT_NEAR(exposure / count[1], 0.5, 0.025);
}

TEST(Generate, SequencesAreValidAndLongEnough) {
  GeneratorSpec spec = mspp_spec(Matrix(3, 3, 0.2), 40, 6);
  spec.horizon = 8.0;  // expected length ~ 1 + 8 * 0.6 leaves some short draws
  const auto g = generate_corpus(spec, 300);
  EXPECT_GT(g.resamples, 0u);
  for (const auto& s : g.sequences) {
    EXPECT_GE(s.size(), 3u);
    EXPECT_NO_THROW(validate_sequence(s, 3));
    EXPECT_LE(s.events.back().time, spec.horizon);
  }
}

TEST(Generate, InfeasibleSpecRejected) {
  GeneratorSpec spec = mspp_spec(Matrix(2, 2, 0.1), 40, 1);
  spec.horizon = 1.0;
  EXPECT_THROW(generate_corpus(spec, 10), DataError);
  EXPECT_THROW(generate_corpus(mspp_spec(Matrix(2, 2, -1.0), 40, 1), 10), DataError);
}

TEST(Generate, NearIdentityTransitionGivesLongRuns) {
  GeneratorSpec spec;
  spec.kind = GeneratorKind::MarkovDuration;
  spec.duration.transition = Matrix(3, 3, 0.005);
  for (std::size_t a = 0; a < 3; ++a) spec.duration.transition(a, a) = 0.99;
  spec.duration.mu = {0.0, 0.0, 0.0};
  spec.duration.sigma = {0.5, 0.5, 0.5};
  spec.max_events = 50;
  const auto g = generate_corpus(spec, 200);
  double changes = 0.0;
  for (const auto& s : g.sequences)
    for (std::size_t j = 1; j < s.size(); ++j) changes += s.events[j].mark != s.events[j - 1].mark;
  EXPECT_LT(changes / static_cast<double>(count_transitions(g.sequences)), 0.02);
}

TEST(Generate, MarkovDurationGapFollowsEnteredMark) {
  GeneratorSpec spec;
  spec.kind = GeneratorKind::MarkovDuration;
  spec.duration.transition = Matrix(2, 2, 0.5);
  spec.duration.sigma = {0.1, 0.1};
  spec.duration.mu = {MarkDurationSpec::mu_for_mean(0.5, 0.1), MarkDurationSpec::mu_for_mean(5.0, 0.1)};
  spec.max_events = 50;
  const auto g = generate_corpus(spec, 400);
  double sum[2] = {0, 0}, n[2] = {0, 0};
  for (const auto& s : g.sequences)
    for (std::size_t j = 1; j < s.size(); ++j) {
      sum[s.events[j].mark] += s.events[j].time - s.events[j - 1].time;
      n[s.events[j].mark] += 1;
    }
  EXPECT_NEAR(sum[0] / n[0], 0.5, 0.01);
  EXPECT_NEAR(sum[1] / n[1], 5.0, 0.1);
}

TEST(Generate, ZeroWeightModelGivesExponentialGapsAndUniformMarks) {
  GeneratorSpec spec;
  spec.kind = GeneratorKind::RnnTdModel;
  spec.model = ModelParams::zeros({4, 2, 2, FeatureConfig{false, 0}}, ShapingKind::Constant);
  spec.max_events = 101;
  spec.seed = 17;
  const auto g = generate_corpus(spec, 100);
  std::vector<double> gaps;
  double ones = 0.0, n = 0.0;
  for (const auto& s : g.sequences)
    for (std::size_t j = 1; j < s.size(); ++j) {
      gaps.push_back(s.events[j].time - s.events[j - 1].time);
      ones += static_cast<double>(s.events[j].mark);
      n += 1.0;
    }
  ASSERT_EQ(gaps.size(), 10000u);
  EXPECT_LT(rnntd::testing::ks_exponential(gaps, 2.0), rnntd::testing::ks_critical_001(gaps.size()));
  const double zeros = n - ones;
  const double chi2 = (zeros - n / 2) * (zeros - n / 2) / (n / 2) + (ones - n / 2) * (ones - n / 2) / (n / 2);
  EXPECT_LT(chi2, 6.635);  // chi-square, 1 dof, 0.01
}

TEST(Generate, TruthNllMatchesModuleLikelihoods) {
  GeneratorSpec spec;
  spec.kind = GeneratorKind::RnnTdModel;
  Philox rng(3, 0);
  spec.model = rnntd::testing::random_params(rng, {4, 3, 2, FeatureConfig{false, 0}}, ShapingKind::Exponential, 0.4);
  spec.model->shaping.w = -0.2;
  spec.max_events = 30;
  const auto g = generate_corpus(spec, 20);
  for (std::size_t i = 0; i < g.sequences.size(); ++i)
    EXPECT_NEAR(g.truth[i].nll, nll(*spec.model, g.sequences[i]).value, 1e-9);

  const Matrix rates(3, 3, std::vector<double>{0.2, 1.0, 0.5, 2.0, 0.3, 0.3, 0.7, 0.7, 1.4});
  const auto m = generate_corpus(mspp_spec(rates, 30, 2), 20);
  const PointProcessModel pp{PointProcessKind::MsppPoisson, rates, 0.0};
  for (std::size_t i = 0; i < m.sequences.size(); ++i)
    EXPECT_NEAR(m.truth[i].nll, poisson_nll(pp, m.sequences[i]), 1e-9);
}

TEST(Generate, MarkThenTimeFormEqualsModelAtMatchingWeights) {
  // H = K, one-hot embeddings: h = tanh(1) e_prev, so the heads can encode any
  // row-wise table. Set r = R_a / Lambda_a and nu = R_a.
  const std::size_t k = 3;
  const Matrix rates(k, k, std::vector<double>{0.2, 1.0, 0.5, 2.0, 0.3, 0.3, 0.7, 0.7, 1.4});
  auto p = ModelParams::zeros({k, k, k, FeatureConfig{false, 0}}, ShapingKind::Constant);
  const double scale = std::tanh(1.0);
  for (std::size_t a = 0; a < k; ++a) {
    p.mark_embedding(a, a) = 1.0;
    p.input_mark(a, a) = 1.0;
    double lambda = 0.0;
    for (std::size_t b = 0; b < k; ++b) lambda += rates(a, b);
    for (std::size_t b = 0; b < k; ++b) {
      p.mark_logits(b, a) = std::log(rates(a, b) / lambda) / scale;
      p.intensity(b, a) = std::log(rates(a, b)) / scale;
    }
  }
  const auto g = generate_corpus(mspp_spec(rates, 40, 8), 30);
  for (std::size_t i = 0; i < g.sequences.size(); ++i)
    EXPECT_NEAR(*g.truth[i].nll_rnntd_form, nll(p, g.sequences[i]).value, 1e-9);
}

TEST(Generate, DeterministicAndIndependentPerSequence) {
  const auto spec = mspp_spec(Matrix(2, 2, 1.0), 20, 77);
  const auto a = generate_corpus(spec, 5);
  const auto b = generate_corpus(spec, 8);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(a.sequences[i].events, b.sequences[i].events);
}

TEST(GeneratorSpecJson, ParsesEveryKind) {
  auto s = parse_generator_spec(nlohmann::json::parse(R"({"kind":"mspp-poisson","rates":[[1,2],[3,4]],"seed":4})"));
  EXPECT_EQ(s.marks(), 2u);
  EXPECT_EQ(s.seed, 4u);
  s = parse_generator_spec(nlohmann::json::parse(R"({"kind":"hawkes","base":[0.2,0.3],"alpha":0.4})"));
  EXPECT_EQ(s.hawkes_alpha, 0.4);
  s = parse_generator_spec(
      nlohmann::json::parse(R"({"kind":"markov-duration","transition":[[0.5,0.5],[1,0]],"mean_gap":[1,2],"sigma":[0.5,0.5]})"));
  EXPECT_NEAR(MarkDurationSpec::mean_gap(s.duration.mu[1], s.duration.sigma[1]), 2.0, 1e-12);
  s = parse_generator_spec(nlohmann::json::parse(R"({"kind":"rnn-td-model","init":{"marks":3,"shaping":"exp","w":0.2}})"));
  EXPECT_EQ(s.model->marks, 3u);
  EXPECT_EQ(s.model->shaping.w, 0.2);
  EXPECT_THROW(parse_generator_spec(nlohmann::json::parse(R"({"kind":"nope"})")), DataError);
  EXPECT_THROW(parse_generator_spec(nlohmann::json::parse(R"({"kind":"mspp-poisson"})")), DataError);
  EXPECT_THROW(parse_generator_spec(nlohmann::json::parse(R"({"kind":"markov-duration","transition":[[0.5,0.6],[1,0]],"mu":[0,0],"sigma":[1,1]})")),
               DataError);
}

TEST(GeneratorSpecJson, TruthJsonHasMeans) {
  const auto spec = mspp_spec(Matrix(2, 2, 1.0), 10, 3);
  const auto g = generate_corpus(spec, 4);
  const auto j = ground_truth_json(spec, g);
  EXPECT_EQ(j["sequences"].size(), 4u);
  EXPECT_TRUE(j.contains("mean_nll_rnntd_form"));
  double total = 0.0;
  for (const auto& t : g.truth) total += t.nll;
  EXPECT_DOUBLE_EQ(j["mean_nll"].get<double>(), total / static_cast<double>(count_transitions(g.sequences)));
}
