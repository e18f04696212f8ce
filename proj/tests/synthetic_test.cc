#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "test_util.h"
#include "wildlab/errors.h"
#include "wildlab/synthetic.h"

namespace wildlab {
namespace {

SyntheticSpec tiny_spec(uint64_t seed) {
  SyntheticSpec s;
  s.num_classes = 3;
  s.dim = 2;
  s.id_means = {{3.0, 0.0}, {0.0, 3.0}, {-3.0, -3.0}};
  s.covariate = AdditiveNoise{0.5};
  s.semantic_clusters = {{{6.0, 6.0}, 0.5}};
  s.seed = seed;
  s.sizes = {300, 200, 200, 200, 100, 100, 100};
  return s;
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

TEST(Synthetic, SameSeedGivesIdenticalFiles) {
  testing::TempDir dir("synth");
  const SyntheticData a = generate_synthetic(tiny_spec(7));
  const SyntheticData b = generate_synthetic(tiny_spec(7));
  write_dataset(a.cov_pool, dir / "a.wds");
  write_dataset(b.cov_pool, dir / "b.wds");
  EXPECT_EQ(testing::slurp(dir / "a.wds"), testing::slurp(dir / "b.wds"));
  EXPECT_EQ(a.id_train, b.id_train);
  EXPECT_EQ(a.sem_test, b.sem_test);
  EXPECT_NE(generate_synthetic(tiny_spec(8)).id_train, a.id_train);
}

TEST(Synthetic, ZeroNoiseIsTheIdentityTransform) {
  SyntheticSpec s = tiny_spec(3);
  s.covariate = AdditiveNoise{0.0};
  const SyntheticData d = generate_synthetic(s);
  const Dataset base = draw_id_split(s, s.sizes.cov_pool, "cov_pool", Membership::kCovariate);
  ASSERT_EQ(base.size(), d.cov_pool.size());
  for (size_t i = 0; i < base.size(); ++i) {
    EXPECT_EQ(d.cov_pool.label(i), base.label(i));
    for (size_t j = 0; j < s.dim; ++j) EXPECT_EQ(d.cov_pool.row(i)[j], base.row(i)[j]);
  }
}

TEST(Synthetic, TransformsActAsDocumented) {
  Rng rng(0);
  std::vector<double> x = {1.0, 2.0, 3.0};
  apply_covariate_transform(AffineShift{{1.0, -1.0, 0.5}}, x, rng);
  EXPECT_EQ(x, (std::vector<double>{2.0, 1.0, 3.5}));
  x = {1.0, 0.0, 3.0};
  apply_covariate_transform(Rotation{std::numbers::pi / 2}, x, rng);
  EXPECT_NEAR(x[0], 0.0, 1e-15);
  EXPECT_NEAR(x[1], 1.0, 1e-15);
  EXPECT_EQ(x[2], 3.0);
}

TEST(Synthetic, SemanticRowsNeverCarryClassLabels) {
  const SyntheticData d = generate_synthetic(desk_benchmark_spec(1));
  for (const Dataset* ds : {&d.sem_pool, &d.sem_test}) {
    for (size_t i = 0; i < ds->size(); ++i) {
      EXPECT_EQ(ds->label(i), kBottom);
      EXPECT_EQ(ds->membership(i), Membership::kSemantic);
    }
  }
  for (size_t i = 0; i < d.cov_test.size(); ++i) {
    EXPECT_GE(d.cov_test.label(i), 0);
    EXPECT_LT(d.cov_test.label(i), 4);
  }
}

// Two unit-variance classes at (-3, 0) and (3, 0): the Bayes rule is the sign
// of x0 and its error is Phi(-3).
TEST(Synthetic, TwoClassBayesAccuracy) {
  SyntheticSpec s;
  s.num_classes = 2;
  s.dim = 2;
  s.id_means = {{-3.0, 0.0}, {3.0, 0.0}};
  s.semantic_clusters = {{{0.0, 10.0}, 1.0}};
  s.seed = 11;
  s.sizes.id_test = 1000;
  const SyntheticData d = generate_synthetic(s);
  size_t correct = 0;
  for (size_t i = 0; i < d.id_test.size(); ++i) {
    const int pred = d.id_test.row(i)[0] > 0.0f ? 1 : 0;
    correct += pred == d.id_test.label(i);
  }
  const double acc = static_cast<double>(correct) / 1000.0;
  EXPECT_GE(acc, 0.99);
  const double bayes_err = normal_cdf(-3.0);
  EXPECT_NEAR(bayes_err, 0.0013498980316301, 1e-12);
  // Binomial(1000, Phi(-3)) errors; 5 sigma above the mean is still < 1%.
  EXPECT_LE(1.0 - acc, bayes_err + 5.0 * std::sqrt(bayes_err * (1 - bayes_err) / 1000.0));
}

TEST(Synthetic, RejectsDegenerateSpecs) {
  SyntheticSpec s = tiny_spec(0);
  s.id_cov_scale = 0.0;
  EXPECT_THROW(generate_synthetic(s), ValidationError);
  s = tiny_spec(0);
  s.num_classes = 1;
  s.id_means.resize(1);
  EXPECT_THROW(generate_synthetic(s), ValidationError);
  s = tiny_spec(0);
  s.covariate = AdditiveNoise{-1.0};
  EXPECT_THROW(generate_synthetic(s), ValidationError);
  s = tiny_spec(0);
  s.semantic_clusters.clear();
  EXPECT_THROW(generate_synthetic(s), ValidationError);
  s = tiny_spec(0);
  s.covariate = AffineShift{{1.0}};
  EXPECT_THROW(generate_synthetic(s), ValidationError);
}

TEST(MixWild, ExpectedCompositionArithmetic) {
  WildMixtureSpec w;
  const double m = 1000.0;
  EXPECT_DOUBLE_EQ((1.0 - w.pi_c - w.pi_s) * m, 400.0);
  EXPECT_DOUBLE_EQ(w.pi_c * m, 500.0);
  EXPECT_NEAR(w.pi_s * m, 100.0, 1e-12);
}

TEST(MixWild, FractionsWithinThreeSigmaOfBinomial) {
  const SyntheticData d = generate_synthetic(tiny_spec(5));
  WildMixtureSpec w;
  w.m = 10000;
  const Dataset wild = mix_wild(d.id_pool, d.cov_pool, d.sem_pool, w, 99);
  ASSERT_EQ(wild.size(), 10000u);
  size_t counts[3] = {0, 0, 0};
  for (size_t i = 0; i < wild.size(); ++i) {
    ++counts[static_cast<int>(wild.membership(i))];
    EXPECT_EQ(wild.label(i), kUnlabeled);
  }
  const double p[3] = {0.4, 0.5, 0.1};
  for (int c = 0; c < 3; ++c) {
    const double mean = p[c] * 10000.0;
    const double sd = std::sqrt(10000.0 * p[c] * (1.0 - p[c]));
    EXPECT_LE(std::abs(static_cast<double>(counts[c]) - mean), 3.0 * sd) << "component " << c;
  }
}

TEST(MixWild, AnswerKeyMatchesPoolLabels) {
  const SyntheticData d = generate_synthetic(tiny_spec(5));
  WildMixtureSpec w;
  w.m = 500;
  const Dataset wild = mix_wild(d.id_pool, d.cov_pool, d.sem_pool, w, 3);
  ASSERT_TRUE(wild.has_answer_key());
  for (size_t i = 0; i < wild.size(); ++i) {
    if (wild.membership(i) == Membership::kSemantic) {
      EXPECT_EQ(wild.true_label(i), kBottom);
    } else {
      EXPECT_GE(wild.true_label(i), 0);
    }
  }
}

TEST(MixWild, ZeroOodWeightsGiveOnlyId) {
  const SyntheticData d = generate_synthetic(tiny_spec(5));
  WildMixtureSpec w;
  w.pi_c = 0.0;
  w.pi_s = 0.0;
  w.m = 300;
  const Dataset wild = mix_wild(d.id_pool, d.cov_pool, d.sem_pool, w, 1);
  for (size_t i = 0; i < wild.size(); ++i) EXPECT_EQ(wild.membership(i), Membership::kId);
}

TEST(MixWild, RejectsOverfullMixture) {
  const SyntheticData d = generate_synthetic(tiny_spec(5));
  WildMixtureSpec w;
  w.pi_c = 0.7;
  w.pi_s = 0.4;
  EXPECT_THROW(mix_wild(d.id_pool, d.cov_pool, d.sem_pool, w, 1), ValidationError);
}

TEST(MixWild, DeterministicInSeed) {
  const SyntheticData d = generate_synthetic(tiny_spec(5));
  WildMixtureSpec w;
  w.m = 200;
  EXPECT_EQ(mix_wild(d.id_pool, d.cov_pool, d.sem_pool, w, 4),
            mix_wild(d.id_pool, d.cov_pool, d.sem_pool, w, 4));
}

TEST(SyntheticJson, RoundTrips) {
  SyntheticSpec s = tiny_spec(9);
  s.covariate = Rotation{0.6};
  nlohmann::json j = s;
  SyntheticSpec back = j.get<SyntheticSpec>();
  EXPECT_EQ(nlohmann::json(back), j);
}

}  // namespace
}  // namespace wildlab
