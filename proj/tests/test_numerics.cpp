#include <gtest/gtest.h>

#include <cmath>

#include "attralign/numerics.hpp"
#include "test_support.hpp"

namespace attralign {
namespace {

TEST(Rng, SameSeedSameMatrix) {
  Rng a(7), b(7);
  EXPECT_EQ(sample_standard_normal(a, 20, 3), sample_standard_normal(b, 20, 3));
}

TEST(Rng, DifferentSeedsDiffer) {
  Rng a(7), b(8);
  EXPECT_NE(sample_standard_normal(a, 4, 2), sample_standard_normal(b, 4, 2));
}

TEST(Rng, StandardNormalMoments) {
  Rng rng(11);
  const Matrix m = sample_standard_normal(rng, 100000, 1);
  double mean = 0.0;
  for (double v : m.values()) mean += v;
  mean /= 1e5;
  double var = 0.0;
  for (double v : m.values()) var += (v - mean) * (v - mean);
  var /= 1e5 - 1;
  EXPECT_NEAR(mean, 0.0, 0.02);
  EXPECT_NEAR(var, 1.0, 0.05);
}

TEST(Rng, SingleDrawIsFinite) {
  Rng rng(1);
  const Matrix m = sample_standard_normal(rng, 1, 1);
  ASSERT_EQ(m.size(), 1u);
  EXPECT_TRUE(std::isfinite(m(0, 0)));
}

TEST(Rng, EmptyShapeRejected) {
  Rng rng(1);
  EXPECT_THROW(sample_standard_normal(rng, 0, 2), std::invalid_argument);
}

TEST(Rng, StreamMatchesStandardEngine) {
  // The first outputs are those of std::mt19937_64, whose sequence the
  // standard fixes; the 10000th output for the default seed is pinned there.
  Rng rng(5489);
  std::uint64_t last = 0;
  for (int i = 0; i < 10000; ++i) last = rng.next_u64();
  EXPECT_EQ(last, 9981545732273789042ULL);
}

TEST(Rng, UniformRanges) {
  Rng rng(3);
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.uniform();
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
    const double w = rng.uniform_open_low();
    EXPECT_GT(w, 0.0);
    EXPECT_LE(w, 1.0);
  }
}

TEST(Rng, CategoricalFollowsWeights) {
  Rng rng(9);
  const Vector w{1.0, 3.0};
  int ones = 0;
  for (int i = 0; i < 40000; ++i) ones += rng.categorical(w) == 1 ? 1 : 0;
  EXPECT_NEAR(ones / 40000.0, 0.75, 0.01);
}

TEST(Softmax, Symmetric) {
  const Vector p = softmax(Vector{0.0, 0.0});
  EXPECT_DOUBLE_EQ(p[0], 0.5);
  EXPECT_DOUBLE_EQ(p[1], 0.5);
}

TEST(Softmax, LargeLogitDoesNotOverflow) {
  const Vector p = softmax(Vector{1000.0, 0.0});
  EXPECT_DOUBLE_EQ(p[0], 1.0);
  EXPECT_GE(p[1], 0.0);
  EXPECT_LT(p[1], 1e-300);
}

TEST(Softmax, LogOddsExample) {
  const Vector p = softmax(Vector{std::log(1.0), std::log(3.0)});
  EXPECT_NEAR(p[0], 0.25, 1e-15);
  EXPECT_NEAR(p[1], 0.75, 1e-15);
}

TEST(Softmax, StaysOnSimplexForRandomLogits) {
  Rng rng(21);
  for (int trial = 0; trial < 500; ++trial) {
    Vector logits(1 + rng.below(8));
    for (double& v : logits) v = 50.0 * rng.normal();
    const Vector p = softmax(logits);
    double total = 0.0;
    for (double v : p) {
      EXPECT_GE(v, 0.0);
      total += v;
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(Matmul, AgreesWithTripleLoop) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix a = testing::random_matrix(rng, 5, 5);
    const Matrix b = testing::random_matrix(rng, 5, 5);
    const Matrix c = matmul(a, b);
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t j = 0; j < 5; ++j) {
        double ref = 0.0;
        for (std::size_t k = 0; k < 5; ++k) ref += a(i, k) * b(k, j);
        EXPECT_NEAR(c(i, j), ref, 1e-12);
      }
  }
}

TEST(Matmul, ShapeMismatchThrows) {
  EXPECT_THROW(matmul(Matrix(2, 3), Matrix(2, 3)), std::invalid_argument);
}

TEST(Matrix, TransposeAndIdentity) {
  const Matrix a = Matrix::from_rows({{1, 2, 3}, {4, 5, 6}});
  const Matrix t = transpose(a);
  EXPECT_EQ(t.rows(), 3u);
  EXPECT_EQ(t(2, 1), 6.0);
  EXPECT_EQ(matmul(Matrix::identity(2), a), a);
}

TEST(FitGaussian, TwoSamplesMean) {
  const GaussianFit g = fit_gaussian(Matrix::from_rows({{0, 0}, {2, 0}}));
  EXPECT_DOUBLE_EQ(g.mean[0], 1.0);
  EXPECT_DOUBLE_EQ(g.mean[1], 0.0);
  EXPECT_NEAR(g.covariance(0, 0), 2.0, 1e-8);
}

TEST(FitGaussian, IdenticalSamplesGiveRegularizer) {
  const GaussianFit g = fit_gaussian(Matrix::from_rows({{1, 2}, {1, 2}, {1, 2}}));
  EXPECT_DOUBLE_EQ(g.covariance(0, 0), kCovarianceRegularizer);
  EXPECT_DOUBLE_EQ(g.covariance(1, 1), kCovarianceRegularizer);
  EXPECT_DOUBLE_EQ(g.covariance(0, 1), 0.0);
}

TEST(FitGaussian, StandardNormalCovariance) {
  Rng rng(17);
  const GaussianFit g = fit_gaussian(sample_standard_normal(rng, 10000, 2));
  EXPECT_NEAR(g.covariance(0, 0), 1.0, 0.05);
  EXPECT_NEAR(g.covariance(1, 1), 1.0, 0.05);
  EXPECT_NEAR(g.covariance(0, 1), 0.0, 0.05);
}

TEST(FitGaussian, TooFewSamplesThrows) {
  EXPECT_THROW(fit_gaussian(Matrix(1, 2)), std::invalid_argument);
}

TEST(Histogram, CountsAndNormalizes) {
  const std::vector<std::size_t> labels{0, 1, 1, 2, 1};
  EXPECT_EQ(histogram(labels, 3), (std::vector<std::size_t>{1, 3, 1}));
  const Vector p = normalized_histogram(labels, 3);
  EXPECT_DOUBLE_EQ(p[1], 0.6);
}

TEST(Argmax, FirstMaximumWins) {
  EXPECT_EQ(argmax(Vector{1.0, 3.0, 3.0}), 1u);
}

}  // namespace
}  // namespace attralign
