#include <cmath>
#include <random>

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include "wildlab/errors.h"
#include "wildlab/spectral.h"

namespace wildlab {
namespace {

struct Dense {
  std::vector<double> data;
  size_t rows, cols;
  RowMatrixView view() const { return {data, rows, cols}; }
};

Dense random_matrix(std::mt19937_64& rng, size_t m, size_t p) {
  std::normal_distribution<double> n(0.0, 1.0);
  Dense g{std::vector<double>(m * p), m, p};
  for (double& v : g.data) v = n(rng);
  return g;
}

Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> gram_oracle(const Dense& g) {
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> G(
      g.data.data(), static_cast<Eigen::Index>(g.rows), static_cast<Eigen::Index>(g.cols));
  const Eigen::MatrixXd A = G.transpose() * G;
  return Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(A);
}

TEST(PowerIteration, MatchesDenseEigensolver) {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<size_t> msz(1, 50), psz(1, 20);
  int checked = 0;
  for (int t = 0; t < 260 && checked < 200; ++t) {
    const Dense g = random_matrix(rng, msz(rng), psz(rng));
    const auto es = gram_oracle(g);
    const Eigen::Index p = es.eigenvalues().size();
    const double l1 = es.eigenvalues()(p - 1);
    const double l2 = p > 1 ? es.eigenvalues()(p - 2) : 0.0;
    if ((l1 - l2) < 1e-6 * l1) continue;
    ++checked;
    PowerIterationOptions opts;
    opts.seed = static_cast<uint64_t>(t);
    const TopSingular top = top_singular_vector(g.view(), opts);
    double dot = 0.0;
    for (Eigen::Index j = 0; j < p; ++j) dot += top.v[j] * es.eigenvectors()(j, p - 1);
    EXPECT_GE(std::abs(dot), 1.0 - 1e-8) << "instance " << t;
    EXPECT_LE(std::abs(top.sigma1_sq - l1), 1e-8 * l1) << "instance " << t;
  }
  EXPECT_EQ(checked, 200);
}

TEST(PowerIteration, SingleRow) {
  Dense g{{3.0, 0.0, -4.0}, 1, 3};
  const TopSingular top = top_singular_vector(g.view());
  EXPECT_NEAR(top.sigma1_sq, 25.0, 1e-12);
  EXPECT_NEAR(std::abs(top.v[0]), 0.6, 1e-12);
  EXPECT_NEAR(std::abs(top.v[2]), 0.8, 1e-12);
  EXPECT_GT(top.v[2], 0.0);  // sign convention: largest |entry| positive
}

TEST(PowerIteration, OrthogonalRowsPickTheLongerOne) {
  Dense g{{3.0, 0.0, 0.0, 2.0}, 2, 2};
  const TopSingular top = top_singular_vector(g.view());
  EXPECT_NEAR(top.sigma1_sq, 9.0, 1e-12);
  EXPECT_NEAR(std::abs(top.v[0]), 1.0, 1e-12);
  EXPECT_NEAR(top.v[1], 0.0, 1e-7);
}

TEST(PowerIteration, ZeroMatrixHasNoDirection) {
  Dense g{std::vector<double>(6, 0.0), 2, 3};
  EXPECT_THROW(top_singular_vector(g.view()), NumericalError);
}

TEST(PowerIteration, SingleVectorModeAlsoConverges) {
  std::mt19937_64 rng(5);
  const Dense g = random_matrix(rng, 30, 8);
  PowerIterationOptions opts;
  opts.block_size = 1;
  opts.max_iters = 20000;
  const TopSingular a = top_singular_vector(g.view(), opts);
  const TopSingular b = top_singular_vector(g.view());
  EXPECT_NEAR(a.sigma1_sq, b.sigma1_sq, 1e-8 * b.sigma1_sq);
}

TEST(GramApply, EqualsDenseProduct) {
  std::mt19937_64 rng(6);
  const Dense g = random_matrix(rng, 7, 5);
  std::vector<double> u = {0.3, -1.0, 2.0, 0.0, 0.5};
  const auto out = gram_apply(g.view(), u);
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> G(
      g.data.data(), 7, 5);
  const Eigen::VectorXd ref = G.transpose() * (G * Eigen::Map<const Eigen::VectorXd>(u.data(), 5));
  for (int j = 0; j < 5; ++j) EXPECT_NEAR(out[j], ref(j), 1e-12);
}

TEST(Jacobi, MatchesEigenOnSymmetricMatrices) {
  std::mt19937_64 rng(7);
  for (size_t n : {1u, 2u, 5u, 9u}) {
    const Dense g = random_matrix(rng, n + 3, n);
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> G(
        g.data.data(), static_cast<Eigen::Index>(n + 3), static_cast<Eigen::Index>(n));
    const Eigen::MatrixXd A = G.transpose() * G;
    std::vector<double> a(n * n);
    for (size_t i = 0; i < n; ++i)
      for (size_t j = 0; j < n; ++j) a[i * n + j] = A(i, j);
    const SymmetricEigen mine = jacobi_eigen(a, n);
    const auto es = gram_oracle(g);
    for (size_t k = 0; k < n; ++k) {
      const double ref = es.eigenvalues()(static_cast<Eigen::Index>(n - 1 - k));
      EXPECT_NEAR(mine.values[k], ref, 1e-10 * std::max(1.0, std::abs(ref)));
    }
  }
}

TEST(TopTwo, SecondDirectionIsOrthogonal) {
  std::mt19937_64 rng(8);
  const Dense g = random_matrix(rng, 40, 6);
  const auto [a, b] = top_two_directions(g.view());
  const auto es = gram_oracle(g);
  double dot = 0.0, n2 = 0.0, second = 0.0;
  for (int j = 0; j < 6; ++j) {
    dot += a[j] * b[j];
    n2 += b[j] * b[j];
    second += b[j] * es.eigenvectors()(j, 4);
  }
  EXPECT_NEAR(dot, 0.0, 1e-8);
  EXPECT_NEAR(n2, 1.0, 1e-10);
  EXPECT_GE(std::abs(second), 1.0 - 1e-6);
}

TEST(TopTwo, RankOneInputStillGivesAnOrthogonalUnitVector) {
  Dense g{{1.0, 2.0, 2.0, 4.0}, 2, 2};
  const auto [a, b] = top_two_directions(g.view());
  EXPECT_NEAR(a[0] * b[0] + a[1] * b[1], 0.0, 1e-12);
  EXPECT_NEAR(b[0] * b[0] + b[1] * b[1], 1.0, 1e-12);
}

}  // namespace
}  // namespace wildlab
