#ifndef WILDLAB_SPECTRAL_H_
#define WILDLAB_SPECTRAL_H_

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace wildlab {

// Read-only m x p row-major matrix.
struct RowMatrixView {
  std::span<const double> data;
  size_t rows = 0;
  size_t cols = 0;

  std::span<const double> row(size_t i) const { return data.subspan(i * cols, cols); }
};

struct PowerIterationOptions {
  double tol = 1e-10;           // relative change of successive Rayleigh quotients
  double residual_tol = 1e-10;  // ||A v - lambda v|| / lambda
  size_t max_iters = 500;
  // Number of vectors iterated together. The top Ritz pair then converges at
  // rate lambda_{b+1} / lambda_1 instead of lambda_2 / lambda_1, which matters
  // when the leading eigenvalues are close.
  size_t block_size = 4;
  uint64_t seed = 0;
};

struct TopSingular {
  std::vector<double> v;   // unit norm, sign fixed so the largest |entry| is positive
  double sigma1_sq = 0.0;  // sum_i <g_i, v>^2
  size_t iterations = 0;
  bool converged = false;
};

// u -> sum_i g_i <g_i, u>, i.e. (G^T G) u without forming G^T G.
std::vector<double> gram_apply(const RowMatrixView& g, std::span<const double> u);

// Leading right singular vector of G by (block) power iteration on the Gram
// operator. Throws NumericalError when every row is zero.
TopSingular top_singular_vector(const RowMatrixView& g, const PowerIterationOptions& opts = {});

// Leading two directions; the second comes from the rows deflated by the first.
// When the deflated matrix is zero the second direction is any unit vector
// orthogonal to the first.
std::pair<std::vector<double>, std::vector<double>> top_two_directions(
    const RowMatrixView& g, const PowerIterationOptions& opts = {});

struct SymmetricEigen {
  std::vector<double> values;   // descending
  std::vector<double> vectors;  // column k (n entries, stride n) pairs with values[k]
};

// Cyclic Jacobi rotations; intended for the small projected problems inside
// block iteration. `a` is n x n row-major and must be symmetric.
SymmetricEigen jacobi_eigen(std::vector<double> a, size_t n);

}  // namespace wildlab

#endif  // WILDLAB_SPECTRAL_H_
