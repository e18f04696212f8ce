#include "wildlab/spectral.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "wildlab/errors.h"
#include "wildlab/rng.h"

namespace wildlab {
namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

std::vector<double> random_unit(size_t n, Rng& rng) {
  std::vector<double> v(n);
  double nn = 0.0;
  while (nn == 0.0) {
    for (double& x : v) x = 2.0 * uniform01(rng) - 1.0;
    nn = norm(v);
  }
  for (double& x : v) x /= nn;
  return v;
}

// Modified Gram-Schmidt, two passes. Columns that collapse (rank-deficient
// operator) are replaced by fresh random directions.
void orthonormalize(std::vector<std::vector<double>>& q, Rng& rng) {
  for (size_t j = 0; j < q.size(); ++j) {
    for (int attempt = 0;; ++attempt) {
      const double before = norm(q[j]);
      for (int pass = 0; pass < 2; ++pass) {
        for (size_t k = 0; k < j; ++k) {
          const double c = dot(q[k], q[j]);
          for (size_t i = 0; i < q[j].size(); ++i) q[j][i] -= c * q[k][i];
        }
      }
      const double after = norm(q[j]);
      if (after > 1e-12 * before && after > 0.0) {
        for (double& x : q[j]) x /= after;
        break;
      }
      if (attempt > 8) throw NumericalError("power iteration: cannot build an orthonormal block");
      q[j] = random_unit(q[j].size(), rng);
    }
  }
}

void canonical_sign(std::vector<double>& v) {
  size_t best = 0;
  for (size_t i = 1; i < v.size(); ++i) {
    if (std::abs(v[i]) > std::abs(v[best])) best = i;
  }
  if (v[best] < 0) {
    for (double& x : v) x = -x;
  }
}

}  // namespace

std::vector<double> gram_apply(const RowMatrixView& g, std::span<const double> u) {
  std::vector<double> out(g.cols, 0.0);
  for (size_t i = 0; i < g.rows; ++i) {
    const auto row = g.row(i);
    const double c = dot(row, u);
    if (c == 0.0) continue;
    for (size_t j = 0; j < g.cols; ++j) out[j] += c * row[j];
  }
  return out;
}

SymmetricEigen jacobi_eigen(std::vector<double> a, size_t n) {
  std::vector<double> v(n * n, 0.0);
  for (size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
  auto at = [&](size_t r, size_t c) -> double& { return a[r * n + c]; };
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    double total = 0.0;
    for (size_t r = 0; r < n; ++r) {
      for (size_t c = 0; c < n; ++c) {
        total += at(r, c) * at(r, c);
        if (r != c) off += at(r, c) * at(r, c);
      }
    }
    if (off <= 1e-30 * total || off == 0.0) break;
    for (size_t p = 0; p < n; ++p) {
      for (size_t q = p + 1; q < n; ++q) {
        const double apq = at(p, q);
        if (apq == 0.0) continue;
        const double theta = (at(q, q) - at(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (size_t k = 0; k < n; ++k) {
          const double akp = at(k, p);
          const double akq = at(k, q);
          at(k, p) = c * akp - s * akq;
          at(k, q) = s * akp + c * akq;
        }
        for (size_t k = 0; k < n; ++k) {
          const double apk = at(p, k);
          const double aqk = at(q, k);
          at(p, k) = c * apk - s * aqk;
          at(q, k) = s * apk + c * aqk;
        }
        for (size_t k = 0; k < n; ++k) {
          const double vkp = v[k * n + p];
          const double vkq = v[k * n + q];
          v[k * n + p] = c * vkp - s * vkq;
          v[k * n + q] = s * vkp + c * vkq;
        }
      }
    }
  }
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t x, size_t y) { return at(x, x) > at(y, y); });
  SymmetricEigen out;
  out.values.resize(n);
  out.vectors.resize(n * n);
  for (size_t k = 0; k < n; ++k) {
    out.values[k] = at(order[k], order[k]);
    for (size_t i = 0; i < n; ++i) out.vectors[i * n + k] = v[i * n + order[k]];
  }
  return out;
}

TopSingular top_singular_vector(const RowMatrixView& g, const PowerIterationOptions& opts) {
  if (g.rows == 0 || g.cols == 0) throw NumericalError("power iteration: empty matrix");
  if (std::all_of(g.data.begin(), g.data.end(), [](double x) { return x == 0.0; })) {
    throw NumericalError("power iteration: all-zero matrix has no dominant direction");
  }
  const size_t p = g.cols;
  const size_t b = std::max<size_t>(1, std::min({opts.block_size, p, g.rows}));
  Rng rng = make_rng(opts.seed, "power_iteration");

  std::vector<std::vector<double>> q(b);
  for (auto& col : q) col = random_unit(p, rng);
  orthonormalize(q, rng);

  TopSingular out;
  double prev = 0.0;
  std::vector<std::vector<double>> z(b);
  std::vector<double> ritz(p);
  for (size_t it = 1; it <= opts.max_iters; ++it) {
    for (size_t j = 0; j < b; ++j) z[j] = gram_apply(g, q[j]);
    std::vector<double> h(b * b);
    for (size_t r = 0; r < b; ++r) {
      for (size_t c = r; c < b; ++c) {
        const double v = 0.5 * (dot(q[r], z[c]) + dot(q[c], z[r]));
        h[r * b + c] = v;
        h[c * b + r] = v;
      }
    }
    const SymmetricEigen eig = jacobi_eigen(std::move(h), b);
    const double lambda = eig.values[0];

    // Top Ritz vector y = Q u1 and A y = Z u1.
    std::fill(ritz.begin(), ritz.end(), 0.0);
    std::vector<double> ay(p, 0.0);
    for (size_t j = 0; j < b; ++j) {
      const double u = eig.vectors[j * b + 0];
      for (size_t i = 0; i < p; ++i) {
        ritz[i] += u * q[j][i];
        ay[i] += u * z[j][i];
      }
    }
    double res = 0.0;
    for (size_t i = 0; i < p; ++i) res += (ay[i] - lambda * ritz[i]) * (ay[i] - lambda * ritz[i]);
    res = std::sqrt(res);

    out.iterations = it;
    const double scale = std::max(std::abs(lambda), 1e-300);
    if (it > 1 && std::abs(lambda - prev) <= opts.tol * scale && res <= opts.residual_tol * scale) {
      out.converged = true;
      break;
    }
    prev = lambda;

    // Next block: A applied to the Ritz vectors, ordered by Ritz value.
    std::vector<std::vector<double>> next(b, std::vector<double>(p, 0.0));
    for (size_t k = 0; k < b; ++k) {
      for (size_t j = 0; j < b; ++j) {
        const double u = eig.vectors[j * b + k];
        for (size_t i = 0; i < p; ++i) next[k][i] += u * z[j][i];
      }
    }
    q = std::move(next);
    orthonormalize(q, rng);
  }

  const double rn = norm(ritz);
  out.v.resize(p);
  for (size_t i = 0; i < p; ++i) out.v[i] = ritz[i] / rn;
  canonical_sign(out.v);
  double s = 0.0;
  for (size_t i = 0; i < g.rows; ++i) {
    const double c = dot(g.row(i), out.v);
    s += c * c;
  }
  out.sigma1_sq = s;
  return out;
}

std::pair<std::vector<double>, std::vector<double>> top_two_directions(
    const RowMatrixView& g, const PowerIterationOptions& opts) {
  TopSingular first = top_singular_vector(g, opts);
  std::vector<double> deflated(g.data.begin(), g.data.end());
  for (size_t i = 0; i < g.rows; ++i) {
    double* row = deflated.data() + i * g.cols;
    const double c = dot(std::span<const double>(row, g.cols), first.v);
    for (size_t j = 0; j < g.cols; ++j) row[j] -= c * first.v[j];
  }
  const double total = norm(g.data);
  const double rest = norm(deflated);
  std::vector<double> second;
  if (g.cols > 1 && rest > 1e-12 * total) {
    second = top_singular_vector({deflated, g.rows, g.cols}, opts).v;
  } else {
    // Degenerate: pick the unit vector orthogonal to the first.
    Rng rng = make_rng(opts.seed, "deflation");
    std::vector<std::vector<double>> q = {first.v, random_unit(g.cols, rng)};
    if (g.cols > 1) {
      orthonormalize(q, rng);
      second = q[1];
    } else {
      second = {0.0};
    }
  }
  return {std::move(first.v), std::move(second)};
}

}  // namespace wildlab
