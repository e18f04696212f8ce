#include "wildlab/gradscore.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>

#include "wildlab/errors.h"
#include "wildlab/rng.h"

namespace wildlab {

const char* score_method_name(ScoreMethod m) {
  switch (m) {
    case ScoreMethod::kGradient:
      return "GRADIENT";
    case ScoreMethod::kLeastConf:
      return "LEAST_CONF";
    case ScoreMethod::kEntropy:
      return "ENTROPY";
    case ScoreMethod::kMargin:
      return "MARGIN";
    case ScoreMethod::kEnergy:
      return "ENERGY";
    case ScoreMethod::kRandom:
      return "RANDOM";
  }
  return "?";
}

ScoreMethod parse_score_method(const std::string& s) {
  for (ScoreMethod m : {ScoreMethod::kGradient, ScoreMethod::kLeastConf, ScoreMethod::kEntropy,
                        ScoreMethod::kMargin, ScoreMethod::kEnergy, ScoreMethod::kRandom}) {
    if (s == score_method_name(m)) return m;
  }
  throw ValidationError("unknown score method '" + s + "'");
}

namespace {

// Per-sample CE gradient restricted to the configured parameter subset,
// written into `out` (which must already have the subset's length).
class GradientSpace {
 public:
  GradientSpace(const Network& net, const GradientOptions& opts) : net_(net) {
    if (opts.last_layer_only) indices_ = net.class_head_indices();
    full_.assign(net.num_params(), 0.0);
  }

  size_t dim() const { return indices_.empty() ? net_.num_params() : indices_.size(); }

  void gradient(const ParamVector& params, std::span<const float> x, int label,
                std::span<double> out) {
    if (indices_.empty()) {
      std::fill(out.begin(), out.end(), 0.0);
      net_.accumulate_ce(params, x, label, 1.0, out);
      return;
    }
    std::fill(full_.begin(), full_.end(), 0.0);
    net_.accumulate_ce(params, x, label, 1.0, full_);
    for (size_t k = 0; k < indices_.size(); ++k) out[k] = full_[indices_[k]];
  }

 private:
  const Network& net_;
  std::vector<size_t> indices_;
  std::vector<double> full_;
};

GradMatrix centered_matrix(const Network& net, const ParamVector& params, const Dataset& ds,
                           std::span<const double> ref_grad, const GradientOptions& opts,
                           bool use_pseudo_labels) {
  GradientSpace space(net, opts);
  if (ref_grad.size() != space.dim()) {
    throw ValidationError("gradient matrix: reference gradient has length " +
                          std::to_string(ref_grad.size()) + ", expected " +
                          std::to_string(space.dim()));
  }
  GradMatrix g;
  g.rows = ds.size();
  g.cols = space.dim();
  g.data.assign(g.rows * g.cols, 0.0);
  g.sample_ids.resize(g.rows);
  for (size_t i = 0; i < ds.size(); ++i) {
    const int label = use_pseudo_labels ? net.predict_label(params, ds.row(i)) : ds.label(i);
    std::span<double> row(g.data.data() + i * g.cols, g.cols);
    space.gradient(params, ds.row(i), label, row);
    for (size_t j = 0; j < g.cols; ++j) row[j] -= ref_grad[j];
    g.sample_ids[i] = i;
  }
  return g;
}

}  // namespace

std::vector<double> reference_gradient(const Network& net, const ParamVector& params,
                                       const Dataset& id_train, const GradientOptions& opts) {
  if (id_train.empty()) throw ValidationError("reference gradient: empty ID training set");
  GradientSpace space(net, opts);
  std::vector<double> sum(space.dim(), 0.0);
  std::vector<double> g(space.dim());
  for (size_t i = 0; i < id_train.size(); ++i) {
    const int32_t y = id_train.label(i);
    if (y < 0 || y >= id_train.num_classes()) {
      throw ValidationError("reference gradient: row " + std::to_string(i) + " is not class-labeled");
    }
    space.gradient(params, id_train.row(i), y, g);
    for (size_t j = 0; j < g.size(); ++j) sum[j] += g[j];
  }
  const double inv = 1.0 / static_cast<double>(id_train.size());
  for (double& v : sum) v *= inv;
  return sum;
}

GradMatrix wild_gradient_matrix(const Network& net, const ParamVector& params, const Dataset& wild,
                                std::span<const double> ref_grad, const GradientOptions& opts) {
  MembershipBlindScope blind;
  return centered_matrix(net, params, wild, ref_grad, opts, /*use_pseudo_labels=*/true);
}

GradMatrix labeled_gradient_matrix(const Network& net, const ParamVector& params,
                                   const Dataset& labeled, std::span<const double> ref_grad,
                                   const GradientOptions& opts) {
  MembershipBlindScope blind;
  for (size_t i = 0; i < labeled.size(); ++i) {
    if (labeled.label(i) < 0 || labeled.label(i) >= labeled.num_classes()) {
      throw ValidationError("labeled gradient matrix: row " + std::to_string(i) +
                            " is not class-labeled");
    }
  }
  return centered_matrix(net, params, labeled, ref_grad, opts, /*use_pseudo_labels=*/false);
}

TopSingular top_singular_vector(const GradMatrix& g, const PowerIterationOptions& opts) {
  return top_singular_vector(g.view(), opts);
}

std::vector<double> projection_scores(const GradMatrix& g, std::span<const double> v) {
  if (v.size() != g.cols) throw ValidationError("projection: direction has wrong length");
  std::vector<double> tau(g.rows);
  for (size_t i = 0; i < g.rows; ++i) {
    const auto row = g.row(i);
    double c = 0.0;
    for (size_t j = 0; j < g.cols; ++j) c += row[j] * v[j];
    tau[i] = c * c;
  }
  return tau;
}

ScoreTable gradient_scores(const GradMatrix& g, std::span<const double> v) {
  ScoreTable t;
  t.method = ScoreMethod::kGradient;
  t.scores = projection_scores(g, v);
  t.sample_ids = g.sample_ids;
  t.v = std::vector<double>(v.begin(), v.end());
  double s = 0.0;
  for (double tau : t.scores) s += tau;
  t.sigma1_sq = s;
  return t;
}

ScoreTable baseline_score(const Network& net, const ParamVector& params, const Dataset& wild,
                          ScoreMethod method, uint64_t seed) {
  MembershipBlindScope blind;
  if (method == ScoreMethod::kGradient) {
    throw ValidationError("baseline_score: GRADIENT is not a baseline; use gradient_scores");
  }
  ScoreTable t;
  t.method = method;
  t.scores.resize(wild.size());
  t.sample_ids.resize(wild.size());
  Rng rng = make_rng(seed, "random_score");
  for (size_t i = 0; i < wild.size(); ++i) {
    t.sample_ids[i] = i;
    if (method == ScoreMethod::kRandom) {
      t.scores[i] = uniform01(rng);
      continue;
    }
    const ForwardOutput out = net.forward(params, wild.row(i));
    if (method == ScoreMethod::kEnergy) {
      t.scores[i] = -log_sum_exp(out.logits);
      continue;
    }
    const std::vector<double> p = softmax(out.logits);
    switch (method) {
      case ScoreMethod::kLeastConf:
        t.scores[i] = 1.0 - *std::max_element(p.begin(), p.end());
        break;
      case ScoreMethod::kMargin: {
        std::vector<double> sorted = p;
        std::partial_sort(sorted.begin(), sorted.begin() + 2, sorted.end(), std::greater<>());
        t.scores[i] = -(sorted[0] - sorted[1]);
        break;
      }
      case ScoreMethod::kEntropy: {
        double h = 0.0;
        for (double pk : p) {
          if (pk > 0.0) h -= pk * std::log(pk);
        }
        t.scores[i] = h;
        break;
      }
      default:
        break;
    }
  }
  return t;
}

std::vector<size_t> kmeans_pp_seed(const RowMatrixView& embeddings, size_t k, uint64_t seed) {
  const size_t m = embeddings.rows;
  if (k > m) {
    throw ValidationError("k-means++: k=" + std::to_string(k) + " exceeds sample count " +
                          std::to_string(m));
  }
  std::vector<size_t> picks;
  if (k == 0) return picks;
  Rng rng = make_rng(seed, "kmeans_pp");
  std::vector<bool> chosen(m, false);
  std::vector<double> d2(m, std::numeric_limits<double>::infinity());

  auto pick = [&](size_t idx) {
    picks.push_back(idx);
    chosen[idx] = true;
    const auto c = embeddings.row(idx);
    for (size_t i = 0; i < m; ++i) {
      if (chosen[i]) {
        d2[i] = 0.0;
        continue;
      }
      const auto r = embeddings.row(i);
      double s = 0.0;
      for (size_t j = 0; j < embeddings.cols; ++j) s += (r[j] - c[j]) * (r[j] - c[j]);
      d2[i] = std::min(d2[i], s);
    }
  };

  pick(std::min(m - 1, static_cast<size_t>(uniform01(rng) * static_cast<double>(m))));
  while (picks.size() < k) {
    double total = 0.0;
    for (size_t i = 0; i < m; ++i) total += d2[i];
    size_t next = m;
    if (total > 0.0) {
      const double target = uniform01(rng) * total;
      double acc = 0.0;
      for (size_t i = 0; i < m; ++i) {
        if (chosen[i] || d2[i] == 0.0) continue;
        acc += d2[i];
        next = i;
        if (acc > target) break;
      }
    }
    if (next == m) {
      // Remaining points coincide with picks; fall back to a uniform choice.
      std::vector<size_t> rest;
      for (size_t i = 0; i < m; ++i) {
        if (!chosen[i]) rest.push_back(i);
      }
      next = rest[std::min(rest.size() - 1,
                           static_cast<size_t>(uniform01(rng) * static_cast<double>(rest.size())))];
    }
    pick(next);
  }
  return picks;
}

std::vector<size_t> badge_select(const Network& net, const ParamVector& params, const Dataset& wild,
                                 size_t k, uint64_t seed) {
  MembershipBlindScope blind;
  if (k > wild.size()) {
    throw ValidationError("badge: k=" + std::to_string(k) + " exceeds wild set size " +
                          std::to_string(wild.size()));
  }
  std::vector<double> emb;
  size_t cols = 0;
  for (size_t i = 0; i < wild.size(); ++i) {
    const int y = net.predict_label(params, wild.row(i));
    const std::vector<double> e = net.head_gradient_embedding(params, wild.row(i), y);
    cols = e.size();
    emb.insert(emb.end(), e.begin(), e.end());
  }
  return kmeans_pp_seed({emb, wild.size(), cols}, k, seed);
}

void write_scores_csv(const std::filesystem::path& path, const ScoreTable& table) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.precision(17);
  out << "sample_id,score,method\n";
  for (size_t i = 0; i < table.size(); ++i) {
    out << table.sample_ids[i] << ',' << table.scores[i] << ',' << score_method_name(table.method)
        << '\n';
  }
}

void write_score_histogram_csv(const std::filesystem::path& path, const ScoreTable& table,
                               const Dataset& wild, size_t bins) {
  if (bins == 0) throw ValidationError("histogram: bins must be >= 1");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.precision(17);
  out << "bin,lo,hi,n_id,n_cov,n_sem,n_unknown\n";
  if (table.size() == 0) return;
  const auto [mn, mx] = std::minmax_element(table.scores.begin(), table.scores.end());
  const double lo = *mn;
  const double width = (*mx > lo) ? (*mx - lo) / static_cast<double>(bins) : 1.0;
  std::vector<std::array<size_t, 4>> counts(bins, {0, 0, 0, 0});
  for (size_t i = 0; i < table.size(); ++i) {
    size_t b = static_cast<size_t>((table.scores[i] - lo) / width);
    b = std::min(b, bins - 1);
    const Membership m = wild.membership(table.sample_ids[i]);
    const size_t slot = m == Membership::kId          ? 0
                        : m == Membership::kCovariate ? 1
                        : m == Membership::kSemantic  ? 2
                                                      : 3;
    ++counts[b][slot];
  }
  for (size_t b = 0; b < bins; ++b) {
    out << b << ',' << lo + width * static_cast<double>(b) << ','
        << lo + width * static_cast<double>(b + 1) << ',' << counts[b][0] << ',' << counts[b][1]
        << ',' << counts[b][2] << ',' << counts[b][3] << '\n';
  }
}

}  // namespace wildlab
