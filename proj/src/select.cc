#include "wildlab/select.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include "wildlab/errors.h"
#include "wildlab/json_util.h"

namespace wildlab {

const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::kTopK:
      return "TOP_K";
    case Strategy::kNearBoundary:
      return "NEAR_BOUNDARY";
    case Strategy::kMixed:
      return "MIXED";
  }
  return "?";
}

Strategy parse_strategy(const std::string& s) {
  for (Strategy st : {Strategy::kTopK, Strategy::kNearBoundary, Strategy::kMixed}) {
    if (s == strategy_name(st)) return st;
  }
  throw ValidationError("unknown selection strategy '" + s + "'");
}

void to_json(nlohmann::json& j, const SelectionResult& s) {
  j = {{"indices", s.indices},
       {"strategy", strategy_name(s.strategy)},
       {"k", s.k},
       {"tau_b", s.tau_b ? nlohmann::json(*s.tau_b) : nlohmann::json(nullptr)},
       {"lambda", s.lambda ? nlohmann::json(*s.lambda) : nlohmann::json(nullptr)},
       {"scores", s.scores}};
}

void from_json(const nlohmann::json& j, SelectionResult& s) {
  StrictObject o(j, "selection");
  o.required("indices", s.indices);
  std::string strategy = strategy_name(s.strategy);
  o.optional("strategy", strategy);
  s.strategy = parse_strategy(strategy);
  s.k = s.indices.size();
  o.optional("k", s.k);
  double v = 0.0;
  if (o.has("tau_b") && !j.at("tau_b").is_null()) {
    o.optional("tau_b", v);
    s.tau_b = v;
  } else {
    o.optional("tau_b", v);
  }
  if (o.has("lambda") && !j.at("lambda").is_null()) {
    o.optional("lambda", v);
    s.lambda = v;
  } else {
    o.optional("lambda", v);
  }
  o.optional("scores", s.scores);
  o.finish();
  if (!s.scores.empty() && s.scores.size() != s.indices.size()) {
    throw ValidationError("selection: scores must align with indices");
  }
  std::unordered_set<size_t> seen(s.indices.begin(), s.indices.end());
  if (seen.size() != s.indices.size()) throw ValidationError("selection: duplicate indices");
}

double quantile_linear(std::vector<double> values, double q) {
  if (values.empty()) throw ValidationError("quantile: empty sample");
  if (!(q > 0.0 && q < 1.0)) throw ValidationError("quantile: level must be in (0, 1)");
  std::sort(values.begin(), values.end());
  const double h = static_cast<double>(values.size() - 1) * q;
  const size_t lo = static_cast<size_t>(std::floor(h));
  const size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

namespace {

void require_nonempty(const ScoreTable& scores, size_t k) {
  if (scores.size() == 0) throw ValidationError("selection: empty score table");
  if (k < 1) throw ValidationError("selection: k must be >= 1");
}

// Positions into the score table ordered by `better(a, b)`, ties by sample id.
template <typename Key>
std::vector<size_t> ranking(const ScoreTable& scores, Key key) {
  std::vector<size_t> pos(scores.size());
  std::iota(pos.begin(), pos.end(), size_t{0});
  std::sort(pos.begin(), pos.end(), [&](size_t a, size_t b) {
    const double ka = key(scores.scores[a]);
    const double kb = key(scores.scores[b]);
    if (ka != kb) return ka < kb;
    return scores.sample_ids[a] < scores.sample_ids[b];
  });
  return pos;
}

std::vector<size_t> top_ranking(const ScoreTable& scores) {
  return ranking(scores, [](double s) { return -s; });
}

std::vector<size_t> boundary_ranking(const ScoreTable& scores, double tau_b) {
  return ranking(scores, [tau_b](double s) { return std::abs(s - tau_b); });
}

void emit(const ScoreTable& scores, size_t pos, SelectionResult& out) {
  out.indices.push_back(scores.sample_ids[pos]);
  out.scores.push_back(scores.scores[pos]);
}

}  // namespace

SelectionResult select_top_k(const ScoreTable& scores, size_t k) {
  MembershipBlindScope blind;
  require_nonempty(scores, k);
  SelectionResult out;
  out.strategy = Strategy::kTopK;
  out.k = k;
  const std::vector<size_t> order = top_ranking(scores);
  for (size_t i = 0; i < std::min(k, order.size()); ++i) emit(scores, order[i], out);
  return out;
}

SelectionResult select_near_boundary(const ScoreTable& scores, double tau_b, size_t k) {
  MembershipBlindScope blind;
  require_nonempty(scores, k);
  if (!std::isfinite(tau_b)) throw ValidationError("near-boundary: tau_b must be finite");
  SelectionResult out;
  out.strategy = Strategy::kNearBoundary;
  out.k = k;
  out.tau_b = tau_b;
  const std::vector<size_t> order = boundary_ranking(scores, tau_b);
  for (size_t i = 0; i < std::min(k, order.size()); ++i) emit(scores, order[i], out);
  return out;
}

SelectionResult select_mixed(const ScoreTable& scores, double tau_b, size_t k, double lambda) {
  MembershipBlindScope blind;
  require_nonempty(scores, k);
  if (!std::isfinite(tau_b)) throw ValidationError("mixed: tau_b must be finite");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ValidationError("mixed: lambda must be in [0,1]");
  SelectionResult out;
  out.strategy = Strategy::kMixed;
  out.k = k;
  out.tau_b = tau_b;
  out.lambda = lambda;

  const size_t budget = std::min(k, scores.size());
  const size_t k1 = std::min(budget, static_cast<size_t>(std::llround(lambda * static_cast<double>(k))));
  const std::vector<size_t> top = top_ranking(scores);
  const std::vector<size_t> boundary = boundary_ranking(scores, tau_b);
  std::vector<bool> taken(scores.size(), false);
  for (size_t i = 0; i < k1; ++i) {
    emit(scores, top[i], out);
    taken[top[i]] = true;
  }
  // Near-boundary ranking fills the rest, skipping picks already made; this
  // both takes the k - k1 boundary picks and backfills any overlap.
  for (size_t i = 0; i < boundary.size() && out.indices.size() < budget; ++i) {
    if (taken[boundary[i]]) continue;
    emit(scores, boundary[i], out);
    taken[boundary[i]] = true;
  }
  return out;
}

double id_boundary_threshold(const Network& net, const ParamVector& params, const Dataset& id_train,
                             std::span<const double> v, std::span<const double> ref_grad,
                             double percentile, const GradientOptions& opts) {
  if (!(percentile > 0.0 && percentile < 1.0)) {
    throw ValidationError("boundary threshold: percentile must be in (0, 1)");
  }
  if (id_train.empty()) throw ValidationError("boundary threshold: empty ID training set");
  const GradMatrix g = labeled_gradient_matrix(net, params, id_train, ref_grad, opts);
  return quantile_linear(projection_scores(g, v), percentile);
}

}  // namespace wildlab
