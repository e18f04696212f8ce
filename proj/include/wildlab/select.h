#ifndef WILDLAB_SELECT_H_
#define WILDLAB_SELECT_H_

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "wildlab/gradscore.h"

namespace wildlab {

enum class Strategy { kTopK, kNearBoundary, kMixed };

const char* strategy_name(Strategy s);
Strategy parse_strategy(const std::string& s);

struct SelectionResult {
  std::vector<size_t> indices;  // wild sample ids, in selection order
  Strategy strategy = Strategy::kTopK;
  size_t k = 0;
  std::optional<double> tau_b;   // NEAR_BOUNDARY and MIXED
  std::optional<double> lambda;  // MIXED only
  // Score of each selected sample (same order as `indices`), shipped to the
  // annotation UI as context.
  std::vector<double> scores;
};

void to_json(nlohmann::json& j, const SelectionResult& s);
void from_json(const nlohmann::json& j, SelectionResult& s);

// Empirical quantile with linear interpolation between order statistics
// (h = (n - 1) q). q must lie in (0, 1).
double quantile_linear(std::vector<double> values, double q);

// k largest scores; ties go to the lower sample id. k > m returns all m.
SelectionResult select_top_k(const ScoreTable& scores, size_t k);

// k scores closest to tau_b in score space; ties go to the lower sample id.
SelectionResult select_near_boundary(const ScoreTable& scores, double tau_b, size_t k);

// round(lambda k) from the top-k ranking plus the rest from the near-boundary
// ranking. Overlaps are backfilled from the near-boundary ranking so the
// batch keeps exactly min(k, m) distinct samples.
SelectionResult select_mixed(const ScoreTable& scores, double tau_b, size_t k, double lambda);

// tau scores of labeled ID data (true labels, centered by ref_grad, projected
// on v), then their `percentile` quantile.
double id_boundary_threshold(const Network& net, const ParamVector& params, const Dataset& id_train,
                             std::span<const double> v, std::span<const double> ref_grad,
                             double percentile = 0.95, const GradientOptions& opts = {});

}  // namespace wildlab

#endif  // WILDLAB_SELECT_H_
