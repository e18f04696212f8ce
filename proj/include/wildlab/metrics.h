#ifndef WILDLAB_METRICS_H_
#define WILDLAB_METRICS_H_

#include <span>
#include <vector>

#include "json.hpp"
#include "wildlab/dataset.h"
#include "wildlab/nnet.h"
#include "wildlab/select.h"

namespace wildlab {

struct Composition {
  size_t n_id = 0;
  size_t n_cov = 0;
  size_t n_sem = 0;

  size_t total() const { return n_id + n_cov + n_sem; }
  bool operator==(const Composition&) const = default;
};

struct DetectorMetrics {
  double fpr95 = 0.0;
  double auroc = 0.0;
  double threshold_lambda = 0.0;
};

struct EvalReport {
  double id_acc = 0.0;
  double ood_acc = 0.0;  // covariate test set
  double fpr95 = 0.0;
  double auroc = 0.0;
  double threshold_lambda = 0.0;
  Composition selection_composition;
};

void to_json(nlohmann::json& j, const Composition& c);
void to_json(nlohmann::json& j, const EvalReport& r);

// Fraction of rows whose predicted class equals the stored label. Throws on
// an empty set or rows without a class label.
double accuracy(const Network& net, const ParamVector& params, const Dataset& test);

// AUROC with ID as the positive class: P(id > sem) + 0.5 P(id == sem).
// Sort-and-sweep, O((n + m) log(n + m)).
double auroc(std::span<const double> id_scores, std::span<const double> sem_scores);

// Threshold is the order statistic at floor(0.05 (n - 1)) of the ID scores,
// so at least 95% of ID is declared ID (g > lambda counts as ID). FPR is the
// fraction of semantic scores strictly above it.
DetectorMetrics detector_metrics(std::span<const double> id_scores,
                                 std::span<const double> sem_scores);

std::vector<double> detector_scores(const Network& net, const ParamVector& params,
                                    const Dataset& ds);

DetectorMetrics detector_eval(const Network& net, const ParamVector& params, const Dataset& id_test,
                              const Dataset& sem_test);

// Evaluation only: reads hidden membership tags of the selected wild rows.
Composition composition(const SelectionResult& selection, const Dataset& wild);
Composition composition(std::span<const size_t> indices, const Dataset& wild);

}  // namespace wildlab

#endif  // WILDLAB_METRICS_H_
