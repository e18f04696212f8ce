#include "wildlab/metrics.h"

#include <algorithm>
#include <cmath>
#include <string>

#include "wildlab/errors.h"

namespace wildlab {

void to_json(nlohmann::json& j, const Composition& c) {
  j = {{"n_id", c.n_id}, {"n_cov", c.n_cov}, {"n_sem", c.n_sem}};
}

void to_json(nlohmann::json& j, const EvalReport& r) {
  j = {{"id_acc", r.id_acc},
       {"ood_acc", r.ood_acc},
       {"fpr95", r.fpr95},
       {"auroc", r.auroc},
       {"threshold_lambda", r.threshold_lambda},
       {"selection_composition", r.selection_composition}};
}

double accuracy(const Network& net, const ParamVector& params, const Dataset& test) {
  if (test.empty()) throw ValidationError("accuracy: empty test set");
  size_t correct = 0;
  for (size_t i = 0; i < test.size(); ++i) {
    const int32_t y = test.label(i);
    if (y < 0 || y >= test.num_classes()) {
      throw ValidationError("accuracy: row " + std::to_string(i) + " has no class label");
    }
    if (net.predict_label(params, test.row(i)) == y) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

double auroc(std::span<const double> id_scores, std::span<const double> sem_scores) {
  if (id_scores.empty() || sem_scores.empty()) throw ValidationError("auroc: empty score set");
  std::vector<double> id(id_scores.begin(), id_scores.end());
  std::vector<double> sem(sem_scores.begin(), sem_scores.end());
  for (double s : id) {
    if (std::isnan(s)) throw NumericalError("auroc: NaN score");
  }
  for (double s : sem) {
    if (std::isnan(s)) throw NumericalError("auroc: NaN score");
  }
  std::sort(id.begin(), id.end());
  std::sort(sem.begin(), sem.end());

  // Count in integers: 2 * wins + ties, exact for any n, m that fit.
  uint64_t twice = 0;
  size_t below = 0;  // sem scores strictly below the current id score
  size_t upto = 0;   // sem scores <= the current id score
  for (double s : id) {
    while (below < sem.size() && sem[below] < s) ++below;
    if (upto < below) upto = below;
    while (upto < sem.size() && sem[upto] <= s) ++upto;
    twice += 2 * below + (upto - below);
  }
  return static_cast<double>(twice) /
         (2.0 * static_cast<double>(id.size()) * static_cast<double>(sem.size()));
}

DetectorMetrics detector_metrics(std::span<const double> id_scores,
                                 std::span<const double> sem_scores) {
  if (id_scores.empty() || sem_scores.empty()) {
    throw ValidationError("detector_eval: empty ID or semantic set");
  }
  DetectorMetrics out;
  out.auroc = auroc(id_scores, sem_scores);
  std::vector<double> id(id_scores.begin(), id_scores.end());
  const size_t pos = static_cast<size_t>(std::floor(0.05 * static_cast<double>(id.size() - 1)));
  std::nth_element(id.begin(), id.begin() + static_cast<std::ptrdiff_t>(pos), id.end());
  out.threshold_lambda = id[pos];
  size_t false_pos = 0;
  for (double s : sem_scores) {
    if (s > out.threshold_lambda) ++false_pos;
  }
  out.fpr95 = static_cast<double>(false_pos) / static_cast<double>(sem_scores.size());
  return out;
}

std::vector<double> detector_scores(const Network& net, const ParamVector& params,
                                    const Dataset& ds) {
  std::vector<double> out(ds.size());
  for (size_t i = 0; i < ds.size(); ++i) out[i] = net.forward(params, ds.row(i)).detector_score;
  return out;
}

DetectorMetrics detector_eval(const Network& net, const ParamVector& params, const Dataset& id_test,
                              const Dataset& sem_test) {
  if (id_test.empty() || sem_test.empty()) {
    throw ValidationError("detector_eval: empty ID or semantic test set");
  }
  return detector_metrics(detector_scores(net, params, id_test),
                          detector_scores(net, params, sem_test));
}

Composition composition(std::span<const size_t> indices, const Dataset& wild) {
  Composition c;
  for (size_t i : indices) {
    if (i >= wild.size()) throw ValidationError("composition: index out of range");
    switch (wild.membership(i)) {
      case Membership::kId:
        ++c.n_id;
        break;
      case Membership::kCovariate:
        ++c.n_cov;
        break;
      case Membership::kSemantic:
        ++c.n_sem;
        break;
      case Membership::kUnknown:
        break;
    }
  }
  return c;
}

Composition composition(const SelectionResult& selection, const Dataset& wild) {
  return composition(selection.indices, wild);
}

}  // namespace wildlab
