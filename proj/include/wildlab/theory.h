#ifndef WILDLAB_THEORY_H_
#define WILDLAB_THEORY_H_

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "wildlab/dataset.h"
#include "wildlab/nnet.h"

namespace wildlab {

struct BoundConfig {
  double delta = 0.05;
  std::optional<double> vc_proxy_d;  // defaults to the parameter count P
  double omega_in = 1.0;
  double omega_c = 1.0;

  void validate() const;
};

void to_json(nlohmann::json& j, const BoundConfig& c);
void from_json(const nlohmann::json& j, BoundConfig& c);

struct BoundReport {
  double grad_discrepancy = 0.0;  // between id_train and cov_selected
  double id_risk = 0.0;
  double cov_risk = 0.0;
  double loss_sup_M = 0.0;  // empirical max loss, stands in for the bound M
  double zeta = 0.0;
  double omega_in = 1.0;
  double omega_c = 1.0;
  double delta = 0.05;
  double vc_proxy_d = 0.0;  // a proxy, not a VC dimension
  size_t n = 0;
  size_t m_c = 0;
};

void to_json(nlohmann::json& j, const BoundReport& r);

// Mean CE gradient over `ds`, each row against its own predicted class.
std::vector<double> self_label_mean_gradient(const Network& net, const ParamVector& params,
                                             const Dataset& ds);

// || mean grad on A - mean grad on B ||_2 with self-predicted labels.
double gradient_discrepancy(const Network& net, const ParamVector& params, const Dataset& set_a,
                            const Dataset& set_b);

// sqrt((w_in^2/n + w_c^2/m_c) * ((d log(2n + 2m_c) - log delta) / 2)) + w_in * M
double zeta(size_t n, size_t m_c, double vc_proxy_d, double delta, double omega_in, double omega_c,
            double loss_sup_M);

BoundReport bound_report(const Network& net, const ParamVector& params, const Dataset& id_train,
                         const Dataset& cov_selected, const BoundConfig& cfg);

struct DiscrepancyRow {
  std::string transform;
  double grad_discrepancy = 0.0;
  double ood_acc = 0.0;
};

// transform,grad_discrepancy,ood_acc
void write_discrepancy_csv(const std::filesystem::path& path,
                           const std::vector<DiscrepancyRow>& rows);

}  // namespace wildlab

#endif  // WILDLAB_THEORY_H_
