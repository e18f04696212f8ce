#include "wildlab/theory.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "wildlab/binary_io.h"
#include "wildlab/errors.h"
#include "wildlab/json_util.h"

namespace wildlab {

void BoundConfig::validate() const {
  if (!(delta > 0.0 && delta < 1.0)) throw ValidationError("bound: delta must be in (0, 1)");
  if (vc_proxy_d && !(*vc_proxy_d > 0.0)) throw ValidationError("bound: vc_proxy_d must be > 0");
  if (!(omega_in >= 0.0) || !(omega_c >= 0.0)) {
    throw ValidationError("bound: omega weights must be >= 0");
  }
}

void to_json(nlohmann::json& j, const BoundConfig& c) {
  j = {{"delta", c.delta},
       {"vc_proxy_d", c.vc_proxy_d ? nlohmann::json(*c.vc_proxy_d) : nlohmann::json(nullptr)},
       {"omega_in", c.omega_in},
       {"omega_c", c.omega_c}};
}

void from_json(const nlohmann::json& j, BoundConfig& c) {
  StrictObject o(j, "bound");
  o.optional("delta", c.delta);
  double d = 0.0;
  const bool has_d = o.has("vc_proxy_d") && !j.at("vc_proxy_d").is_null();
  o.optional("vc_proxy_d", d);
  if (has_d) c.vc_proxy_d = d;
  o.optional("omega_in", c.omega_in);
  o.optional("omega_c", c.omega_c);
  o.finish();
  c.validate();
}

void to_json(nlohmann::json& j, const BoundReport& r) {
  j = {{"grad_discrepancy", r.grad_discrepancy},
       {"id_risk", r.id_risk},
       {"cov_risk", r.cov_risk},
       {"loss_sup_M", r.loss_sup_M},
       {"zeta", r.zeta},
       {"omega_in", r.omega_in},
       {"omega_c", r.omega_c},
       {"delta", r.delta},
       {"vc_proxy_d", r.vc_proxy_d},
       {"n", r.n},
       {"m_c", r.m_c}};
}

std::vector<double> self_label_mean_gradient(const Network& net, const ParamVector& params,
                                             const Dataset& ds) {
  if (ds.empty()) throw ValidationError("gradient discrepancy: empty set");
  std::vector<double> g(net.num_params(), 0.0);
  const double w = 1.0 / static_cast<double>(ds.size());
  for (size_t i = 0; i < ds.size(); ++i) {
    const int yhat = net.predict_label(params, ds.row(i));
    net.accumulate_ce(params, ds.row(i), yhat, w, g);
  }
  return g;
}

double gradient_discrepancy(const Network& net, const ParamVector& params, const Dataset& set_a,
                            const Dataset& set_b) {
  const std::vector<double> a = self_label_mean_gradient(net, params, set_a);
  const std::vector<double> b = self_label_mean_gradient(net, params, set_b);
  double ss = 0.0;
  for (size_t p = 0; p < a.size(); ++p) ss += (a[p] - b[p]) * (a[p] - b[p]);
  return std::sqrt(ss);
}

double zeta(size_t n, size_t m_c, double vc_proxy_d, double delta, double omega_in, double omega_c,
            double loss_sup_M) {
  if (n == 0 || m_c == 0) throw ValidationError("zeta: n and m_c must be positive");
  if (!(delta > 0.0 && delta < 1.0)) throw ValidationError("zeta: delta must be in (0, 1)");
  const double nn = static_cast<double>(n);
  const double mc = static_cast<double>(m_c);
  const double weights = omega_in * omega_in / nn + omega_c * omega_c / mc;
  const double complexity = (vc_proxy_d * std::log(2.0 * nn + 2.0 * mc) - std::log(delta)) / 2.0;
  return std::sqrt(weights * complexity) + omega_in * loss_sup_M;
}

namespace {

// Mean and max CE against stored class labels.
std::pair<double, double> risk_and_sup(const Network& net, const ParamVector& params,
                                       const Dataset& ds) {
  double sum = 0.0;
  double sup = 0.0;
  for (size_t i = 0; i < ds.size(); ++i) {
    const int32_t y = ds.label(i);
    if (y < 0 || y >= ds.num_classes()) {
      throw ValidationError("bound: row without a class label");
    }
    const std::vector<double> logits = net.forward(params, ds.row(i)).logits;
    const double loss = log_sum_exp(logits) - logits[static_cast<size_t>(y)];
    sum += loss;
    sup = std::max(sup, loss);
  }
  return {sum / static_cast<double>(ds.size()), sup};
}

}  // namespace

BoundReport bound_report(const Network& net, const ParamVector& params, const Dataset& id_train,
                         const Dataset& cov_selected, const BoundConfig& cfg) {
  cfg.validate();
  if (id_train.empty()) throw ValidationError("bound: empty id_train");
  if (cov_selected.empty()) throw ValidationError("bound: empty cov_selected");
  BoundReport r;
  r.n = id_train.size();
  r.m_c = cov_selected.size();
  r.delta = cfg.delta;
  r.omega_in = cfg.omega_in;
  r.omega_c = cfg.omega_c;
  r.vc_proxy_d = cfg.vc_proxy_d.value_or(static_cast<double>(net.num_params()));
  r.grad_discrepancy = gradient_discrepancy(net, params, id_train, cov_selected);
  const auto [id_risk, id_sup] = risk_and_sup(net, params, id_train);
  const auto [cov_risk, cov_sup] = risk_and_sup(net, params, cov_selected);
  r.id_risk = id_risk;
  r.cov_risk = cov_risk;
  r.loss_sup_M = std::max(id_sup, cov_sup);
  r.zeta = zeta(r.n, r.m_c, r.vc_proxy_d, r.delta, r.omega_in, r.omega_c, r.loss_sup_M);
  return r;
}

void write_discrepancy_csv(const std::filesystem::path& path,
                           const std::vector<DiscrepancyRow>& rows) {
  std::ostringstream out;
  out << std::setprecision(17) << "transform,grad_discrepancy,ood_acc\n";
  for (const DiscrepancyRow& r : rows) {
    out << r.transform << ',' << r.grad_discrepancy << ',' << r.ood_acc << '\n';
  }
  write_file(path, out.str());
}

}  // namespace wildlab
