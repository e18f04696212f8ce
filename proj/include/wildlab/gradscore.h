#ifndef WILDLAB_GRADSCORE_H_
#define WILDLAB_GRADSCORE_H_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "wildlab/dataset.h"
#include "wildlab/nnet.h"
#include "wildlab/spectral.h"

namespace wildlab {

enum class ScoreMethod { kGradient, kLeastConf, kEntropy, kMargin, kEnergy, kRandom };

const char* score_method_name(ScoreMethod m);
ScoreMethod parse_score_method(const std::string& s);

// Which parameters gradients are taken with respect to. All of them by
// default; `last_layer_only` restricts to the classification head.
struct GradientOptions {
  bool last_layer_only = false;
};

// m x P matrix of per-sample gradients, each centered by the reference
// gradient: row i = grad l(f(x_i), y_hat_i) - ref.
struct GradMatrix {
  std::vector<double> data;
  size_t rows = 0;
  size_t cols = 0;
  std::vector<size_t> sample_ids;

  RowMatrixView view() const { return {data, rows, cols}; }
  std::span<const double> row(size_t i) const { return view().row(i); }
};

struct ScoreTable {
  std::vector<double> scores;
  ScoreMethod method = ScoreMethod::kGradient;
  std::vector<size_t> sample_ids;
  std::optional<std::vector<double>> v;  // top singular vector (GRADIENT only)
  std::optional<double> sigma1_sq;

  size_t size() const { return scores.size(); }
};

// Mean per-sample cross-entropy gradient over labeled ID data, summed in row
// order.
std::vector<double> reference_gradient(const Network& net, const ParamVector& params,
                                       const Dataset& id_train, const GradientOptions& opts = {});

// Pseudo-labels come from `params` at call time.
GradMatrix wild_gradient_matrix(const Network& net, const ParamVector& params, const Dataset& wild,
                                std::span<const double> ref_grad,
                                const GradientOptions& opts = {});

// Same centering, but against the rows' own class labels; used for the ID
// boundary threshold.
GradMatrix labeled_gradient_matrix(const Network& net, const ParamVector& params,
                                   const Dataset& labeled, std::span<const double> ref_grad,
                                   const GradientOptions& opts = {});

TopSingular top_singular_vector(const GradMatrix& g, const PowerIterationOptions& opts = {});

// tau_i = <g_i, v>^2. `v` must have unit norm.
ScoreTable gradient_scores(const GradMatrix& g, std::span<const double> v);

// Projection scores of arbitrary centered rows onto v.
std::vector<double> projection_scores(const GradMatrix& g, std::span<const double> v);

// Uncertainty baselines oriented so that larger means more worth labeling.
ScoreTable baseline_score(const Network& net, const ParamVector& params, const Dataset& wild,
                          ScoreMethod method, uint64_t seed = 0);

// k-means++ seeding over rows of `embeddings`: first pick uniform, each
// further pick proportional to squared distance to the nearest pick.
std::vector<size_t> kmeans_pp_seed(const RowMatrixView& embeddings, size_t k, uint64_t seed);

// BADGE: k-means++ over output-layer gradient embeddings under pseudo-labels.
std::vector<size_t> badge_select(const Network& net, const ParamVector& params, const Dataset& wild,
                                 size_t k, uint64_t seed);

void write_scores_csv(const std::filesystem::path& path, const ScoreTable& table);

// Score histogram split by ground-truth membership. Evaluation only: reads
// the wild set's hidden tags.
void write_score_histogram_csv(const std::filesystem::path& path, const ScoreTable& table,
                               const Dataset& wild, size_t bins = 50);

}  // namespace wildlab

#endif  // WILDLAB_GRADSCORE_H_
