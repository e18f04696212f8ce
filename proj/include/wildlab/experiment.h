#ifndef WILDLAB_EXPERIMENT_H_
#define WILDLAB_EXPERIMENT_H_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "wildlab/annotate.h"
#include "wildlab/gradscore.h"
#include "wildlab/metrics.h"
#include "wildlab/nnet.h"
#include "wildlab/select.h"
#include "wildlab/synthetic.h"
#include "wildlab/theory.h"
#include "wildlab/train.h"

namespace wildlab {

inline constexpr const char* kWildlabVersion = "0.1.0";

enum class AnnotationMode { kOracle, kHuman };

struct AnnotationConfig {
  AnnotationMode mode = AnnotationMode::kOracle;
  std::string host = "127.0.0.1";
  int port = 8765;
  std::string session_dir;  // default: <output_dir>/sessions
  std::string static_dir;   // optional UI bundle served at /
};

struct StopRule {
  std::string metric;  // id_acc, ood_acc, auroc (stop when >=) or fpr95 (stop when <=)
  double threshold = 0.0;
};

enum class ReferenceSet { kIdTrain, kIdTrainPlusAnnotated };

struct SelectionConfig {
  Strategy strategy = Strategy::kTopK;
  size_t k = 200;
  double lambda = 0.5;
  double percentile = 0.95;
};

// Score method names accepted by the driver: every ScoreMethod plus "BADGE",
// which replaces score-then-select with k-means++ over gradient embeddings.
struct ScoringConfig {
  std::string method = "GRADIENT";
  bool last_layer_only = false;
  PowerIterationOptions power;
  ReferenceSet reference = ReferenceSet::kIdTrain;
};

// One experiment. The top-level seed drives every random stream; seeds inside
// the nested specs are overwritten from it (see effective()).
struct ExperimentConfig {
  SyntheticSpec synthetic = desk_benchmark_spec(0);
  WildMixtureSpec wild;
  Architecture architecture;
  TrainConfig erm;
  TrainConfig joint;
  ScoringConfig scoring;
  SelectionConfig selection;
  AnnotationConfig annotation;
  BoundConfig bound;
  size_t rounds = 1;
  std::optional<StopRule> stop_when;
  uint64_t seed = 0;
  std::string output_dir = "out";

  void validate() const;
  // Copy with every nested seed derived from `seed`.
  ExperimentConfig effective() const;
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);
ExperimentConfig load_config(const std::filesystem::path& path);

struct SelectionSummary {
  Strategy strategy = Strategy::kTopK;
  std::string score_method;
  size_t k = 0;
  size_t n_selected = 0;
  std::optional<double> tau_b;
  std::optional<double> lambda;
  std::optional<double> sigma1_sq;
  size_t power_iterations = 0;
};

struct RoundReport {
  size_t round = 0;
  EvalReport scorer_eval;  // model that scored this round's wild data
  EvalReport joint_eval;
  std::optional<BoundReport> bound;
  SelectionSummary selection;
  Composition composition;
  size_t annotations_used = 0;
  size_t cumulative_annotations = 0;
  std::vector<std::string> warnings;
};

struct RunReport {
  nlohmann::json config;
  std::vector<RoundReport> rounds;
  size_t total_annotations = 0;
  size_t annotation_limit = 0;
  bool stopped_early = false;
  double wall_clock_seconds = 0.0;
};

void to_json(nlohmann::json& j, const RunReport& r);
// report.json text without wall-clock fields, for determinism checks.
std::string report_fingerprint(const RunReport& r);

// Failure inside a pipeline stage; carries the stage name.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& what);
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

// Hooks for embedding the driver. `on_session_open` fires in human mode after
// the annotation session is created and the service is listening.
struct RunHooks {
  std::function<void(const std::string& session_id, int port)> on_session_open;
  // Shared state across sweep cells (ERM models, first-round scores). Results
  // are identical with or without it.
  struct Cache;
  std::shared_ptr<Cache> cache;
};

std::shared_ptr<RunHooks::Cache> make_run_cache();

// Generate -> ERM -> (score -> select -> annotate -> joint train -> evaluate)
// x rounds. Writes report.json and CSV exports into cfg.output_dir unless
// `write_outputs` is false.
RunReport run_experiment(const ExperimentConfig& cfg, const RunHooks& hooks = {},
                         bool write_outputs = true);

struct SweepAxes {
  std::vector<size_t> budgets;
  std::vector<std::string> score_methods;
  std::vector<Strategy> strategies;
  std::vector<double> lambdas;
  std::vector<double> alphas;
  std::vector<CovariateTransform> transforms;
  std::vector<uint64_t> seeds;

  bool empty() const;
};

void from_json(const nlohmann::json& j, SweepAxes& a);

struct SweepCell {
  size_t index = 0;
  ExperimentConfig config;  // as run (before seed derivation)
  std::optional<RunReport> report;
  std::string error;
};

// Cartesian product over the non-empty axes, one run per combination. A
// failing cell records its error and the sweep continues. Each cell writes
// into <output_dir>/cell_NNN when `write_outputs` is set, and the merged
// table goes to <output_dir>/sweep.csv.
std::vector<SweepCell> run_sweep(const ExperimentConfig& base, const SweepAxes& axes,
                                 bool write_outputs = true);

void write_sweep_csv(const std::filesystem::path& path, const std::vector<SweepCell>& cells);

// Joint-trains once per covariate transform and reports the gradient
// discrepancy between ID and covariate test data next to OOD accuracy.
std::vector<DiscrepancyRow> discrepancy_table(const ExperimentConfig& base,
                                              const std::vector<CovariateTransform>& transforms);

}  // namespace wildlab

#endif  // WILDLAB_EXPERIMENT_H_
