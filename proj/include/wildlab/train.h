#ifndef WILDLAB_TRAIN_H_
#define WILDLAB_TRAIN_H_

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "wildlab/dataset.h"
#include "wildlab/nnet.h"
#include "wildlab/rng.h"

namespace wildlab {

enum class LrSchedule { kConstant, kCosine };

// Minibatch SGD with heavy-ball momentum and L2 weight decay.
//
// Momentum defaults to 0.9. The value printed in the source setup (0.09) reads
// as a typo; set it explicitly to reproduce it.
struct TrainConfig {
  size_t epochs = 50;
  size_t batch_size = 64;
  double learning_rate = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  LrSchedule lr_schedule = LrSchedule::kConstant;
  double alpha = 10.0;  // weight of the detector risk in the joint objective
  uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct EpochLog {
  size_t epoch = 0;  // 0 is a full pass at the initial parameters
  double ce_loss = 0.0;
  double detector_loss = 0.0;
  double total = 0.0;
};

struct TrainResult {
  ParamVector params;
  std::vector<EpochLog> epochs;
  std::vector<std::string> warnings;
};

// The sets one optimization run draws from. The classification term averages
// cross-entropy over `class_pool`; the detector term (when enabled) is the
// mean ID-side loss over `detector_id` plus the mean OOD-side loss over
// `detector_ood`, each averaged independently.
struct TrainingSets {
  Dataset class_pool;
  Dataset detector_id;
  Dataset detector_ood;
  bool detector_enabled = false;
};

struct StepResult {
  ParamVector gradient;  // full update direction before momentum, incl. weight decay
  double ce_loss = 0.0;
  double detector_loss = 0.0;
};

// Stateful optimizer over one TrainingSets. Exposed so tests can compare
// individual steps; most callers use train_erm / train_joint.
class Trainer {
 public:
  Trainer(const Network& net, ParamVector init, TrainConfig cfg, TrainingSets sets);

  // One minibatch update. Epoch boundaries are handled internally.
  StepResult step();
  // Runs every remaining epoch and returns the result.
  TrainResult run();

  const ParamVector& params() const { return params_; }
  size_t steps_per_epoch() const { return steps_per_epoch_; }

  // Full-pass objective at the current parameters.
  EpochLog evaluate_objective(size_t epoch) const;

 private:
  double current_lr() const;
  void next_indices(std::vector<size_t>& order, size_t& cursor, Rng& rng, size_t count,
                    std::vector<size_t>& out);

  const Network& net_;
  TrainConfig cfg_;
  TrainingSets sets_;
  ParamVector params_;
  ParamVector velocity_;
  Rng class_rng_;
  Rng det_id_rng_;
  Rng det_ood_rng_;
  std::vector<size_t> class_order_, det_id_order_, det_ood_order_;
  size_t det_id_cursor_ = 0, det_ood_cursor_ = 0;
  size_t steps_per_epoch_ = 0;
  size_t step_in_epoch_ = 0;
  size_t epoch_ = 0;
  std::vector<std::string> warnings_;
};

// ERM on labeled ID data, initialized from init_params(cfg.seed). cfg.alpha is
// ignored.
TrainResult train_erm(const Network& net, const Dataset& id_train, const TrainConfig& cfg);

// Joint objective: CE over id_train + cov_selected, plus alpha times the
// detector risk separating id_train (g > 0) from sem_selected (g <= 0).
// Warm-starts from `init`.
TrainResult train_joint(const Network& net, const ParamVector& init, const Dataset& id_train,
                        const Dataset& cov_selected, const Dataset& sem_selected,
                        const TrainConfig& cfg);

void write_epoch_csv(const std::filesystem::path& path, const std::vector<EpochLog>& epochs,
                     const std::string& phase, bool append);

}  // namespace wildlab

#endif  // WILDLAB_TRAIN_H_
