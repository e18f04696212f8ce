#include "wildlab/train.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

#include "wildlab/errors.h"
#include "wildlab/json_util.h"

namespace wildlab {

void TrainConfig::validate() const {
  if (epochs < 1) throw ValidationError("train: epochs must be >= 1");
  if (batch_size < 1) throw ValidationError("train: batch_size must be >= 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ValidationError("train: learning_rate must be >= 0");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ValidationError("train: momentum must be in [0,1)");
  if (!(weight_decay >= 0.0)) throw ValidationError("train: weight_decay must be >= 0");
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ValidationError("train: alpha must be >= 0");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"epochs", c.epochs},
       {"batch_size", c.batch_size},
       {"learning_rate", c.learning_rate},
       {"momentum", c.momentum},
       {"weight_decay", c.weight_decay},
       {"lr_schedule", c.lr_schedule == LrSchedule::kConstant ? "constant" : "cosine"},
       {"alpha", c.alpha},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  StrictObject o(j, "train");
  o.optional("epochs", c.epochs);
  o.optional("batch_size", c.batch_size);
  o.optional("learning_rate", c.learning_rate);
  o.optional("momentum", c.momentum);
  o.optional("weight_decay", c.weight_decay);
  std::string schedule = c.lr_schedule == LrSchedule::kConstant ? "constant" : "cosine";
  o.optional("lr_schedule", schedule);
  if (schedule == "constant") {
    c.lr_schedule = LrSchedule::kConstant;
  } else if (schedule == "cosine") {
    c.lr_schedule = LrSchedule::kCosine;
  } else {
    throw ValidationError("train: unknown lr_schedule '" + schedule + "'");
  }
  o.optional("alpha", c.alpha);
  o.optional("seed", c.seed);
  o.finish();
}

namespace {

void require_class_labels(const Dataset& ds, const char* what) {
  for (size_t i = 0; i < ds.size(); ++i) {
    const int32_t y = ds.label(i);
    if (y < 0 || y >= ds.num_classes()) {
      throw ValidationError(std::string(what) + ": row " + std::to_string(i) +
                            " has no class label (" + std::to_string(y) + ")");
    }
  }
}

std::vector<size_t> iota_vec(size_t n) {
  std::vector<size_t> v(n);
  std::iota(v.begin(), v.end(), size_t{0});
  return v;
}

void shuffle(std::vector<size_t>& v, Rng& rng) {
  // Fisher-Yates with our own uniform draw; std::shuffle's algorithm is
  // implementation-defined.
  for (size_t i = v.size(); i > 1; --i) {
    const size_t j = static_cast<size_t>(uniform01(rng) * static_cast<double>(i));
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace

Trainer::Trainer(const Network& net, ParamVector init, TrainConfig cfg, TrainingSets sets)
    : net_(net),
      cfg_(cfg),
      sets_(std::move(sets)),
      params_(std::move(init)),
      velocity_(params_.size(), 0.0),
      class_rng_(make_rng(cfg.seed, "train/class")),
      det_id_rng_(make_rng(cfg.seed, "train/detector_id")),
      det_ood_rng_(make_rng(cfg.seed, "train/detector_ood")) {
  cfg_.validate();
  if (params_.size() != net_.num_params()) throw ValidationError("train: init has wrong size");
  if (sets_.class_pool.empty()) throw ValidationError("train: empty training set");
  if (sets_.class_pool.dim() != net_.arch().input_dim) {
    throw ValidationError("train: dataset dimension does not match architecture");
  }
  require_class_labels(sets_.class_pool, "train");
  if (sets_.detector_enabled && sets_.detector_id.empty()) {
    throw ValidationError("train: detector term needs ID samples");
  }
  class_order_ = iota_vec(sets_.class_pool.size());
  det_id_order_ = iota_vec(sets_.detector_id.size());
  det_ood_order_ = iota_vec(sets_.detector_ood.size());
  shuffle(det_id_order_, det_id_rng_);
  shuffle(det_ood_order_, det_ood_rng_);
  steps_per_epoch_ = (sets_.class_pool.size() + cfg_.batch_size - 1) / cfg_.batch_size;
}

double Trainer::current_lr() const {
  if (cfg_.lr_schedule == LrSchedule::kConstant) return cfg_.learning_rate;
  const double progress = static_cast<double>(epoch_) / static_cast<double>(cfg_.epochs);
  return cfg_.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void Trainer::next_indices(std::vector<size_t>& order, size_t& cursor, Rng& rng, size_t count,
                           std::vector<size_t>& out) {
  out.clear();
  for (size_t i = 0; i < count; ++i) {
    if (cursor == order.size()) {
      shuffle(order, rng);
      cursor = 0;
    }
    out.push_back(order[cursor++]);
  }
}

StepResult Trainer::step() {
  if (step_in_epoch_ == 0) {
    shuffle(class_order_, class_rng_);
  }
  const size_t n = sets_.class_pool.size();
  const size_t begin = step_in_epoch_ * cfg_.batch_size;
  const size_t end = std::min(n, begin + cfg_.batch_size);

  StepResult res;
  res.gradient.assign(params_.size(), 0.0);
  const double inv_batch = 1.0 / static_cast<double>(end - begin);
  double ce = 0.0;
  for (size_t b = begin; b < end; ++b) {
    const size_t i = class_order_[b];
    ce += net_.accumulate_ce(params_, sets_.class_pool.row(i), sets_.class_pool.label(i),
                             inv_batch, res.gradient);
  }
  res.ce_loss = ce * inv_batch;

  if (sets_.detector_enabled && cfg_.alpha > 0.0) {
    std::vector<size_t> idx;
    next_indices(det_id_order_, det_id_cursor_, det_id_rng_, cfg_.batch_size, idx);
    double det = 0.0;
    const double w_id = cfg_.alpha / static_cast<double>(idx.size());
    double id_loss = 0.0;
    for (size_t i : idx) {
      id_loss += net_.accumulate_detector(params_, sets_.detector_id.row(i),
                                          DetectorSide::kIdPositive, w_id, res.gradient);
    }
    det += id_loss / static_cast<double>(idx.size());
    if (!sets_.detector_ood.empty()) {
      const size_t count = std::min(cfg_.batch_size, sets_.detector_ood.size());
      next_indices(det_ood_order_, det_ood_cursor_, det_ood_rng_, count, idx);
      const double w_ood = cfg_.alpha / static_cast<double>(idx.size());
      double ood_loss = 0.0;
      for (size_t i : idx) {
        ood_loss += net_.accumulate_detector(params_, sets_.detector_ood.row(i),
                                             DetectorSide::kOodNegative, w_ood, res.gradient);
      }
      det += ood_loss / static_cast<double>(idx.size());
    }
    res.detector_loss = det;
  }

  if (cfg_.weight_decay > 0.0) {
    for (size_t p = 0; p < params_.size(); ++p) res.gradient[p] += cfg_.weight_decay * params_[p];
  }
  const double lr = current_lr();
  for (size_t p = 0; p < params_.size(); ++p) {
    velocity_[p] = cfg_.momentum * velocity_[p] + res.gradient[p];
    params_[p] -= lr * velocity_[p];
  }

  if (++step_in_epoch_ == steps_per_epoch_) {
    step_in_epoch_ = 0;
    ++epoch_;
  }
  return res;
}

EpochLog Trainer::evaluate_objective(size_t epoch) const {
  EpochLog log;
  log.epoch = epoch;
  const Dataset& pool = sets_.class_pool;
  double ce = 0.0;
  for (size_t i = 0; i < pool.size(); ++i) {
    const ForwardOutput out = net_.forward(params_, pool.row(i));
    ce += log_sum_exp(out.logits) - out.logits[static_cast<size_t>(pool.label(i))];
  }
  log.ce_loss = ce / static_cast<double>(pool.size());
  if (sets_.detector_enabled) {
    double id = 0.0;
    for (size_t i = 0; i < sets_.detector_id.size(); ++i) {
      id += sigmoid(-net_.forward(params_, sets_.detector_id.row(i)).detector_score);
    }
    log.detector_loss = id / static_cast<double>(sets_.detector_id.size());
    if (!sets_.detector_ood.empty()) {
      double ood = 0.0;
      for (size_t i = 0; i < sets_.detector_ood.size(); ++i) {
        ood += sigmoid(net_.forward(params_, sets_.detector_ood.row(i)).detector_score);
      }
      log.detector_loss += ood / static_cast<double>(sets_.detector_ood.size());
    }
  }
  log.total = log.ce_loss + (sets_.detector_enabled ? cfg_.alpha * log.detector_loss : 0.0);
  return log;
}

TrainResult Trainer::run() {
  TrainResult result;
  result.epochs.push_back(evaluate_objective(0));
  while (epoch_ < cfg_.epochs) {
    EpochLog log;
    log.epoch = epoch_ + 1;
    const size_t target = epoch_ + 1;
    size_t steps = 0;
    while (epoch_ < target) {
      const StepResult s = step();
      log.ce_loss += s.ce_loss;
      log.detector_loss += s.detector_loss;
      ++steps;
    }
    log.ce_loss /= static_cast<double>(steps);
    log.detector_loss /= static_cast<double>(steps);
    log.total = log.ce_loss + (sets_.detector_enabled ? cfg_.alpha * log.detector_loss : 0.0);
    result.epochs.push_back(log);
  }
  result.params = params_;
  result.warnings = warnings_;
  return result;
}

TrainResult train_erm(const Network& net, const Dataset& id_train, const TrainConfig& cfg) {
  cfg.validate();
  if (id_train.empty()) throw ValidationError("train_erm: empty dataset");
  TrainingSets sets;
  sets.class_pool = id_train;
  Trainer trainer(net, net.init_params(cfg.seed), cfg, std::move(sets));
  return trainer.run();
}

TrainResult train_joint(const Network& net, const ParamVector& init, const Dataset& id_train,
                        const Dataset& cov_selected, const Dataset& sem_selected,
                        const TrainConfig& cfg) {
  cfg.validate();
  if (id_train.empty()) throw ValidationError("train_joint: empty ID training set");
  for (size_t i = 0; i < cov_selected.size(); ++i) {
    if (cov_selected.label(i) == kBottom) {
      throw ValidationError("train_joint: covariate set contains a BOTTOM label at row " +
                            std::to_string(i));
    }
  }
  require_class_labels(cov_selected, "train_joint covariate set");
  for (size_t i = 0; i < sem_selected.size(); ++i) {
    if (sem_selected.label(i) != kBottom) {
      throw ValidationError("train_joint: semantic set row " + std::to_string(i) +
                            " is not labeled BOTTOM");
    }
  }
  TrainingSets sets;
  sets.class_pool = cov_selected.empty() ? id_train : id_train.concat(cov_selected);
  sets.detector_id = id_train;
  sets.detector_ood = sem_selected;
  sets.detector_enabled = true;
  Trainer trainer(net, init, cfg, std::move(sets));
  TrainResult result = trainer.run();
  if (sem_selected.empty()) {
    result.warnings.push_back(
        "train_joint: no semantic samples selected; the OOD side of the detector risk vanishes");
  }
  return result;
}

void write_epoch_csv(const std::filesystem::path& path, const std::vector<EpochLog>& epochs,
                     const std::string& phase, bool append) {
  const bool header = !append || !std::filesystem::exists(path);
  std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.precision(17);
  if (header) out << "phase,epoch,ce_loss,detector_loss,total\n";
  for (const auto& e : epochs) {
    out << phase << ',' << e.epoch << ',' << e.ce_loss << ',' << e.detector_loss << ','
        << e.total << '\n';
  }
}

}  // namespace wildlab
