#ifndef WILDLAB_NNET_H_
#define WILDLAB_NNET_H_

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace wildlab {

enum class Activation { kTanh, kRelu };

// Feed-forward trunk with two heads: a C-way classifier f_w and a scalar
// detector g_theta. With `shared_trunk` false the detector gets its own copy
// of the trunk layers.
struct Architecture {
  size_t input_dim = 8;
  std::vector<size_t> hidden_sizes = {32, 32};
  int num_classes = 4;
  Activation activation = Activation::kTanh;
  bool shared_trunk = true;

  void validate() const;
  bool operator==(const Architecture&) const = default;
};

void to_json(nlohmann::json& j, const Architecture& a);
void from_json(const nlohmann::json& j, Architecture& a);

// Flat parameter vector. Offsets come from ParamLayout.
using ParamVector = std::vector<double>;

// Location of one dense layer's weights (out x in, row-major) and biases in
// the flat parameter vector.
struct DenseSlot {
  size_t in = 0;
  size_t out = 0;
  size_t weight_offset = 0;
  size_t bias_offset = 0;
};

// Flat layout, in order: classifier trunk layers, classifier head,
// [detector trunk layers when not shared], detector head.
struct ParamLayout {
  std::vector<DenseSlot> trunk;
  DenseSlot class_head;
  std::vector<DenseSlot> detector_trunk;  // empty when the trunk is shared
  DenseSlot detector_head;
  size_t num_params = 0;

  static ParamLayout build(const Architecture& arch);
};

enum class DetectorSide { kIdPositive, kOodNegative };

struct ForwardOutput {
  std::vector<double> logits;
  double detector_score = 0.0;
  // Post-activation values per trunk layer; index 0 is the input itself.
  std::vector<std::vector<double>> trunk_acts;
  std::vector<std::vector<double>> detector_acts;  // only when not shared
};

struct LossGrad {
  double loss = 0.0;
  ParamVector grad;
};

class Network {
 public:
  explicit Network(Architecture arch);

  const Architecture& arch() const { return arch_; }
  const ParamLayout& layout() const { return layout_; }
  size_t num_params() const { return layout_.num_params; }

  // Glorot-uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero biases.
  ParamVector init_params(uint64_t seed) const;

  ForwardOutput forward(std::span<const double> params, std::span<const float> x) const;

  // Argmax of the logits; ties go to the lowest index.
  int predict_label(std::span<const double> params, std::span<const float> x) const;

  LossGrad ce_loss_and_grad(std::span<const double> params, std::span<const float> x,
                            int label) const;
  LossGrad detector_loss_and_grad(std::span<const double> params, std::span<const float> x,
                                  DetectorSide side) const;

  // Accumulating variants used by training and scoring loops: add
  // `scale * d(loss)/d(params)` into `grad` and return the unscaled loss.
  double accumulate_ce(std::span<const double> params, std::span<const float> x, int label,
                       double scale, std::span<double> grad) const;
  double accumulate_detector(std::span<const double> params, std::span<const float> x,
                             DetectorSide side, double scale, std::span<double> grad) const;

  // Output-layer gradient embedding (p - onehot(y)) outer h for the
  // classification head weights, as used by BADGE.
  std::vector<double> head_gradient_embedding(std::span<const double> params,
                                              std::span<const float> x, int label) const;

  // Indices into the flat vector that belong to the classification head.
  std::vector<size_t> class_head_indices() const;

 private:
  void check_input(std::span<const double> params, std::span<const float> x) const;
  double activate(double z) const;
  double activation_slope(double act) const;
  void run_trunk(std::span<const double> params, const std::vector<DenseSlot>& layers,
                 std::span<const float> x, std::vector<std::vector<double>>& acts) const;
  void backprop_trunk(std::span<const double> params, const std::vector<DenseSlot>& layers,
                      const std::vector<std::vector<double>>& acts, std::vector<double> delta,
                      double scale, std::span<double> grad) const;

  Architecture arch_;
  ParamLayout layout_;
};

// Numerically stable helpers shared with scoring and metrics.
double log_sum_exp(std::span<const double> z);
std::vector<double> softmax(std::span<const double> z);
double sigmoid(double z);

// WNN1 checkpoint: "WNN1", u32 version, u32 json length, architecture JSON,
// u64 P, P f64 values.
std::string encode_checkpoint(const Architecture& arch, const ParamVector& params);
void decode_checkpoint(std::string_view bytes, Architecture& arch, ParamVector& params);
void write_checkpoint(const std::filesystem::path& path, const Architecture& arch,
                      const ParamVector& params);
void read_checkpoint(const std::filesystem::path& path, Architecture& arch, ParamVector& params);

}  // namespace wildlab

#endif  // WILDLAB_NNET_H_
