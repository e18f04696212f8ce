#include "wildlab/nnet.h"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "wildlab/binary_io.h"
#include "wildlab/errors.h"
#include "wildlab/json_util.h"
#include "wildlab/rng.h"

namespace wildlab {

void Architecture::validate() const {
  if (input_dim < 1) throw ValidationError("architecture: input_dim must be >= 1");
  if (hidden_sizes.empty()) throw ValidationError("architecture: need at least one hidden layer");
  for (size_t h : hidden_sizes) {
    if (h < 1) throw ValidationError("architecture: hidden sizes must be positive");
  }
  if (num_classes < 2) throw ValidationError("architecture: num_classes must be >= 2");
}

void to_json(nlohmann::json& j, const Architecture& a) {
  j = {{"input_dim", a.input_dim},
       {"hidden_sizes", a.hidden_sizes},
       {"num_classes", a.num_classes},
       {"activation", a.activation == Activation::kTanh ? "tanh" : "relu"},
       {"shared_trunk", a.shared_trunk}};
}

void from_json(const nlohmann::json& j, Architecture& a) {
  StrictObject o(j, "architecture");
  o.optional("input_dim", a.input_dim);
  o.optional("hidden_sizes", a.hidden_sizes);
  o.optional("num_classes", a.num_classes);
  std::string act = a.activation == Activation::kTanh ? "tanh" : "relu";
  o.optional("activation", act);
  if (act == "tanh") {
    a.activation = Activation::kTanh;
  } else if (act == "relu") {
    a.activation = Activation::kRelu;
  } else {
    throw ValidationError("architecture: unknown activation '" + act + "'");
  }
  o.optional("shared_trunk", a.shared_trunk);
  o.finish();
}

ParamLayout ParamLayout::build(const Architecture& arch) {
  arch.validate();
  ParamLayout layout;
  size_t offset = 0;
  auto dense = [&offset](size_t in, size_t out) {
    DenseSlot s{in, out, offset, offset + in * out};
    offset += in * out + out;
    return s;
  };
  size_t in = arch.input_dim;
  for (size_t h : arch.hidden_sizes) {
    layout.trunk.push_back(dense(in, h));
    in = h;
  }
  layout.class_head = dense(in, static_cast<size_t>(arch.num_classes));
  if (!arch.shared_trunk) {
    size_t din = arch.input_dim;
    for (size_t h : arch.hidden_sizes) {
      layout.detector_trunk.push_back(dense(din, h));
      din = h;
    }
  }
  layout.detector_head = dense(in, 1);
  layout.num_params = offset;
  return layout;
}

double log_sum_exp(std::span<const double> z) {
  const double zmax = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double v : z) s += std::exp(v - zmax);
  return zmax + std::log(s);
}

std::vector<double> softmax(std::span<const double> z) {
  const double lse = log_sum_exp(z);
  std::vector<double> p(z.size());
  for (size_t i = 0; i < z.size(); ++i) p[i] = std::exp(z[i] - lse);
  return p;
}

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

Network::Network(Architecture arch) : arch_(std::move(arch)), layout_(ParamLayout::build(arch_)) {}

ParamVector Network::init_params(uint64_t seed) const {
  ParamVector params(num_params(), 0.0);
  Rng rng = make_rng(seed, "init");
  auto fill = [&](const DenseSlot& s) {
    const double limit = std::sqrt(6.0 / static_cast<double>(s.in + s.out));
    for (size_t i = 0; i < s.in * s.out; ++i) {
      params[s.weight_offset + i] = (2.0 * uniform01(rng) - 1.0) * limit;
    }
  };
  for (const auto& s : layout_.trunk) fill(s);
  fill(layout_.class_head);
  for (const auto& s : layout_.detector_trunk) fill(s);
  fill(layout_.detector_head);
  return params;
}

void Network::check_input(std::span<const double> params, std::span<const float> x) const {
  if (params.size() != num_params()) {
    throw ValidationError("network: expected " + std::to_string(num_params()) +
                          " parameters, got " + std::to_string(params.size()));
  }
  if (x.size() != arch_.input_dim) {
    throw ValidationError("network: expected input of dimension " +
                          std::to_string(arch_.input_dim) + ", got " + std::to_string(x.size()));
  }
}

double Network::activate(double z) const {
  return arch_.activation == Activation::kTanh ? std::tanh(z) : std::max(0.0, z);
}

double Network::activation_slope(double act) const {
  return arch_.activation == Activation::kTanh ? 1.0 - act * act : (act > 0.0 ? 1.0 : 0.0);
}

namespace {

// out = W in + b for one dense slot.
void dense_forward(std::span<const double> params, const DenseSlot& s, std::span<const double> in,
                   std::vector<double>& out) {
  out.assign(s.out, 0.0);
  for (size_t o = 0; o < s.out; ++o) {
    const double* w = params.data() + s.weight_offset + o * s.in;
    double acc = params[s.bias_offset + o];
    for (size_t i = 0; i < s.in; ++i) acc += w[i] * in[i];
    out[o] = acc;
  }
}

// grad_W += scale * delta (x) in; grad_b += scale * delta.
void dense_accumulate(const DenseSlot& s, std::span<const double> delta, std::span<const double> in,
                      double scale, std::span<double> grad) {
  for (size_t o = 0; o < s.out; ++o) {
    const double d = scale * delta[o];
    if (d == 0.0) continue;
    double* g = grad.data() + s.weight_offset + o * s.in;
    for (size_t i = 0; i < s.in; ++i) g[i] += d * in[i];
    grad[s.bias_offset + o] += d;
  }
}

// W^T delta.
std::vector<double> dense_backward(std::span<const double> params, const DenseSlot& s,
                                   std::span<const double> delta) {
  std::vector<double> back(s.in, 0.0);
  for (size_t o = 0; o < s.out; ++o) {
    const double d = delta[o];
    if (d == 0.0) continue;
    const double* w = params.data() + s.weight_offset + o * s.in;
    for (size_t i = 0; i < s.in; ++i) back[i] += w[i] * d;
  }
  return back;
}

}  // namespace

void Network::run_trunk(std::span<const double> params, const std::vector<DenseSlot>& layers,
                        std::span<const float> x, std::vector<std::vector<double>>& acts) const {
  acts.resize(layers.size() + 1);
  acts[0].assign(x.begin(), x.end());
  for (size_t l = 0; l < layers.size(); ++l) {
    dense_forward(params, layers[l], acts[l], acts[l + 1]);
    for (double& v : acts[l + 1]) v = activate(v);
  }
}

ForwardOutput Network::forward(std::span<const double> params, std::span<const float> x) const {
  check_input(params, x);
  ForwardOutput out;
  run_trunk(params, layout_.trunk, x, out.trunk_acts);
  dense_forward(params, layout_.class_head, out.trunk_acts.back(), out.logits);
  std::vector<double> g;
  if (arch_.shared_trunk) {
    dense_forward(params, layout_.detector_head, out.trunk_acts.back(), g);
  } else {
    run_trunk(params, layout_.detector_trunk, x, out.detector_acts);
    dense_forward(params, layout_.detector_head, out.detector_acts.back(), g);
  }
  out.detector_score = g[0];
  return out;
}

int Network::predict_label(std::span<const double> params, std::span<const float> x) const {
  const ForwardOutput out = forward(params, x);
  // max_element returns the first maximum, i.e. the lowest index on ties.
  return static_cast<int>(std::max_element(out.logits.begin(), out.logits.end()) -
                          out.logits.begin());
}

void Network::backprop_trunk(std::span<const double> params, const std::vector<DenseSlot>& layers,
                             const std::vector<std::vector<double>>& acts,
                             std::vector<double> delta, double scale,
                             std::span<double> grad) const {
  for (size_t l = layers.size(); l-- > 0;) {
    const std::vector<double>& a = acts[l + 1];
    for (size_t o = 0; o < delta.size(); ++o) delta[o] *= activation_slope(a[o]);
    dense_accumulate(layers[l], delta, acts[l], scale, grad);
    if (l > 0) delta = dense_backward(params, layers[l], delta);
  }
}

double Network::accumulate_ce(std::span<const double> params, std::span<const float> x, int label,
                              double scale, std::span<double> grad) const {
  if (label < 0 || label >= arch_.num_classes) {
    throw ValidationError("cross-entropy: label " + std::to_string(label) + " out of range");
  }
  if (grad.size() != num_params()) throw ValidationError("cross-entropy: gradient size mismatch");
  const ForwardOutput out = forward(params, x);
  const double lse = log_sum_exp(out.logits);
  const double loss = lse - out.logits[static_cast<size_t>(label)];
  std::vector<double> dz(out.logits.size());
  for (size_t k = 0; k < dz.size(); ++k) dz[k] = std::exp(out.logits[k] - lse);
  dz[static_cast<size_t>(label)] -= 1.0;
  const auto& h = out.trunk_acts.back();
  dense_accumulate(layout_.class_head, dz, h, scale, grad);
  backprop_trunk(params, layout_.trunk, out.trunk_acts, dense_backward(params, layout_.class_head, dz),
                 scale, grad);
  return loss;
}

double Network::accumulate_detector(std::span<const double> params, std::span<const float> x,
                                    DetectorSide side, double scale,
                                    std::span<double> grad) const {
  if (grad.size() != num_params()) throw ValidationError("detector: gradient size mismatch");
  const ForwardOutput out = forward(params, x);
  const double g = out.detector_score;
  // ID side penalizes g <= 0 via sigmoid(-g); OOD side penalizes g > 0 via sigmoid(g).
  const double s = side == DetectorSide::kIdPositive ? sigmoid(-g) : sigmoid(g);
  const double dloss_dg = side == DetectorSide::kIdPositive ? -s * (1.0 - s) : s * (1.0 - s);
  const std::vector<double> dg = {dloss_dg};
  const auto& acts = arch_.shared_trunk ? out.trunk_acts : out.detector_acts;
  const auto& layers = arch_.shared_trunk ? layout_.trunk : layout_.detector_trunk;
  dense_accumulate(layout_.detector_head, dg, acts.back(), scale, grad);
  backprop_trunk(params, layers, acts, dense_backward(params, layout_.detector_head, dg), scale,
                 grad);
  return s;
}

LossGrad Network::ce_loss_and_grad(std::span<const double> params, std::span<const float> x,
                                   int label) const {
  LossGrad out;
  out.grad.assign(num_params(), 0.0);
  out.loss = accumulate_ce(params, x, label, 1.0, out.grad);
  return out;
}

LossGrad Network::detector_loss_and_grad(std::span<const double> params, std::span<const float> x,
                                         DetectorSide side) const {
  LossGrad out;
  out.grad.assign(num_params(), 0.0);
  out.loss = accumulate_detector(params, x, side, 1.0, out.grad);
  return out;
}

std::vector<double> Network::head_gradient_embedding(std::span<const double> params,
                                                     std::span<const float> x, int label) const {
  const ForwardOutput out = forward(params, x);
  std::vector<double> p = softmax(out.logits);
  p[static_cast<size_t>(label)] -= 1.0;
  const auto& h = out.trunk_acts.back();
  std::vector<double> emb;
  emb.reserve(p.size() * h.size());
  for (double pk : p) {
    for (double hj : h) emb.push_back(pk * hj);
  }
  return emb;
}

std::vector<size_t> Network::class_head_indices() const {
  const DenseSlot& s = layout_.class_head;
  std::vector<size_t> idx;
  for (size_t i = s.weight_offset; i < s.bias_offset + s.out; ++i) idx.push_back(i);
  return idx;
}

namespace {
constexpr char kCheckpointMagic[4] = {'W', 'N', 'N', '1'};
constexpr uint32_t kCheckpointVersion = 1;
}  // namespace

std::string encode_checkpoint(const Architecture& arch, const ParamVector& params) {
  const std::string blob = nlohmann::json(arch).dump();
  ByteWriter w;
  w.bytes(kCheckpointMagic, 4);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<uint32_t>(blob.size()));
  w.bytes(blob.data(), blob.size());
  w.u64(params.size());
  for (double v : params) w.f64(v);
  return w.take();
}

void decode_checkpoint(std::string_view bytes, Architecture& arch, ParamVector& params) {
  ByteReader r(bytes, "WNN1");
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0) throw FormatError("WNN1: bad magic bytes");
  const uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("WNN1: unsupported version " + std::to_string(version));
  }
  const uint32_t len = r.u32();
  if (r.remaining() < len) throw FormatError("WNN1: truncated architecture blob");
  std::string blob(len, '\0');
  r.bytes(blob.data(), len);
  try {
    arch = nlohmann::json::parse(blob).get<Architecture>();
    arch.validate();
  } catch (const std::exception& e) {
    throw FormatError(std::string("WNN1: bad architecture: ") + e.what());
  }
  const uint64_t p = r.u64();
  const size_t expected = ParamLayout::build(arch).num_params;
  if (p != expected) {
    throw FormatError("WNN1: parameter count " + std::to_string(p) +
                      " does not match architecture (" + std::to_string(expected) + ")");
  }
  if (r.remaining() != p * 8) {
    throw FormatError(r.remaining() < p * 8 ? "WNN1: truncated parameter block"
                                            : "WNN1: trailing bytes after payload");
  }
  params.resize(p);
  for (double& v : params) v = r.f64();
}

void write_checkpoint(const std::filesystem::path& path, const Architecture& arch,
                      const ParamVector& params) {
  write_file(path, encode_checkpoint(arch, params));
}

void read_checkpoint(const std::filesystem::path& path, Architecture& arch, ParamVector& params) {
  decode_checkpoint(read_file(path), arch, params);
}

}  // namespace wildlab
