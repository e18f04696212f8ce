#include <algorithm>
#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "test_util.h"
#include "wildlab/errors.h"
#include "wildlab/nnet.h"

namespace wildlab {
namespace {

using testing::random_input;
using testing::random_params;

Architecture small_arch(size_t d = 3, std::vector<size_t> hidden = {5, 4}, int c = 3) {
  Architecture a;
  a.input_dim = d;
  a.hidden_sizes = std::move(hidden);
  a.num_classes = c;
  return a;
}

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

template <class LossFn>
double fd_grad(ParamVector p, size_t k, LossFn loss) {
  const double h = 1e-5;
  const double orig = p[k];
  p[k] = orig + h;
  const double up = loss(p);
  p[k] = orig - h;
  const double down = loss(p);
  return (up - down) / (2.0 * h);
}

TEST(Network, ZeroParamsGiveZeroOutputs) {
  Network net(small_arch());
  ParamVector p(net.num_params(), 0.0);
  std::vector<float> x = {1.0f, -2.0f, 0.5f};
  const ForwardOutput out = net.forward(p, x);
  for (double z : out.logits) EXPECT_EQ(z, 0.0);
  EXPECT_EQ(out.detector_score, 0.0);
  EXPECT_NEAR(net.ce_loss_and_grad(p, x, 1).loss, std::log(3.0), 1e-15);
  EXPECT_EQ(net.predict_label(p, x), 0);
}

TEST(Network, ParamCountMatchesLayout) {
  const Architecture a = small_arch(3, {5, 4}, 3);
  Network net(a);
  // 3*5+5 + 5*4+4 + 4*3+3 + 4*1+1
  EXPECT_EQ(net.num_params(), 20u + 24u + 15u + 5u);
  Architecture sep = a;
  sep.shared_trunk = false;
  EXPECT_EQ(Network(sep).num_params(), 20u + 24u + 15u + 20u + 24u + 5u);
}

TEST(Network, PermutingHeadRowsPermutesLogits) {
  Network net(small_arch());
  std::mt19937_64 rng(1);
  ParamVector p = random_params(net, rng);
  const auto x = random_input(rng, 3);
  const DenseSlot& head = net.layout().class_head;
  ParamVector q = p;
  for (size_t j = 0; j < head.in; ++j) {
    std::swap(q[head.weight_offset + 0 * head.in + j], q[head.weight_offset + 2 * head.in + j]);
  }
  std::swap(q[head.bias_offset + 0], q[head.bias_offset + 2]);
  const auto a = net.forward(p, x).logits;
  const auto b = net.forward(q, x).logits;
  EXPECT_EQ(a[0], b[2]);
  EXPECT_EQ(a[1], b[1]);
  EXPECT_EQ(a[2], b[0]);
}

TEST(Network, ForwardIsDeterministic) {
  Network net(small_arch());
  std::mt19937_64 rng(2);
  const ParamVector p = random_params(net, rng);
  const auto x = random_input(rng, 3);
  const auto a = net.forward(p, x);
  const auto b = net.forward(p, x);
  EXPECT_EQ(a.logits, b.logits);
  EXPECT_EQ(a.detector_score, b.detector_score);
}

TEST(Network, DimensionMismatchThrows) {
  Network net(small_arch());
  ParamVector p(net.num_params(), 0.0);
  std::vector<float> x = {1.0f, 2.0f};
  EXPECT_THROW(net.forward(p, x), ValidationError);
  ParamVector short_p(net.num_params() - 1, 0.0);
  std::vector<float> ok = {1.0f, 2.0f, 3.0f};
  EXPECT_THROW(net.forward(short_p, ok), ValidationError);
  EXPECT_THROW(net.ce_loss_and_grad(p, ok, 3), ValidationError);
  EXPECT_THROW(net.ce_loss_and_grad(p, ok, -1), ValidationError);
}

TEST(Network, CrossEntropyMatchesFiniteDifferences) {
  for (Activation act : {Activation::kTanh, Activation::kRelu}) {
    Architecture a = small_arch(4, {6, 5}, 3);
    a.activation = act;
    Network net(a);
    std::mt19937_64 rng(3);
    const ParamVector p = random_params(net, rng);
    const auto x = random_input(rng, 4);
    const LossGrad lg = net.ce_loss_and_grad(p, x, 2);
    std::uniform_int_distribution<size_t> pick(0, net.num_params() - 1);
    for (int t = 0; t < 20; ++t) {
      const size_t k = pick(rng);
      const double fd = fd_grad(p, k, [&](const ParamVector& q) {
        return net.ce_loss_and_grad(q, x, 2).loss;
      });
      EXPECT_LT(rel_err(lg.grad[k], fd), 1e-5) << "coordinate " << k;
    }
  }
}

TEST(Network, DetectorLossMatchesFiniteDifferences) {
  for (bool shared : {true, false}) {
    Architecture a = small_arch(4, {6}, 3);
    a.shared_trunk = shared;
    Network net(a);
    std::mt19937_64 rng(4);
    const ParamVector p = random_params(net, rng);
    const auto x = random_input(rng, 4);
    for (DetectorSide side : {DetectorSide::kIdPositive, DetectorSide::kOodNegative}) {
      const LossGrad lg = net.detector_loss_and_grad(p, x, side);
      for (size_t k = 0; k < net.num_params(); ++k) {
        const double fd = fd_grad(p, k, [&](const ParamVector& q) {
          return net.detector_loss_and_grad(q, x, side).loss;
        });
        EXPECT_LT(rel_err(lg.grad[k], fd), 1e-5) << "coordinate " << k;
      }
    }
  }
}

TEST(Network, DetectorLossValues) {
  Network net(small_arch());
  ParamVector p(net.num_params(), 0.0);
  std::vector<float> x = {0.3f, 0.1f, -0.7f};
  EXPECT_DOUBLE_EQ(net.detector_loss_and_grad(p, x, DetectorSide::kIdPositive).loss, 0.5);
  EXPECT_DOUBLE_EQ(net.detector_loss_and_grad(p, x, DetectorSide::kOodNegative).loss, 0.5);
  p[net.layout().detector_head.bias_offset] = 50.0;
  EXPECT_LT(net.detector_loss_and_grad(p, x, DetectorSide::kIdPositive).loss, 1e-20);
  EXPECT_NEAR(net.detector_loss_and_grad(p, x, DetectorSide::kOodNegative).loss, 1.0, 1e-20);
}

TEST(Network, CrossEntropyVanishesAsTrueLogitGrows) {
  Network net(small_arch());
  ParamVector p(net.num_params(), 0.0);
  std::vector<float> x = {0.3f, 0.1f, -0.7f};
  double prev = std::log(3.0);
  for (double b = 1.0; b <= 64.0; b *= 2.0) {
    p[net.layout().class_head.bias_offset + 1] = b;
    const double loss = net.ce_loss_and_grad(p, x, 1).loss;
    EXPECT_LT(loss, prev);
    EXPECT_GE(loss, 0.0);
    prev = loss;
  }
  EXPECT_LT(prev, 1e-20);
}

TEST(Network, ShiftingAllLogitsChangesNothing) {
  Network net(small_arch());
  std::mt19937_64 rng(5);
  ParamVector p = random_params(net, rng);
  const auto x = random_input(rng, 3);
  ParamVector q = p;
  for (int c = 0; c < 3; ++c) q[net.layout().class_head.bias_offset + c] += 7.25;
  EXPECT_EQ(net.predict_label(p, x), net.predict_label(q, x));
  EXPECT_NEAR(net.ce_loss_and_grad(p, x, 0).loss, net.ce_loss_and_grad(q, x, 0).loss, 1e-12);
}

TEST(Network, PredictLabelPicksArgmax) {
  Network net(small_arch());
  ParamVector p(net.num_params(), 0.0);
  const size_t b = net.layout().class_head.bias_offset;
  p[b] = 0.1;
  p[b + 1] = 5.0;
  p[b + 2] = -2.0;
  std::vector<float> x = {0.0f, 0.0f, 0.0f};
  EXPECT_EQ(net.predict_label(p, x), 1);
  p[b + 2] = 5.0;
  EXPECT_EQ(net.predict_label(p, x), 1);  // tie goes to the lower index
}

TEST(Network, HeadEmbeddingIsTheHeadSliceOfTheGradient) {
  Network net(small_arch());
  std::mt19937_64 rng(6);
  const ParamVector p = random_params(net, rng);
  const auto x = random_input(rng, 3);
  const auto emb = net.head_gradient_embedding(p, x, 1);
  const LossGrad lg = net.ce_loss_and_grad(p, x, 1);
  const DenseSlot& head = net.layout().class_head;
  ASSERT_EQ(emb.size(), head.in * head.out);
  for (size_t i = 0; i < emb.size(); ++i) EXPECT_NEAR(emb[i], lg.grad[head.weight_offset + i], 1e-14);
}

TEST(Network, AccumulateAddsScaledGradient) {
  Network net(small_arch());
  std::mt19937_64 rng(7);
  const ParamVector p = random_params(net, rng);
  const auto x = random_input(rng, 3);
  std::vector<double> acc(net.num_params(), 1.0);
  net.accumulate_ce(p, x, 2, 0.25, acc);
  const LossGrad lg = net.ce_loss_and_grad(p, x, 2);
  for (size_t k = 0; k < acc.size(); ++k) EXPECT_NEAR(acc[k], 1.0 + 0.25 * lg.grad[k], 1e-15);
}

TEST(Network, InitIsSeededGlorot) {
  const Architecture a = small_arch(3, {5}, 3);
  Network net(a);
  const ParamVector p = net.init_params(11);
  EXPECT_EQ(p, net.init_params(11));
  EXPECT_NE(p, net.init_params(12));
  const DenseSlot& l0 = net.layout().trunk[0];
  const double limit = std::sqrt(6.0 / (3 + 5));
  for (size_t i = 0; i < l0.in * l0.out; ++i) EXPECT_LE(std::abs(p[l0.weight_offset + i]), limit);
  for (size_t i = 0; i < l0.out; ++i) EXPECT_EQ(p[l0.bias_offset + i], 0.0);
}

TEST(Checkpoint, RoundTripsExactly) {
  Architecture a = small_arch(3, {7, 2}, 4);
  a.activation = Activation::kRelu;
  Network net(a);
  std::mt19937_64 rng(8);
  const ParamVector p = random_params(net, rng);
  testing::TempDir dir("ckpt");
  write_checkpoint(dir / "m.wnn", a, p);
  Architecture a2;
  ParamVector p2;
  read_checkpoint(dir / "m.wnn", a2, p2);
  EXPECT_EQ(a2, a);
  EXPECT_EQ(p2, p);
  EXPECT_EQ(encode_checkpoint(a2, p2), testing::slurp(dir / "m.wnn"));
}

TEST(Checkpoint, MalformedBytesAreFormatErrors) {
  const Architecture a = small_arch();
  Network net(a);
  const std::string good = encode_checkpoint(a, ParamVector(net.num_params(), 0.5));
  Architecture ar;
  ParamVector pr;
  std::string bad = good;
  bad[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad, ar, pr), FormatError);
  EXPECT_THROW(decode_checkpoint(good.substr(0, good.size() - 3), ar, pr), FormatError);
  EXPECT_THROW(decode_checkpoint(good.substr(0, 10), ar, pr), FormatError);
  EXPECT_THROW(decode_checkpoint(good + "x", ar, pr), FormatError);
  bad = good;
  bad[4] = 9;  // version
  EXPECT_THROW(decode_checkpoint(bad, ar, pr), FormatError);
  EXPECT_THROW(decode_checkpoint("", ar, pr), FormatError);
}

TEST(Architecture, RejectsDegenerateShapes) {
  Architecture a = small_arch();
  a.hidden_sizes.clear();
  EXPECT_THROW(a.validate(), ValidationError);
  a = small_arch();
  a.num_classes = 1;
  EXPECT_THROW(a.validate(), ValidationError);
  a = small_arch();
  a.hidden_sizes = {3, 0};
  EXPECT_THROW(a.validate(), ValidationError);
}

}  // namespace
}  // namespace wildlab
