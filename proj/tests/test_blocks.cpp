#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "equivalence.hpp"
#include "regnet/blocks.hpp"

using namespace regnet;

namespace {

template <typename B>
ParamSet<double> params_of(B& block) {
  ParamSet<double> ps;
  block.collect(ps);
  return ps;
}

}  // namespace

TEST_CASE("basic block: zero residual branch reduces to ReLU(x)") {
  BasicBlock<double> blk("b", 4, 4, 1, false, 1);
  // weights are zero-initialized by construction; identity shortcut
  std::mt19937 rng(60);
  Tensor<double> x = random_normal<double>(Shape{2, 4, 6, 6}, rng);
  Tape<double> g;
  Var y = blk.forward(g, g.leaf(x), Mode::eval);
  const auto& yv = g.value(y);
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    CHECK(yv.data[i] == doctest::Approx(std::max(x.data[i], 0.0)).epsilon(1e-12));
  }
}

TEST_CASE("basic block shape law: stride 2 halves the spatial dims") {
  BasicBlock<double> blk("b", 16, 32, 2, false, 1);
  std::mt19937 rng(61);
  blk.init(rng);
  Tape<double> g;
  Var y = blk.forward(g, g.leaf(random_normal<double>(Shape{2, 16, 32, 32}, rng)), Mode::train);
  CHECK(g.shape(y) == Shape{2, 32, 16, 16});
}

TEST_CASE("basic block without projection rejects mismatched shapes") {
  // constructing with stride/channel change always adds the projection, so
  // force the degenerate case manually
  BasicBlock<double> blk("b", 4, 4, 1, false, 1);
  blk.proj.reset();
  blk.conv1.stride = 2;  // shapes now disagree with the identity shortcut
  std::mt19937 rng(62);
  blk.init(rng);
  Tape<double> g;
  CHECK_THROWS_AS(blk.forward(g, g.leaf(random_normal<double>(Shape{1, 4, 8, 8}, rng)), Mode::train),
                  InvalidArgument);
}

TEST_CASE("regnet block shape law and state geometry") {
  RegNetBlock<double> blk("b", 16, 16, 1, false, 1);
  StageRegulator<double> reg("r", CellKind::gru, 16);
  std::mt19937 rng(63);
  blk.init(rng);
  reg.init(rng);
  Tape<double> g;
  std::optional<CellState> state;
  auto [y, s2] =
      blk.forward(g, g.leaf(random_normal<double>(Shape{2, 16, 32, 32}, rng)), reg, state,
                  Mode::train);
  CHECK(g.shape(y) == Shape{2, 16, 32, 32});
  CHECK(g.shape(s2.h) == Shape{2, 16, 32, 32});
  CHECK(s2.t == 1);
}

TEST_CASE("bottleneck regnet block: stage-1 geometry of the 50-layer net") {
  BottleneckRegNetBlock<double> blk("b", 256, 64, 1, false, 1);
  StageRegulator<double> reg("r", CellKind::lstm, 64);
  std::mt19937 rng(64);
  blk.init(rng);
  reg.init(rng);
  Tape<double> g;
  std::optional<CellState> state;
  auto [y, s2] =
      blk.forward(g, g.leaf(random_normal<double>(Shape{1, 256, 14, 14}, rng)), reg, state,
                  Mode::train);
  CHECK(g.shape(y) == Shape{1, 256, 14, 14});
  CHECK(g.shape(s2.h) == Shape{1, 64, 14, 14});
}

TEST_CASE("regnet block with disabled regulator reproduces the basic block") {
  std::mt19937 rng(65);
  const std::int64_t N = 8;
  BasicBlock<double> plain("p", N, N, 1, false, 1);
  plain.init(rng);
  // give the plain block nontrivial BN stats to copy
  fill_normal(plain.bn1.stats.running_mean, rng);
  plain.bn1.stats.running_var.fill(0.8);
  fill_normal(plain.bn2.stats.running_mean, rng);
  plain.bn2.stats.running_var.fill(1.3);

  RegNetBlock<double> regb("r", N, N, 1, false, 1);
  StageRegulator<double> reg("reg", CellKind::lstm, N);
  regb.conv12.weight.value = plain.conv1.weight.value;
  regb.conv34.weight.value = plain.conv2.weight.value;
  regb.bn12.gamma.value = plain.bn1.gamma.value;
  regb.bn12.beta.value = plain.bn1.beta.value;
  regb.bn12.stats.running_mean = plain.bn1.stats.running_mean;
  regb.bn12.stats.running_var = plain.bn1.stats.running_var;
  regb.bn34.gamma.value = plain.bn2.gamma.value;
  regb.bn34.beta.value = plain.bn2.beta.value;
  regb.bn34.stats.running_mean = plain.bn2.stats.running_mean;
  regb.bn34.stats.running_var = plain.bn2.stats.running_var;
  regb.conv12.bias->value.zero();
  regb.conv34.bias->value.zero();
  equivalence::make_fusion_identity(regb.conv23, regb.bn23);

  Tensor<double> x = random_normal<double>(Shape{2, N, 10, 10}, rng);
  Tape<double> g;
  Var y_plain = plain.forward(g, g.leaf(x), Mode::eval);
  std::optional<CellState> state;
  auto [y_reg, s2] = regb.forward(g, g.leaf(x), reg, state, Mode::eval);
  CHECK(max_rel_err(g.value(y_plain), g.value(y_reg), 1e-6) <= 1e-6);
}

TEST_CASE("bottleneck regnet block with disabled regulator reproduces the bottleneck block") {
  std::mt19937 rng(66);
  const std::int64_t N = 4;
  BottleneckBlock<double> plain("p", 4 * N, N, 1, false, 1);
  plain.init(rng);
  BottleneckRegNetBlock<double> regb("r", 4 * N, N, 1, false, 1);
  StageRegulator<double> reg("reg", CellKind::gru, N);
  regb.conv12.weight.value = plain.conv1.weight.value;
  regb.conv23.weight.value = plain.conv2.weight.value;
  regb.conv45.weight.value = plain.conv3.weight.value;
  regb.conv12.bias->value.zero();
  regb.conv23.bias->value.zero();
  regb.conv45.bias->value.zero();
  regb.bn12.gamma.value = plain.bn1.gamma.value;
  regb.bn23.gamma.value = plain.bn2.gamma.value;
  regb.bn45.gamma.value = plain.bn3.gamma.value;
  equivalence::make_fusion_identity(regb.conv34, regb.bn34);

  Tensor<double> x = random_normal<double>(Shape{2, 4 * N, 8, 8}, rng);
  Tape<double> g;
  Var y_plain = plain.forward(g, g.leaf(x), Mode::eval);
  std::optional<CellState> state;
  auto [y_reg, s2] = regb.forward(g, g.leaf(x), reg, state, Mode::eval);
  CHECK(max_rel_err(g.value(y_plain), g.value(y_reg), 1e-6) <= 1e-6);
}

TEST_CASE("shortcut identity path passes the upstream gradient through the ReLU mask") {
  const std::int64_t N = 4;
  BasicBlock<double> blk("b", N, N, 1, false, 1);  // all-zero residual branch
  std::mt19937 rng(67);
  Tensor<double> x = random_normal<double>(Shape{2, N, 5, 5}, rng);
  Tape<double> g;
  Var xv = g.leaf(x);
  Var y = blk.forward(g, xv, Mode::eval);
  Tensor<double> proj = random_normal<double>(Shape{2, N, 5, 5}, rng);
  Var loss = sum_all(g, ewise_mul(g, y, g.leaf(proj)));
  g.backward(loss);
  const auto& dx = g.grad(xv);
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    const double expected = x.data[i] > 0 ? proj.data[i] : 0.0;
    CHECK(dx.data[i] == doctest::Approx(expected).epsilon(1e-10));
  }
}

TEST_CASE("se gate: zero excite weights halve the input") {
  SEGate<double> se("se", 8, 4);
  std::mt19937 rng(68);
  se.init(rng);
  se.excite.weight.value.zero();
  se.excite.bias.value.zero();
  Tensor<double> x = random_normal<double>(Shape{2, 8, 5, 5}, rng);
  Tape<double> g;
  const auto& y = g.value(se.forward(g, g.leaf(x)));
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    CHECK(y.data[i] == doctest::Approx(0.5 * x.data[i]).epsilon(1e-12));
  }
}

TEST_CASE("se gate values lie strictly inside (0,1) and shape is preserved") {
  SEGate<double> se("se", 8, 8);
  std::mt19937 rng(69);
  se.init(rng);
  ParamSet<double> ps;
  se.collect(ps);
  for (auto* p : ps.params) fill_normal(p->value, rng);
  Tensor<double> x = random_normal<double>(Shape{2, 8, 6, 6}, rng);
  for (auto& v : x.data) v *= 30.0;
  Tape<double> g;
  Var xv = g.leaf(x);
  Var y = se.forward(g, xv);
  CHECK(g.shape(y) == g.shape(xv));
  const auto& yv = g.value(y);
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    if (x.data[i] != 0.0) {
      const double gate = yv.data[i] / x.data[i];
      CHECK(gate > 0.0);
      CHECK(gate < 1.0);
    }
  }
}

TEST_CASE("se gate rejects a reduction that does not divide the channels") {
  CHECK_THROWS_AS(SEGate<double>("se", 10, 4), InvalidArgument);
}
