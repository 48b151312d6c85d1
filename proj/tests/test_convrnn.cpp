#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "regnet/convrnn.hpp"

using namespace regnet;

namespace {

template <typename T>
void randomize(ParamSet<T>& ps, std::mt19937& rng) {
  for (auto* p : ps.params) fill_normal(p->value, rng);
}

}  // namespace

TEST_CASE("factorized conv: parameter count is 11N without bias, 12N with") {
  FactorizedConv<double> no_bias("f", 16, false);
  CHECK(no_bias.param_count() == 11 * 16);
  FactorizedConv<double> with_bias("f", 16, true);
  CHECK(with_bias.param_count() == 12 * 16);
}

TEST_CASE("factorized conv equals composing grouped conv2d calls directly") {
  std::mt19937 rng(40);
  const std::int64_t N = 8;
  FactorizedConv<double> fc("f", N, true);
  ParamSet<double> ps;
  fc.collect(ps);
  randomize(ps, rng);
  Tensor<double> x = random_normal<double>(Shape{2, 2 * N, 6, 6}, rng);

  Tape<double> g;
  Var composed = fc.forward(g, g.leaf(x));
  Var step1 = conv2d(g, g.leaf(x), g.param(fc.pointwise.weight), Var{}, 1, 0, static_cast<int>(N));
  Var step2 = conv2d(g, step1, g.param(fc.spatial.weight), g.param(fc.spatial.bias.value()), 1, 1,
                     static_cast<int>(N));
  CHECK(max_rel_err(g.value(composed), g.value(step2), 1e-6) == 0.0);
}

TEST_CASE("factorized conv: zeroing an input channel pair zeroes exactly that output channel") {
  std::mt19937 rng(41);
  const std::int64_t N = 4;
  FactorizedConv<double> fc("f", N, false);
  ParamSet<double> ps;
  fc.collect(ps);
  randomize(ps, rng);
  Tensor<double> x = random_normal<double>(Shape{1, 2 * N, 5, 5}, rng);
  const std::int64_t target = 2;
  for (std::int64_t ch : {2 * target, 2 * target + 1}) {
    for (std::int64_t i = 0; i < 25; ++i) x.data[static_cast<std::size_t>(ch * 25 + i)] = 0.0;
  }
  Tape<double> g;
  const auto& y = g.value(fc.forward(g, g.leaf(x)));
  for (std::int64_t oc = 0; oc < N; ++oc) {
    double mag = 0;
    for (std::int64_t i = 0; i < 25; ++i) mag += std::fabs(y.data[static_cast<std::size_t>(oc * 25 + i)]);
    if (oc == target) {
      CHECK(mag == 0.0);
    } else {
      CHECK(mag > 0.0);
    }
  }
}

TEST_CASE("factorized conv rejects wrong channel counts") {
  FactorizedConv<double> fc("f", 4, false);
  Tape<double> g;
  CHECK_THROWS_AS(fc.forward(g, g.leaf(Tensor<double>(Shape{1, 6, 5, 5}))), InvalidArgument);
}

TEST_CASE("init_state: zeros of the requested geometry, t = 0, deterministic") {
  Tape<double> g;
  CellState s = init_state<double>(g, CellKind::lstm, 2, 4, 6, 7);
  CHECK(g.shape(s.h) == Shape{2, 4, 6, 7});
  CHECK(g.shape(s.c) == Shape{2, 4, 6, 7});
  CHECK(s.t == 0);
  for (double v : g.value(s.h).data) CHECK(v == 0.0);
  CellState s2 = init_state<double>(g, CellKind::gru, 1, 3, 5, 5);
  CHECK_FALSE(s2.c.valid());
  // two inits are bit-identical
  CellState s3 = init_state<double>(g, CellKind::lstm, 2, 4, 6, 7);
  CHECK(g.value(s.h).data == g.value(s3.h).data);
}

TEST_CASE("vanilla cell: zero weights and state give exactly zero output") {
  Cell<double> cell("c", CellKind::vanilla, 4);
  Tape<double> g;
  std::mt19937 rng(42);
  Tensor<double> x = random_normal<double>(Shape{2, 4, 5, 5}, rng);
  CellState s = cell.make_state(g, 2, 5, 5);
  auto [h, s2] = cell.step(g, g.leaf(x), s);
  for (double v : g.value(h).data) CHECK(v == 0.0);
  CHECK(s2.t == 1);
}

TEST_CASE("vanilla cell output is inside (-1,1) and advances t") {
  std::mt19937 rng(43);
  Cell<double> cell("c", CellKind::vanilla, 4);
  ParamSet<double> ps;
  cell.collect(ps);
  randomize(ps, rng);
  Tape<double> g;
  Tensor<double> x = random_normal<double>(Shape{2, 4, 5, 5}, rng);
  CellState s = cell.make_state(g, 2, 5, 5);
  auto [h1, s1] = cell.step(g, g.leaf(x), s);
  auto [h2, s2] = cell.step(g, g.leaf(x), s1);
  CHECK(s2.t == 2);
  for (double v : g.value(h2).data) {
    CHECK(v < 1.0);
    CHECK(v > -1.0);
  }
}

TEST_CASE("cell step rejects mismatched state shape") {
  Cell<double> cell("c", CellKind::vanilla, 4);
  Tape<double> g;
  CellState s = cell.make_state(g, 1, 5, 5);
  CHECK_THROWS_AS(cell.step(g, g.leaf(Tensor<double>(Shape{1, 4, 6, 6})), s), InvalidArgument);
}

TEST_CASE("gru gate saturation: z ~ 0 carries the state through") {
  std::mt19937 rng(44);
  Cell<double> cell("c", CellKind::gru, 3);
  ParamSet<double> ps;
  cell.collect(ps);
  randomize(ps, rng);
  // force all gate pre-activations strongly negative via the spatial biases
  cell.gates[0].spatial.bias->value.fill(-40.0);  // update gate z ~ 0
  Tape<double> g;
  Tensor<double> prev = random_normal<double>(Shape{1, 3, 4, 4}, rng);
  CellState s;
  s.h = g.leaf(prev);
  s.t = 3;
  Tensor<double> x = random_normal<double>(Shape{1, 3, 4, 4}, rng);
  auto [h, s2] = cell.step(g, g.leaf(x), s);
  CHECK(max_rel_err(g.value(h), prev, 1e-3) < 1e-9);
  CHECK(s2.t == 4);
}

TEST_CASE("gru with zero state and z ~ 1 reduces to the feedforward candidate") {
  std::mt19937 rng(45);
  Cell<double> cell("c", CellKind::gru, 3);
  ParamSet<double> ps;
  cell.collect(ps);
  randomize(ps, rng);
  cell.gates[0].spatial.bias->value.fill(40.0);  // z ~ 1
  Tape<double> g;
  Tensor<double> x = random_normal<double>(Shape{1, 3, 4, 4}, rng);
  CellState s = cell.make_state(g, 1, 4, 4);
  auto [h, s2] = cell.step(g, g.leaf(x), s);
  // candidate path with r .* H = 0: tanh(F([x, 0]))
  Var cat = concat_channels(g, g.leaf(x), g.leaf(Tensor<double>(Shape{1, 3, 4, 4})));
  Var cand = tanh(g, cell.gates[2].forward(g, cat));
  CHECK(max_rel_err(g.value(h), g.value(cand), 1e-3) < 1e-9);
}

TEST_CASE("lstm gate saturation: f ~ 1, i ~ 0 preserves the memory map") {
  std::mt19937 rng(46);
  Cell<double> cell("c", CellKind::lstm, 3);
  ParamSet<double> ps;
  cell.collect(ps);
  randomize(ps, rng);
  cell.gates[0].spatial.bias->value.fill(-40.0);  // input gate ~ 0
  cell.gates[1].spatial.bias->value.fill(40.0);   // forget gate ~ 1
  Tape<double> g;
  Tensor<double> c_prev = random_normal<double>(Shape{1, 3, 4, 4}, rng);
  CellState s = cell.make_state(g, 1, 4, 4);
  s.c = g.leaf(c_prev);
  Tensor<double> x = random_normal<double>(Shape{1, 3, 4, 4}, rng);
  auto [h, s2] = cell.step(g, g.leaf(x), s);
  CHECK(max_rel_err(g.value(s2.c), c_prev, 1e-3) < 1e-9);
}

TEST_CASE("lstm with zero state and zero weights gives zero output") {
  Cell<double> cell("c", CellKind::lstm, 3);
  Tape<double> g;
  Tensor<double> x(Shape{1, 3, 4, 4}, 0.7);
  CellState s = cell.make_state(g, 1, 4, 4);
  auto [h, s2] = cell.step(g, g.leaf(x), s);
  for (double v : g.value(h).data) CHECK(v == 0.0);
}

TEST_CASE("lstm forget bias initializes to 1, other biases to 0") {
  std::mt19937 rng(47);
  Cell<double> cell("c", CellKind::lstm, 4);
  cell.init(rng);
  for (double v : cell.gates[1].spatial.bias->value.data) CHECK(v == 1.0);
  for (double v : cell.gates[0].spatial.bias->value.data) CHECK(v == 0.0);
}

TEST_CASE("cell parameter counts: 12N vanilla, 36N gru, 48N lstm") {
  const std::int64_t N = 16;
  CHECK(Cell<double>("c", CellKind::vanilla, N).param_count() == 12 * N);
  CHECK(Cell<double>("c", CellKind::gru, N).param_count() == 36 * N);
  CHECK(Cell<double>("c", CellKind::lstm, N).param_count() == 48 * N);
}

TEST_CASE("all cell kinds preserve spatial dims and emit N channels") {
  std::mt19937 rng(48);
  for (CellKind kind : {CellKind::vanilla, CellKind::gru, CellKind::lstm}) {
    Cell<double> cell("c", kind, 5);
    ParamSet<double> ps;
    cell.collect(ps);
    randomize(ps, rng);
    Tape<double> g;
    Tensor<double> x = random_normal<double>(Shape{2, 5, 7, 3}, rng);
    CellState s = cell.make_state(g, 2, 7, 3);
    auto [h, s2] = cell.step(g, g.leaf(x), s);
    CHECK(g.shape(h) == Shape{2, 5, 7, 3});
  }
}
