#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>

#include "oracles.hpp"
#include "regnet/ops.hpp"

using namespace regnet;

namespace {

std::mt19937 rng_for(std::uint32_t seed) { return std::mt19937(seed); }

template <typename T>
Tensor<T> run_conv(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* b, int stride, int pad,
                   int groups) {
  Tape<T> g;
  Var bv = b ? g.leaf(*b) : Var{};
  Var y = conv2d(g, g.leaf(x), g.leaf(w), bv, stride, pad, groups);
  return g.value(y);
}

}  // namespace

TEST_CASE("conv2d identity kernel") {
  Tensor<double> x(Shape{1, 1, 3, 3}, 1.0);
  Tensor<double> w(Shape{1, 1, 1, 1}, 1.0);
  auto y = run_conv<double>(x, w, nullptr, 1, 0, 1);
  CHECK(y.shape == Shape{1, 1, 3, 3});
  for (double v : y.data) CHECK(v == doctest::Approx(1.0));
}

TEST_CASE("conv2d matches the direct-loop oracle over the shape matrix") {
  auto rng = rng_for(11);
  // all shapes up to (2,8,9,9), kernels 1/3, strides 1/2, pads 0/1, groups 1/2/4
  for (std::int64_t n : {1, 2}) {
    for (std::int64_t c : {1, 2, 4, 8}) {
      for (std::int64_t oc : {1, 4, 8}) {
        for (int groups : {1, 2, 4}) {
          if (c % groups || oc % groups) continue;
          for (std::int64_t k : {1, 3}) {
            for (int stride : {1, 2}) {
              for (int pad : {0, 1}) {
                const std::int64_t h = 9, w = 7;
                if (h + 2 * pad < k) continue;
                Tensor<double> x = random_normal<double>(Shape{n, c, h, w}, rng);
                Tensor<double> wt = random_normal<double>(Shape{oc, c / groups, k, k}, rng);
                Tensor<double> b = random_normal<double>(Shape{oc, 1, 1, 1}, rng);
                auto got = run_conv<double>(x, wt, &b, stride, pad, groups);
                auto ref = oracles::direct_conv<double>(x, wt, &b, stride, pad, groups);
                CHECK(max_rel_err(got, ref, 1e-6) < 1e-6);
              }
            }
          }
        }
      }
    }
  }
}

TEST_CASE("conv2d group isolation: zeroing outside channels leaves a group unchanged") {
  auto rng = rng_for(12);
  Tensor<double> x = random_normal<double>(Shape{1, 4, 5, 5}, rng);
  Tensor<double> w = random_normal<double>(Shape{4, 2, 3, 3}, rng);
  auto full = run_conv<double>(x, w, nullptr, 1, 1, 2);
  Tensor<double> x2 = x;
  for (std::int64_t ch = 2; ch < 4; ++ch) {
    for (std::int64_t i = 0; i < 25; ++i) x2.data[static_cast<std::size_t>(ch * 25 + i)] = 0.0;
  }
  auto masked = run_conv<double>(x2, w, nullptr, 1, 1, 2);
  // channels 0-1 of the output depend only on input channels 0-1
  for (std::int64_t ch = 0; ch < 2; ++ch) {
    for (std::int64_t i = 0; i < 25; ++i) {
      CHECK(full.data[static_cast<std::size_t>(ch * 25 + i)] ==
            doctest::Approx(masked.data[static_cast<std::size_t>(ch * 25 + i)]).epsilon(1e-12));
    }
  }
}

TEST_CASE("conv2d rejects bad geometry naming the dimension") {
  Tape<double> g;
  Var x = g.leaf(Tensor<double>(Shape{1, 3, 5, 5}));
  Var w = g.leaf(Tensor<double>(Shape{4, 3, 3, 3}));
  CHECK_THROWS_AS(conv2d(g, x, w, Var{}, 1, 1, 2), InvalidArgument);  // 3 % 2 != 0
  CHECK_THROWS_AS(conv2d(g, x, w, Var{}, 0, 1, 1), InvalidArgument);  // stride 0
  CHECK_THROWS_AS(conv2d(g, x, w, Var{}, 1, -1, 1), InvalidArgument);
  Var wbig = g.leaf(Tensor<double>(Shape{4, 3, 9, 9}));
  CHECK_THROWS_AS(conv2d(g, x, wbig, Var{}, 1, 0, 1), InvalidArgument);  // kernel too large
}

TEST_CASE("batchnorm: constant input per channel gives beta") {
  Tape<double> g;
  Tensor<double> x(Shape{2, 3, 4, 4});
  for (std::int64_t s = 0; s < 2; ++s) {
    for (std::int64_t c = 0; c < 3; ++c) {
      for (std::int64_t i = 0; i < 16; ++i) x.data[static_cast<std::size_t>((s * 3 + c) * 16 + i)] = 5.0 + static_cast<double>(c);
    }
  }
  Tensor<double> gamma(Shape{3, 1, 1, 1}, 1.0);
  Tensor<double> beta(Shape{3, 1, 1, 1});
  beta.data = {0.5, -1.0, 2.0};
  BatchNormStats<double> stats(3);
  Var y = batchnorm2d(g, g.leaf(x), g.leaf(gamma), g.leaf(beta), stats, Mode::train, 1e-5, 0.1);
  const auto& yv = g.value(y);
  for (std::int64_t s = 0; s < 2; ++s) {
    for (std::int64_t c = 0; c < 3; ++c) {
      for (std::int64_t i = 0; i < 16; ++i) {
        CHECK(yv.data[static_cast<std::size_t>((s * 3 + c) * 16 + i)] ==
              doctest::Approx(beta.data[static_cast<std::size_t>(c)]).epsilon(1e-9));
      }
    }
  }
}

TEST_CASE("batchnorm: unit gamma zero beta normalizes to mean 0 var 1") {
  auto rng = rng_for(21);
  Tensor<double> x = random_normal<double>(Shape{4, 3, 8, 8}, rng);
  for (auto& v : x.data) v = v * 2.3 + 0.7;
  Tape<double> g;
  Tensor<double> gamma(Shape{3, 1, 1, 1}, 1.0);
  Tensor<double> beta(Shape{3, 1, 1, 1});
  BatchNormStats<double> stats(3);
  Var y = batchnorm2d(g, g.leaf(x), g.leaf(gamma), g.leaf(beta), stats, Mode::train, 1e-5, 0.1);
  const auto& yv = g.value(y);
  const std::int64_t count = 4 * 64;
  for (std::int64_t c = 0; c < 3; ++c) {
    double sum = 0, sumsq = 0;
    for (std::int64_t s = 0; s < 4; ++s) {
      for (std::int64_t i = 0; i < 64; ++i) {
        const double v = yv.data[static_cast<std::size_t>((s * 3 + c) * 64 + i)];
        sum += v;
        sumsq += v * v;
      }
    }
    const double mean = sum / static_cast<double>(count);
    const double var = sumsq / static_cast<double>(count) - mean * mean;
    CHECK(std::fabs(mean) < 1e-6);
    CHECK(std::fabs(var - 1.0) < 1e-4);
  }
}

TEST_CASE("batchnorm: eval before any update uses the initialized stats") {
  Tape<double> g;
  auto rng = rng_for(22);
  Tensor<double> x = random_normal<double>(Shape{1, 2, 3, 3}, rng);
  Tensor<double> gamma(Shape{2, 1, 1, 1}, 1.0);
  Tensor<double> beta(Shape{2, 1, 1, 1});
  BatchNormStats<double> stats(2);
  Var y = batchnorm2d(g, g.leaf(x), g.leaf(gamma), g.leaf(beta), stats, Mode::eval, 1e-5, 0.1);
  const auto& yv = g.value(y);
  const double scale = 1.0 / std::sqrt(1.0 + 1e-5);
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    CHECK(yv.data[i] == doctest::Approx(x.data[i] * scale).epsilon(1e-12));
  }
}

TEST_CASE("batchnorm: single-element batch statistics are rejected") {
  Tape<double> g;
  Tensor<double> x(Shape{1, 2, 1, 1}, 1.0);
  Tensor<double> gamma(Shape{2, 1, 1, 1}, 1.0);
  Tensor<double> beta(Shape{2, 1, 1, 1});
  BatchNormStats<double> stats(2);
  CHECK_THROWS_AS(
      batchnorm2d(g, g.leaf(x), g.leaf(gamma), g.leaf(beta), stats, Mode::train, 1e-5, 0.1),
      InvalidArgument);
}

TEST_CASE("activations: pinned values") {
  Tape<double> g;
  Tensor<double> x(Shape{1, 1, 1, 4});
  x.data = {-1.0, 2.0, 0.0, -3.5};
  const auto& r = g.value(relu(g, g.leaf(x)));
  CHECK(r.data == std::vector<double>{0.0, 2.0, 0.0, 0.0});
  Tensor<double> z(Shape{1, 1, 1, 1});
  CHECK(g.value(tanh(g, g.leaf(z))).data[0] == doctest::Approx(0.0));
  CHECK(g.value(sigmoid(g, g.leaf(z))).data[0] == doctest::Approx(0.5));
}

TEST_CASE("concat shape law and algebraic identity with zero right half") {
  auto rng = rng_for(31);
  Tape<double> g;
  Var a = g.leaf(random_normal<double>(Shape{1, 2, 4, 4}, rng));
  Var b = g.leaf(random_normal<double>(Shape{1, 3, 4, 4}, rng));
  Var cat = concat_channels(g, a, b);
  CHECK(g.shape(cat) == Shape{1, 5, 4, 4});
  CHECK_THROWS_AS(concat_channels(g, a, g.leaf(Tensor<double>(Shape{1, 3, 5, 4}))),
                  InvalidArgument);

  // concat(x, zeros) then 1x1 conv whose right-half weights are zero equals
  // the conv of x alone
  Var x = g.leaf(random_normal<double>(Shape{2, 3, 5, 5}, rng));
  Var zeros = g.leaf(Tensor<double>(Shape{2, 3, 5, 5}));
  Tensor<double> w_full(Shape{4, 6, 1, 1});
  auto rng2 = rng_for(32);
  fill_normal(w_full, rng2);
  Tensor<double> w_left(Shape{4, 3, 1, 1});
  for (std::int64_t oc = 0; oc < 4; ++oc) {
    for (std::int64_t ic = 0; ic < 6; ++ic) {
      if (ic >= 3) {
        w_full.data[static_cast<std::size_t>(oc * 6 + ic)] = 0.0;
      } else {
        w_left.data[static_cast<std::size_t>(oc * 3 + ic)] =
            w_full.data[static_cast<std::size_t>(oc * 6 + ic)];
      }
    }
  }
  Var y1 = conv2d(g, concat_channels(g, x, zeros), g.leaf(w_full), Var{}, 1, 0, 1);
  Var y2 = conv2d(g, x, g.leaf(w_left), Var{}, 1, 0, 1);
  CHECK(max_rel_err(g.value(y1), g.value(y2), 1e-6) < 1e-9);
}

TEST_CASE("global_avgpool of a constant tensor is that constant") {
  Tape<double> g;
  Tensor<double> x(Shape{2, 3, 7, 5}, 4.25);
  const auto& y = g.value(global_avgpool(g, g.leaf(x)));
  CHECK(y.shape == Shape{2, 3, 1, 1});
  for (double v : y.data) CHECK(v == doctest::Approx(4.25));
}

TEST_CASE("softmax_xent: uniform logits give ln(classes)") {
  Tape<double> g;
  Tensor<double> logits(Shape{4, 10, 1, 1}, 0.3);
  Var loss = softmax_xent(g, g.leaf(logits), {0, 9, 5, 2});
  CHECK(std::fabs(g.value(loss).data[0] - std::log(10.0)) < 1e-9);
  CHECK_THROWS_AS(softmax_xent(g, g.leaf(logits), {0, 10, 1, 2}), InvalidArgument);
}

TEST_CASE("maxpool geometry and values") {
  Tape<double> g;
  Tensor<double> x(Shape{1, 1, 4, 4});
  for (std::size_t i = 0; i < 16; ++i) x.data[i] = static_cast<double>(i);
  Var y = maxpool2d(g, g.leaf(x), 2, 2, 0);
  CHECK(g.shape(y) == Shape{1, 1, 2, 2});
  CHECK(g.value(y).data == std::vector<double>{5, 7, 13, 15});
}

TEST_CASE("forward determinism: identical inputs produce bit-identical outputs") {
  auto make = [](std::uint32_t seed) {
    auto rng = rng_for(seed);
    Tensor<float> x = random_normal<float>(Shape{2, 4, 8, 8}, rng);
    Tensor<float> w = random_normal<float>(Shape{6, 4, 3, 3}, rng);
    Tape<float> g;
    Var y = relu(g, conv2d(g, g.leaf(x), g.leaf(w), Var{}, 1, 1, 1));
    Var p = global_avgpool(g, y);
    return g.value(p);
  };
  auto a = make(77);
  auto b = make(77);
  REQUIRE(a.data.size() == b.data.size());
  CHECK(std::memcmp(a.ptr(), b.ptr(), a.data.size() * sizeof(float)) == 0);
}

TEST_CASE("non-finite forward values raise NumericError") {
  Tape<double> g;
  Tensor<double> x(Shape{1, 1, 1, 2});
  x.data = {1.0, 710.0};  // exp overflows double at ~709.8
  Var v = g.leaf(x);
  CHECK_THROWS_AS([&] {
    Var big = affine(g, v, 1e300, 0.0);
    return ewise_mul(g, big, big);  // inf
  }(), NumericError);
}
