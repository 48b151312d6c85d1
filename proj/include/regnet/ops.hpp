#pragma once

#include <cstdint>
#include <vector>

#include "regnet/tape.hpp"

namespace regnet {

enum class Mode { train, eval };

// Running statistics owned by a batchnorm site. Not trainable; initialized
// to mean 0 / variance 1 so eval before any update is well defined.
template <typename T>
struct BatchNormStats {
  Tensor<T> running_mean, running_var;
  std::int64_t updates = 0;

  BatchNormStats() = default;
  explicit BatchNormStats(std::int64_t channels)
      : running_mean(Shape{channels, 1, 1, 1}), running_var(Shape{channels, 1, 1, 1}, T(1)) {}
};

// Cross-correlation (no kernel flip). x: (n, inC, h, w); w: (outC, inC/groups,
// kH, kW); optional bias (outC,1,1,1). Output spatial dims follow
// floor((d + 2*padding - k)/stride) + 1.
template <typename T>
Var conv2d(Tape<T>& g, Var x, Var w, Var b, int stride, int padding, int groups);

template <typename T>
Var batchnorm2d(Tape<T>& g, Var x, Var gamma, Var beta, BatchNormStats<T>& stats, Mode mode,
                T eps, T momentum);

template <typename T>
Var relu(Tape<T>& g, Var x);
template <typename T>
Var tanh(Tape<T>& g, Var x);
template <typename T>
Var sigmoid(Tape<T>& g, Var x);

// Channel concatenation, a's channels first.
template <typename T>
Var concat_channels(Tape<T>& g, Var a, Var b);

template <typename T>
Var add(Tape<T>& g, Var a, Var b);
template <typename T>
Var ewise_mul(Tape<T>& g, Var a, Var b);
// scale * x + shift, element-wise with scalar coefficients.
template <typename T>
Var affine(Tape<T>& g, Var x, T scale, T shift);

template <typename T>
Var global_avgpool(Tape<T>& g, Var x);  // (n,c,h,w) -> (n,c,1,1)
template <typename T>
Var maxpool2d(Tape<T>& g, Var x, int kernel, int stride, int padding);

// x: (n,k,1,1), w: (m,k,1,1), optional b: (m,1,1,1) -> (n,m,1,1).
template <typename T>
Var linear(Tape<T>& g, Var x, Var w, Var b);

// Per-channel rescale: x (n,c,h,w) * s (n,c,1,1) broadcast over h,w.
template <typename T>
Var channel_scale(Tape<T>& g, Var x, Var s);

// Mean over the batch of -log softmax probability of the true class.
// logits: (n,m,1,1); labels in [0,m). Returns a scalar (1,1,1,1).
template <typename T>
Var softmax_xent(Tape<T>& g, Var logits, const std::vector<int>& labels);

template <typename T>
Var sum_all(Tape<T>& g, Var x);  // scalar (1,1,1,1)

}  // namespace regnet
