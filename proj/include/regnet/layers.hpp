#pragma once

#include <optional>
#include <string>
#include <vector>

#include "regnet/ops.hpp"

namespace regnet {

// Named views a network exposes for the optimizer and for checkpointing.
template <typename T>
struct ParamSet {
  std::vector<Parameter<T>*> params;
  std::vector<std::pair<std::string, Tensor<T>*>> buffers;  // BN running stats

  void add(Parameter<T>& p) { params.push_back(&p); }
  void add_buffer(const std::string& name, Tensor<T>& t) { buffers.emplace_back(name, &t); }
};

template <typename T>
struct Conv2dLayer {
  Parameter<T> weight;
  std::optional<Parameter<T>> bias;
  int stride = 1, padding = 0, groups = 1;

  Conv2dLayer() = default;
  Conv2dLayer(const std::string& name, std::int64_t in_c, std::int64_t out_c, std::int64_t kernel,
              int stride, int padding, int groups, bool with_bias);

  void init(std::mt19937& rng);  // kaiming-uniform fan-in on the weight, zero bias
  Var forward(Tape<T>& g, Var x);
  void collect(ParamSet<T>& ps);
  std::int64_t param_count() const;
};

template <typename T>
struct BatchNorm2dLayer {
  Parameter<T> gamma, beta;
  BatchNormStats<T> stats;
  std::string stats_name;
  T eps = T(1e-5);
  T momentum = T(0.1);

  BatchNorm2dLayer() = default;
  BatchNorm2dLayer(const std::string& name, std::int64_t channels);

  Var forward(Tape<T>& g, Var x, Mode mode);
  void collect(ParamSet<T>& ps);
  std::int64_t param_count() const { return gamma.value.numel() + beta.value.numel(); }
};

template <typename T>
struct LinearLayer {
  Parameter<T> weight, bias;

  LinearLayer() = default;
  LinearLayer(const std::string& name, std::int64_t in_features, std::int64_t out_features);

  void init(std::mt19937& rng);
  Var forward(Tape<T>& g, Var x);
  void collect(ParamSet<T>& ps);
  std::int64_t param_count() const { return weight.value.numel() + bias.value.numel(); }
};

}  // namespace regnet
