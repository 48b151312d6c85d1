#include "regnet/layers.hpp"

#include <cmath>

namespace regnet {

template <typename T>
Conv2dLayer<T>::Conv2dLayer(const std::string& name, std::int64_t in_c, std::int64_t out_c,
                            std::int64_t kernel, int stride_, int padding_, int groups_,
                            bool with_bias)
    : weight(name + ".weight", Shape{out_c, in_c / groups_, kernel, kernel}),
      stride(stride_),
      padding(padding_),
      groups(groups_) {
  if (in_c % groups_ != 0 || out_c % groups_ != 0) {
    throw InvalidArgument(name + ": channels (" + std::to_string(in_c) + "->" +
                          std::to_string(out_c) + ") not divisible by groups " +
                          std::to_string(groups_));
  }
  if (with_bias) bias.emplace(name + ".bias", Shape{out_c, 1, 1, 1});
}

template <typename T>
void Conv2dLayer<T>::init(std::mt19937& rng) {
  const auto& s = weight.value.shape;
  const double fan_in = static_cast<double>(s.c * s.h * s.w);
  const T bound = static_cast<T>(std::sqrt(6.0 / fan_in));
  fill_uniform(weight.value, rng, -bound, bound);
  if (bias) bias->value.zero();
}

template <typename T>
Var Conv2dLayer<T>::forward(Tape<T>& g, Var x) {
  Var b = bias ? g.param(*bias) : Var{};
  return conv2d(g, x, g.param(weight), b, stride, padding, groups);
}

template <typename T>
void Conv2dLayer<T>::collect(ParamSet<T>& ps) {
  ps.add(weight);
  if (bias) ps.add(*bias);
}

template <typename T>
std::int64_t Conv2dLayer<T>::param_count() const {
  return weight.value.numel() + (bias ? bias->value.numel() : 0);
}

template <typename T>
BatchNorm2dLayer<T>::BatchNorm2dLayer(const std::string& name, std::int64_t channels)
    : gamma(name + ".gamma", Shape{channels, 1, 1, 1}),
      beta(name + ".beta", Shape{channels, 1, 1, 1}),
      stats(channels),
      stats_name(name) {
  gamma.value.fill(T(1));
}

template <typename T>
Var BatchNorm2dLayer<T>::forward(Tape<T>& g, Var x, Mode mode) {
  return batchnorm2d(g, x, g.param(gamma), g.param(beta), stats, mode, eps, momentum);
}

template <typename T>
void BatchNorm2dLayer<T>::collect(ParamSet<T>& ps) {
  ps.add(gamma);
  ps.add(beta);
  ps.add_buffer(stats_name + ".running_mean", stats.running_mean);
  ps.add_buffer(stats_name + ".running_var", stats.running_var);
}

template <typename T>
LinearLayer<T>::LinearLayer(const std::string& name, std::int64_t in_features,
                            std::int64_t out_features)
    : weight(name + ".weight", Shape{out_features, in_features, 1, 1}),
      bias(name + ".bias", Shape{out_features, 1, 1, 1}) {}

template <typename T>
void LinearLayer<T>::init(std::mt19937& rng) {
  const T bound = static_cast<T>(1.0 / std::sqrt(static_cast<double>(weight.value.shape.c)));
  fill_uniform(weight.value, rng, -bound, bound);
  bias.value.zero();
}

template <typename T>
Var LinearLayer<T>::forward(Tape<T>& g, Var x) {
  return linear(g, x, g.param(weight), g.param(bias));
}

template <typename T>
void LinearLayer<T>::collect(ParamSet<T>& ps) {
  ps.add(weight);
  ps.add(bias);
}

template struct ParamSet<float>;
template struct ParamSet<double>;
template struct Conv2dLayer<float>;
template struct Conv2dLayer<double>;
template struct BatchNorm2dLayer<float>;
template struct BatchNorm2dLayer<double>;
template struct LinearLayer<float>;
template struct LinearLayer<double>;

}  // namespace regnet
