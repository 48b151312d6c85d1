#include "regnet/blocks.hpp"

namespace regnet {

template <typename T>
SEGate<T>::SEGate(const std::string& name, std::int64_t channels_, std::int64_t reduction_)
    : squeeze(name + ".squeeze", channels_, channels_ / std::max<std::int64_t>(reduction_, 1)),
      excite(name + ".excite", channels_ / std::max<std::int64_t>(reduction_, 1), channels_),
      channels(channels_),
      reduction(reduction_) {
  if (reduction_ < 1 || channels_ % reduction_ != 0) {
    throw InvalidArgument(name + ": reduction " + std::to_string(reduction_) +
                          " does not divide channels " + std::to_string(channels_));
  }
}

template <typename T>
Var SEGate<T>::forward(Tape<T>& g, Var x) {
  if (g.shape(x).c != channels) {
    throw InvalidArgument("se_gate: expected " + std::to_string(channels) + " channels, got " +
                          std::to_string(g.shape(x).c));
  }
  Var s = global_avgpool(g, x);
  s = relu(g, squeeze.forward(g, s));
  s = sigmoid(g, excite.forward(g, s));
  return channel_scale(g, x, s);
}

template <typename T>
void SEGate<T>::init(std::mt19937& rng) {
  squeeze.init(rng);
  excite.init(rng);
}

template <typename T>
void SEGate<T>::collect(ParamSet<T>& ps) {
  squeeze.collect(ps);
  excite.collect(ps);
}

template <typename T>
Projection<T>::Projection(const std::string& name, std::int64_t in_c, std::int64_t out_c,
                          int stride)
    : conv(name + ".conv", in_c, out_c, 1, stride, 0, 1, false), bn(name + ".bn", out_c) {}

template <typename T>
Var Projection<T>::forward(Tape<T>& g, Var x, Mode mode) {
  return bn.forward(g, conv.forward(g, x), mode);
}

template <typename T>
void Projection<T>::collect(ParamSet<T>& ps) {
  conv.collect(ps);
  bn.collect(ps);
}

template <typename T>
StageRegulator<T>::StageRegulator(const std::string& name, CellKind kind, std::int64_t width)
    : cell(name + ".cell", kind, width), bn(name + ".bn", width) {}

template <typename T>
std::pair<Var, CellState> StageRegulator<T>::step(Tape<T>& g, Var x, const CellState& s,
                                                  Mode mode) {
  auto [h_raw, next] = cell.step(g, x, s);
  Var h = relu(g, bn.forward(g, h_raw, mode));
  next.h = h;  // post-BN-ReLU value is what later steps consume
  return {h, next};
}

template <typename T>
void StageRegulator<T>::collect(ParamSet<T>& ps) {
  cell.collect(ps);
  bn.collect(ps);
}

namespace {

template <typename T>
Var shortcut_path(Tape<T>& g, Var x, std::optional<Projection<T>>& proj, Mode mode,
                  const Shape& branch_shape) {
  if (proj) return proj->forward(g, x, mode);
  if (!(g.shape(x) == branch_shape)) {
    throw InvalidArgument("residual block: shortcut " + g.shape(x).str() +
                          " does not match branch " + branch_shape.str() +
                          " and no projection is configured");
  }
  return x;
}

}  // namespace

template <typename T>
BasicBlock<T>::BasicBlock(const std::string& name, std::int64_t in_c, std::int64_t out_c,
                          int stride_, bool with_se, std::int64_t se_reduction)
    : conv1(name + ".conv1", in_c, out_c, 3, stride_, 1, 1, false),
      conv2(name + ".conv2", out_c, out_c, 3, 1, 1, 1, false),
      bn1(name + ".bn1", out_c),
      bn2(name + ".bn2", out_c),
      stride(stride_) {
  if (stride_ != 1 || in_c != out_c) proj.emplace(name + ".proj", in_c, out_c, stride_);
  if (with_se) se.emplace(name + ".se", out_c, se_reduction);
}

template <typename T>
Var BasicBlock<T>::forward(Tape<T>& g, Var x, Mode mode) {
  Var y = relu(g, bn1.forward(g, conv1.forward(g, x), mode));
  y = bn2.forward(g, conv2.forward(g, y), mode);
  if (se) y = se->forward(g, y);
  Var sc = shortcut_path(g, x, proj, mode, g.shape(y));
  return relu(g, add(g, sc, y));
}

template <typename T>
void BasicBlock<T>::init(std::mt19937& rng) {
  conv1.init(rng);
  conv2.init(rng);
  if (proj) proj->init(rng);
  if (se) se->init(rng);
}

template <typename T>
void BasicBlock<T>::collect(ParamSet<T>& ps) {
  conv1.collect(ps);
  bn1.collect(ps);
  conv2.collect(ps);
  bn2.collect(ps);
  if (proj) proj->collect(ps);
  if (se) se->collect(ps);
}

template <typename T>
BottleneckBlock<T>::BottleneckBlock(const std::string& name, std::int64_t in_c, std::int64_t width,
                                    int stride_, bool with_se, std::int64_t se_reduction)
    : conv1(name + ".conv1", in_c, width, 1, stride_, 0, 1, false),
      conv2(name + ".conv2", width, width, 3, 1, 1, 1, false),
      conv3(name + ".conv3", width, width * kExpansion, 1, 1, 0, 1, false),
      bn1(name + ".bn1", width),
      bn2(name + ".bn2", width),
      bn3(name + ".bn3", width * kExpansion),
      stride(stride_) {
  if (stride_ != 1 || in_c != width * kExpansion) {
    proj.emplace(name + ".proj", in_c, width * kExpansion, stride_);
  }
  if (with_se) se.emplace(name + ".se", width * kExpansion, se_reduction);
}

template <typename T>
Var BottleneckBlock<T>::forward(Tape<T>& g, Var x, Mode mode) {
  Var y = relu(g, bn1.forward(g, conv1.forward(g, x), mode));
  y = relu(g, bn2.forward(g, conv2.forward(g, y), mode));
  y = bn3.forward(g, conv3.forward(g, y), mode);
  if (se) y = se->forward(g, y);
  Var sc = shortcut_path(g, x, proj, mode, g.shape(y));
  return relu(g, add(g, sc, y));
}

template <typename T>
void BottleneckBlock<T>::init(std::mt19937& rng) {
  conv1.init(rng);
  conv2.init(rng);
  conv3.init(rng);
  if (proj) proj->init(rng);
  if (se) se->init(rng);
}

template <typename T>
void BottleneckBlock<T>::collect(ParamSet<T>& ps) {
  conv1.collect(ps);
  bn1.collect(ps);
  conv2.collect(ps);
  bn2.collect(ps);
  conv3.collect(ps);
  bn3.collect(ps);
  if (proj) proj->collect(ps);
  if (se) se->collect(ps);
}

template <typename T>
RegNetBlock<T>::RegNetBlock(const std::string& name, std::int64_t in_c, std::int64_t out_c,
                            int stride_, bool with_se, std::int64_t se_reduction)
    : conv12(name + ".conv12", in_c, out_c, 3, stride_, 1, 1, true),
      conv23(name + ".conv23", 2 * out_c, out_c, 1, 1, 0, 1, false),
      conv34(name + ".conv34", out_c, out_c, 3, 1, 1, 1, true),
      bn12(name + ".bn12", out_c),
      bn23(name + ".bn23", out_c),
      bn34(name + ".bn34", out_c),
      stride(stride_) {
  if (stride_ != 1 || in_c != out_c) proj.emplace(name + ".proj", in_c, out_c, stride_);
  if (with_se) se.emplace(name + ".se", out_c, se_reduction);
}

template <typename T>
std::pair<Var, CellState> RegNetBlock<T>::forward(Tape<T>& g, Var x, StageRegulator<T>& reg,
                                                  const std::optional<CellState>& state,
                                                  Mode mode) {
  Var x2 = relu(g, bn12.forward(g, conv12.forward(g, x), mode));
  const Shape& fs = g.shape(x2);
  CellState s = state ? *state : reg.cell.make_state(g, fs.n, fs.h, fs.w);
  auto [h, next] = reg.step(g, x2, s, mode);
  Var x3 = relu(g, bn23.forward(g, conv23.forward(g, concat_channels(g, x2, h)), mode));
  Var x4 = bn34.forward(g, conv34.forward(g, x3), mode);
  if (se) x4 = se->forward(g, x4);
  Var sc = shortcut_path(g, x, proj, mode, g.shape(x4));
  return {relu(g, add(g, sc, x4)), next};
}

template <typename T>
void RegNetBlock<T>::init(std::mt19937& rng) {
  conv12.init(rng);
  conv23.init(rng);
  conv34.init(rng);
  if (proj) proj->init(rng);
  if (se) se->init(rng);
}

template <typename T>
void RegNetBlock<T>::collect(ParamSet<T>& ps) {
  conv12.collect(ps);
  bn12.collect(ps);
  conv23.collect(ps);
  bn23.collect(ps);
  conv34.collect(ps);
  bn34.collect(ps);
  if (proj) proj->collect(ps);
  if (se) se->collect(ps);
}

template <typename T>
BottleneckRegNetBlock<T>::BottleneckRegNetBlock(const std::string& name, std::int64_t in_c,
                                                std::int64_t width, int stride_, bool with_se,
                                                std::int64_t se_reduction)
    : conv12(name + ".conv12", in_c, width, 1, stride_, 0, 1, true),
      conv23(name + ".conv23", width, width, 3, 1, 1, 1, true),
      conv34(name + ".conv34", 2 * width, width, 1, 1, 0, 1, false),
      conv45(name + ".conv45", width, width * kExpansion, 1, 1, 0, 1, true),
      bn12(name + ".bn12", width),
      bn23(name + ".bn23", width),
      bn34(name + ".bn34", width),
      bn45(name + ".bn45", width * kExpansion),
      stride(stride_) {
  if (stride_ != 1 || in_c != width * kExpansion) {
    proj.emplace(name + ".proj", in_c, width * kExpansion, stride_);
  }
  if (with_se) se.emplace(name + ".se", width * kExpansion, se_reduction);
}

template <typename T>
std::pair<Var, CellState> BottleneckRegNetBlock<T>::forward(Tape<T>& g, Var x,
                                                            StageRegulator<T>& reg,
                                                            const std::optional<CellState>& state,
                                                            Mode mode) {
  Var x2 = relu(g, bn12.forward(g, conv12.forward(g, x), mode));
  const Shape& fs = g.shape(x2);
  CellState s = state ? *state : reg.cell.make_state(g, fs.n, fs.h, fs.w);
  auto [h, next] = reg.step(g, x2, s, mode);
  Var x3 = relu(g, bn23.forward(g, conv23.forward(g, x2), mode));
  Var x4 = relu(g, bn34.forward(g, conv34.forward(g, concat_channels(g, x3, h)), mode));
  Var x5 = bn45.forward(g, conv45.forward(g, x4), mode);
  if (se) x5 = se->forward(g, x5);
  Var sc = shortcut_path(g, x, proj, mode, g.shape(x5));
  return {relu(g, add(g, sc, x5)), next};
}

template <typename T>
void BottleneckRegNetBlock<T>::init(std::mt19937& rng) {
  conv12.init(rng);
  conv23.init(rng);
  conv34.init(rng);
  conv45.init(rng);
  if (proj) proj->init(rng);
  if (se) se->init(rng);
}

template <typename T>
void BottleneckRegNetBlock<T>::collect(ParamSet<T>& ps) {
  conv12.collect(ps);
  bn12.collect(ps);
  conv23.collect(ps);
  bn23.collect(ps);
  conv34.collect(ps);
  bn34.collect(ps);
  conv45.collect(ps);
  bn45.collect(ps);
  if (proj) proj->collect(ps);
  if (se) se->collect(ps);
}

template struct SEGate<float>;
template struct SEGate<double>;
template struct Projection<float>;
template struct Projection<double>;
template struct StageRegulator<float>;
template struct StageRegulator<double>;
template struct BasicBlock<float>;
template struct BasicBlock<double>;
template struct BottleneckBlock<float>;
template struct BottleneckBlock<double>;
template struct RegNetBlock<float>;
template struct RegNetBlock<double>;
template struct BottleneckRegNetBlock<float>;
template struct BottleneckRegNetBlock<double>;

}  // namespace regnet
