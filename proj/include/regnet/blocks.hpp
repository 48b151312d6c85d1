#pragma once

#include "regnet/convrnn.hpp"

namespace regnet {

// Squeeze-and-excitation channel gate: sigmoid(W2 relu(W1 gap(x))) rescales
// x per channel. Applied to the residual branch output before the shortcut
// addition.
template <typename T>
struct SEGate {
  LinearLayer<T> squeeze, excite;
  std::int64_t channels = 0, reduction = 0;

  SEGate() = default;
  SEGate(const std::string& name, std::int64_t channels, std::int64_t reduction);

  Var forward(Tape<T>& g, Var x);
  void init(std::mt19937& rng);
  void collect(ParamSet<T>& ps);
  std::int64_t param_count() const { return squeeze.param_count() + excite.param_count(); }
};

// 1x1 projection + BN for shortcut paths whose geometry changes.
template <typename T>
struct Projection {
  Conv2dLayer<T> conv;
  BatchNorm2dLayer<T> bn;

  Projection(const std::string& name, std::int64_t in_c, std::int64_t out_c, int stride);
  Var forward(Tape<T>& g, Var x, Mode mode);
  void init(std::mt19937& rng) { conv.init(rng); }
  void collect(ParamSet<T>& ps);
  std::int64_t param_count() const { return conv.param_count() + bn.param_count(); }
};

// One regulator per stage: a recurrent cell plus a batchnorm shared across
// the stage's time steps. The hidden map handed to the next step is the
// post-BN-ReLU value; the LSTM memory map propagates raw.
template <typename T>
struct StageRegulator {
  Cell<T> cell;
  BatchNorm2dLayer<T> bn;

  StageRegulator() = default;
  StageRegulator(const std::string& name, CellKind kind, std::int64_t width);

  std::pair<Var, CellState> step(Tape<T>& g, Var x, const CellState& s, Mode mode);
  void init(std::mt19937& rng) { cell.init(rng); }
  void collect(ParamSet<T>& ps);
  std::int64_t param_count() const { return cell.param_count() + bn.param_count(); }
};

// Plain two-conv residual block (3x3 -> 3x3), option-B projection shortcut.
template <typename T>
struct BasicBlock {
  Conv2dLayer<T> conv1, conv2;
  BatchNorm2dLayer<T> bn1, bn2;
  std::optional<Projection<T>> proj;
  std::optional<SEGate<T>> se;
  int stride = 1;

  BasicBlock(const std::string& name, std::int64_t in_c, std::int64_t out_c, int stride,
             bool with_se, std::int64_t se_reduction);

  Var forward(Tape<T>& g, Var x, Mode mode);
  void init(std::mt19937& rng);
  void collect(ParamSet<T>& ps);
};

// Plain bottleneck block (1x1 reduce -> 3x3 -> 1x1 expand, x4 expansion).
// The downsampling stride sits on the leading 1x1 so that a regulated
// counterpart sees one working resolution per stage.
template <typename T>
struct BottleneckBlock {
  static constexpr std::int64_t kExpansion = 4;
  Conv2dLayer<T> conv1, conv2, conv3;
  BatchNorm2dLayer<T> bn1, bn2, bn3;
  std::optional<Projection<T>> proj;
  std::optional<SEGate<T>> se;
  int stride = 1;

  BottleneckBlock(const std::string& name, std::int64_t in_c, std::int64_t width, int stride,
                  bool with_se, std::int64_t se_reduction);

  Var forward(Tape<T>& g, Var x, Mode mode);
  void init(std::mt19937& rng);
  void collect(ParamSet<T>& ps);
};

// Regulated two-conv block: 3x3 (stride) -> cell step -> 1x1 fusion of
// [features, hidden] -> 3x3, residual add. The fusion conv carries no bias;
// the 3x3 convs do.
template <typename T>
struct RegNetBlock {
  Conv2dLayer<T> conv12, conv23, conv34;
  BatchNorm2dLayer<T> bn12, bn23, bn34;
  std::optional<Projection<T>> proj;
  std::optional<SEGate<T>> se;
  int stride = 1;

  RegNetBlock(const std::string& name, std::int64_t in_c, std::int64_t out_c, int stride,
              bool with_se, std::int64_t se_reduction);

  // state is created at the post-conv12 geometry when absent.
  std::pair<Var, CellState> forward(Tape<T>& g, Var x, StageRegulator<T>& reg,
                                    const std::optional<CellState>& state, Mode mode);
  void init(std::mt19937& rng);
  void collect(ParamSet<T>& ps);
};

// Regulated bottleneck: 1x1 reduce (stride) -> cell step -> 3x3 -> 1x1
// fusion of [features, hidden] (no bias) -> 1x1 expand, residual add.
template <typename T>
struct BottleneckRegNetBlock {
  static constexpr std::int64_t kExpansion = 4;
  Conv2dLayer<T> conv12, conv23, conv34, conv45;
  BatchNorm2dLayer<T> bn12, bn23, bn34, bn45;
  std::optional<Projection<T>> proj;
  std::optional<SEGate<T>> se;
  int stride = 1;

  BottleneckRegNetBlock(const std::string& name, std::int64_t in_c, std::int64_t width, int stride,
                        bool with_se, std::int64_t se_reduction);

  std::pair<Var, CellState> forward(Tape<T>& g, Var x, StageRegulator<T>& reg,
                                    const std::optional<CellState>& state, Mode mode);
  void init(std::mt19937& rng);
  void collect(ParamSet<T>& ps);
};

}  // namespace regnet
