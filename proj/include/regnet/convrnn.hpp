#pragma once

#include "regnet/layers.hpp"

namespace regnet {

enum class CellKind { vanilla, gru, lstm };

const char* cell_kind_name(CellKind k);
CellKind cell_kind_from_name(const std::string& s);

// Two-step replacement for a 3x3 convolution on 2N channels: grouped 1x1
// channel fusion (N groups of 2-in/1-out) followed by per-channel 3x3
// spatial filtering, stride 1, padding 1 on the spatial step. Costs 11N
// MACs per output pixel against 18N^2 for the dense equivalent.
template <typename T>
struct FactorizedConv {
  Conv2dLayer<T> pointwise;  // (N, 2, 1, 1), groups = N, no bias
  Conv2dLayer<T> spatial;    // (N, 1, 3, 3), groups = N, carries the bias
  std::int64_t width = 0;    // N

  FactorizedConv() = default;
  FactorizedConv(const std::string& name, std::int64_t width, bool with_bias);

  Var forward(Tape<T>& g, Var x);  // x must have exactly 2N channels
  void init(std::mt19937& rng);
  void collect(ParamSet<T>& ps);
  std::int64_t param_count() const { return pointwise.param_count() + spatial.param_count(); }
};

// Recurrent state of a regulator, bound to the tape of the current forward
// pass. c is only populated by LSTM cells.
struct CellState {
  Var h;
  Var c;
  int t = 0;
};

// All-zero state of the requested geometry, step index 0.
template <typename T>
CellState init_state(Tape<T>& g, CellKind kind, std::int64_t n, std::int64_t width,
                     std::int64_t h, std::int64_t w);

// A recurrent cell whose affine maps are factorized convolutions. The raw
// step emits h = tanh(...) (or the gated equivalents); any batchnorm wrapping
// belongs to the caller.
template <typename T>
struct Cell {
  CellKind kind = CellKind::vanilla;
  std::int64_t width = 0;
  std::vector<FactorizedConv<T>> gates;

  Cell() = default;
  Cell(const std::string& name, CellKind kind, std::int64_t width);

  CellState make_state(Tape<T>& g, std::int64_t n, std::int64_t h, std::int64_t w) const {
    return init_state<T>(g, kind, n, width, h, w);
  }

  // x: (n, N, h, w) matching s.h. Returns the new hidden map and the advanced
  // state (state.h is the raw hidden output).
  std::pair<Var, CellState> step(Tape<T>& g, Var x, const CellState& s);

  void init(std::mt19937& rng);  // kaiming weights, zero biases, forget bias 1
  void collect(ParamSet<T>& ps);
  std::int64_t param_count() const;
};

}  // namespace regnet
