#include "regnet/convrnn.hpp"

namespace regnet {

const char* cell_kind_name(CellKind k) {
  switch (k) {
    case CellKind::vanilla: return "vanilla";
    case CellKind::gru: return "gru";
    case CellKind::lstm: return "lstm";
  }
  return "?";
}

CellKind cell_kind_from_name(const std::string& s) {
  if (s == "vanilla" || s == "rnn") return CellKind::vanilla;
  if (s == "gru") return CellKind::gru;
  if (s == "lstm") return CellKind::lstm;
  throw InvalidArgument("unknown cell kind '" + s + "' (expected vanilla|gru|lstm)");
}

template <typename T>
FactorizedConv<T>::FactorizedConv(const std::string& name, std::int64_t width_, bool with_bias)
    : pointwise(name + ".pointwise", 2 * width_, width_, 1, 1, 0, static_cast<int>(width_), false),
      spatial(name + ".spatial", width_, width_, 3, 1, 1, static_cast<int>(width_), with_bias),
      width(width_) {}

template <typename T>
Var FactorizedConv<T>::forward(Tape<T>& g, Var x) {
  if (g.shape(x).c != 2 * width) {
    throw InvalidArgument("factorized_conv: expected " + std::to_string(2 * width) +
                          " input channels, got " + std::to_string(g.shape(x).c));
  }
  return spatial.forward(g, pointwise.forward(g, x));
}

template <typename T>
void FactorizedConv<T>::init(std::mt19937& rng) {
  pointwise.init(rng);
  spatial.init(rng);
}

template <typename T>
void FactorizedConv<T>::collect(ParamSet<T>& ps) {
  pointwise.collect(ps);
  spatial.collect(ps);
}

template <typename T>
CellState init_state(Tape<T>& g, CellKind kind, std::int64_t n, std::int64_t width,
                     std::int64_t h, std::int64_t w) {
  CellState s;
  s.h = g.leaf(Tensor<T>(Shape{n, width, h, w}));
  if (kind == CellKind::lstm) s.c = g.leaf(Tensor<T>(Shape{n, width, h, w}));
  s.t = 0;
  return s;
}

namespace {
// Gate order within Cell::gates.
constexpr int kGruUpdate = 0, kGruReset = 1, kGruCandidate = 2;
constexpr int kLstmInput = 0, kLstmForget = 1, kLstmOutput = 2, kLstmCandidate = 3;
}  // namespace

template <typename T>
Cell<T>::Cell(const std::string& name, CellKind kind_, std::int64_t width_)
    : kind(kind_), width(width_) {
  switch (kind) {
    case CellKind::vanilla:
      gates.emplace_back(name + ".hidden", width, true);
      break;
    case CellKind::gru:
      gates.emplace_back(name + ".gate_update", width, true);
      gates.emplace_back(name + ".gate_reset", width, true);
      gates.emplace_back(name + ".candidate", width, true);
      break;
    case CellKind::lstm:
      gates.emplace_back(name + ".gate_input", width, true);
      gates.emplace_back(name + ".gate_forget", width, true);
      gates.emplace_back(name + ".gate_output", width, true);
      gates.emplace_back(name + ".candidate", width, true);
      break;
  }
}

template <typename T>
std::pair<Var, CellState> Cell<T>::step(Tape<T>& g, Var x, const CellState& s) {
  if (!s.h.valid()) throw InvalidArgument("cell step: state not initialized");
  if (!(g.shape(x) == g.shape(s.h))) {
    throw InvalidArgument("cell step: input " + g.shape(x).str() + " does not match state " +
                          g.shape(s.h).str());
  }
  CellState next;
  next.t = s.t + 1;
  switch (kind) {
    case CellKind::vanilla: {
      Var h = tanh(g, gates[0].forward(g, concat_channels(g, x, s.h)));
      next.h = h;
      return {h, next};
    }
    case CellKind::gru: {
      Var cat = concat_channels(g, x, s.h);
      Var z = sigmoid(g, gates[kGruUpdate].forward(g, cat));
      Var r = sigmoid(g, gates[kGruReset].forward(g, cat));
      Var cand = tanh(g, gates[kGruCandidate].forward(
                             g, concat_channels(g, x, ewise_mul(g, r, s.h))));
      // h = (1-z) .* H + z .* cand
      Var h = add(g, ewise_mul(g, affine(g, z, T(-1), T(1)), s.h), ewise_mul(g, z, cand));
      next.h = h;
      return {h, next};
    }
    case CellKind::lstm: {
      if (!s.c.valid()) throw InvalidArgument("lstm step: state lacks the memory map");
      Var cat = concat_channels(g, x, s.h);
      Var gi = sigmoid(g, gates[kLstmInput].forward(g, cat));
      Var gf = sigmoid(g, gates[kLstmForget].forward(g, cat));
      Var go = sigmoid(g, gates[kLstmOutput].forward(g, cat));
      Var cand = tanh(g, gates[kLstmCandidate].forward(g, cat));
      Var c_next = add(g, ewise_mul(g, gf, s.c), ewise_mul(g, gi, cand));
      Var h = ewise_mul(g, go, tanh(g, c_next));
      next.h = h;
      next.c = c_next;
      return {h, next};
    }
  }
  throw StateError("unreachable cell kind");
}

template <typename T>
void Cell<T>::init(std::mt19937& rng) {
  for (auto& f : gates) f.init(rng);
  if (kind == CellKind::lstm) gates[kLstmForget].spatial.bias->value.fill(T(1));
}

template <typename T>
void Cell<T>::collect(ParamSet<T>& ps) {
  for (auto& f : gates) f.collect(ps);
}

template <typename T>
std::int64_t Cell<T>::param_count() const {
  std::int64_t total = 0;
  for (const auto& f : gates) total += f.param_count();
  return total;
}

template struct FactorizedConv<float>;
template struct FactorizedConv<double>;
template struct Cell<float>;
template struct Cell<double>;
template CellState init_state<float>(Tape<float>&, CellKind, std::int64_t, std::int64_t,
                                     std::int64_t, std::int64_t);
template CellState init_state<double>(Tape<double>&, CellKind, std::int64_t, std::int64_t,
                                      std::int64_t, std::int64_t);

}  // namespace regnet
