#pragma once

#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "regnet/tensor.hpp"

namespace regnet {

// Handle into a Tape. Only meaningful together with the tape that issued it.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// A trainable tensor: value, accumulated gradient and the optimizer's
// momentum buffer, all of identical shape, plus a hierarchical name that is
// unique within one network.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value, grad, momentum;

  Parameter() = default;
  Parameter(std::string n, Shape s) : name(std::move(n)), value(s), grad(s), momentum(s) {}
};

// Reverse-mode tape. Forward ops append nodes (value + pullback); backward
// replays the records once in reverse and deposits gradients on bound
// Parameters. One tape = one forward pass; reset() or a fresh tape starts
// the next.
template <typename T>
class Tape {
 public:
  // Invoked during backward with the node's own handle; reads grad(out) and
  // accumulates into grad_acc(input) for each input.
  using Pullback = std::function<void(Tape&, Var out)>;

  // When set, every recorded output is scanned and a NumericError is thrown
  // if a non-finite value appears.
  bool check_finite = true;

  Var leaf(Tensor<T> value);
  // Binds p's current value as a leaf. Repeated calls with the same pointer
  // return the same node, so weight sharing accumulates naturally.
  Var param(Parameter<T>& p);

  Var record(const char* op, Tensor<T> value, Pullback pullback);

  const Tensor<T>& value(Var v) const { return node(v.id).value; }
  const Shape& shape(Var v) const { return node(v.id).value.shape; }

  // Gradient of the last backward() w.r.t. node v (zeros if v is unreachable
  // from the loss).
  const Tensor<T>& grad(Var v) const;
  // Accumulation target used by pullbacks; allocates zeros on first touch.
  Tensor<T>& grad_acc(Var v);
  // True if no gradient ever reached v (cheap reachability probe).
  bool grad_untouched(Var v) const { return node(v.id).grad.empty(); }

  // Seeds d(loss)/d(loss) = 1, replays every record at or before loss once,
  // then writes gradients of all bound Parameters (zero for bound Parameters
  // the loss does not reach). Throws StateError on an empty tape or if
  // called twice without reset().
  void backward(Var loss);

  void reset();

  std::size_t num_nodes() const { return nodes_.size(); }
  bool backward_run() const { return backward_run_; }
  const std::string& op_name(Var v) const { return node(v.id).op; }

 private:
  struct Node {
    std::string op;
    Tensor<T> value;
    Tensor<T> grad;  // empty until touched
    Pullback pullback;
  };

  Node& node(int id) {
    if (id < 0 || id >= static_cast<int>(nodes_.size())) {
      throw StateError("tape: invalid node id " + std::to_string(id));
    }
    return nodes_[static_cast<std::size_t>(id)];
  }
  const Node& node(int id) const { return const_cast<Tape*>(this)->node(id); }

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter<T>*, int> param_lookup_;
  std::vector<std::pair<Parameter<T>*, int>> bindings_;
  bool backward_run_ = false;
  Tensor<T> zero_like_;  // scratch returned by grad() for untouched nodes
};

}  // namespace regnet
