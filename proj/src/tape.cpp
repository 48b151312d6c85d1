#include "regnet/tape.hpp"

namespace regnet {

template <typename T>
Var Tape<T>::leaf(Tensor<T> value) {
  return record("leaf", std::move(value), Pullback{});
}

template <typename T>
Var Tape<T>::param(Parameter<T>& p) {
  auto it = param_lookup_.find(&p);
  if (it != param_lookup_.end()) return Var{it->second};
  Var v = record(("param:" + p.name).c_str(), p.value, Pullback{});
  param_lookup_.emplace(&p, v.id);
  bindings_.emplace_back(&p, v.id);
  return v;
}

template <typename T>
Var Tape<T>::record(const char* op, Tensor<T> value, Pullback pullback) {
  if (check_finite && !value.all_finite()) {
    throw NumericError(std::string("non-finite value produced by op '") + op + "'");
  }
  nodes_.push_back(Node{op, std::move(value), Tensor<T>{}, std::move(pullback)});
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
const Tensor<T>& Tape<T>::grad(Var v) const {
  const Node& nd = node(v.id);
  if (!nd.grad.empty()) return nd.grad;
  auto* self = const_cast<Tape*>(this);
  self->zero_like_ = Tensor<T>(nd.value.shape);
  return zero_like_;
}

template <typename T>
Tensor<T>& Tape<T>::grad_acc(Var v) {
  Node& nd = node(v.id);
  if (nd.grad.empty()) nd.grad = Tensor<T>(nd.value.shape);
  return nd.grad;
}

template <typename T>
void Tape<T>::backward(Var loss) {
  if (nodes_.empty()) throw StateError("backward called before any forward operation");
  if (backward_run_) throw StateError("backward called twice on the same tape; reset() first");
  Node& ln = node(loss.id);
  if (ln.value.numel() != 1) {
    throw InvalidArgument("backward requires a scalar loss, got shape " + ln.value.shape.str());
  }
  backward_run_ = true;

  grad_acc(loss).data[0] = T(1);
  for (int id = loss.id; id >= 0; --id) {
    Node& nd = nodes_[static_cast<std::size_t>(id)];
    if (nd.grad.empty()) continue;  // unreachable from the loss
    if (nd.pullback) nd.pullback(*this, Var{id});
  }

  for (auto& [p, id] : bindings_) p->grad.zero();
  for (auto& [p, id] : bindings_) {
    const Node& nd = nodes_[static_cast<std::size_t>(id)];
    if (nd.grad.empty()) continue;
    for (std::size_t i = 0; i < p->grad.data.size(); ++i) p->grad.data[i] += nd.grad.data[i];
  }
}

template <typename T>
void Tape<T>::reset() {
  nodes_.clear();
  param_lookup_.clear();
  bindings_.clear();
  backward_run_ = false;
}

template class Tape<float>;
template class Tape<double>;

}  // namespace regnet
