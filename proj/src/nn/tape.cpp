#include "eac/nn/tape.hpp"

#include "eac/error.hpp"

namespace eac::nn {

const Tensor& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::constant(Tensor value) {
  if (consumed_) throw ArgumentError("tape: record already consumed");
  nodes_.push_back(Node{std::move(value), {}, false, false, {}, {}, "constant", {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(const Parameter& p) { return leaf(p.name, p.value, p.trainable); }

Var Tape::leaf(std::string name, Tensor value, bool requires_grad) {
  if (consumed_) throw ArgumentError("tape: record already consumed");
  nodes_.push_back(Node{std::move(value), {}, requires_grad, false, std::move(name), {}, "leaf", {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(const char* op, Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
  return record(op, std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(fn));
}

Var Tape::record(const char* op, Tensor value, std::span<const Var> inputs, BackwardFn fn) {
  if (consumed_) throw ArgumentError("tape: record already consumed");
  if (!value.all_finite()) {
    throw NumericError(std::string(op) + ": non-finite output of shape " + shape_str(value.shape()));
  }
  bool needs = false;
  std::vector<std::size_t> ids;
  ids.reserve(inputs.size());
  for (const Var& v : inputs) {
    ids.push_back(v.id());
    if (v.tape() != this) throw ArgumentError(std::string(op) + ": operands recorded on different tapes");
    needs = needs || nodes_[v.id()].requires_grad;
  }
  nodes_.push_back(
      Node{std::move(value), {}, needs, false, {}, needs ? std::move(fn) : BackwardFn{}, op, std::move(ids)});
  return Var(this, nodes_.size() - 1);
}

Tensor* Tape::grad_slot(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return nullptr;
  if (!n.has_grad) {
    n.grad = Tensor(n.value.shape(), 0.0);
    n.has_grad = true;
  }
  return &n.grad;
}

GradientMap Tape::backward(Var loss) {
  if (consumed_) throw ArgumentError("backward: record already consumed");
  if (loss.tape() != this) throw ArgumentError("backward: loss belongs to another tape");
  if (loss.value().size() != 1) throw ArgumentError("backward: loss is not scalar, shape " + shape_str(loss.shape()));
  consumed_ = true;

  if (Tensor* g = grad_slot(loss.id())) (*g)[0] = 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad || !n.backward) continue;
    // Move the gradient out so the callback may allocate other slots freely.
    const Tensor g = std::move(n.grad);
    n.has_grad = false;
    n.backward(*this, g);
  }

  GradientMap grads;
  for (Node& n : nodes_) {
    if (n.leaf_name.empty() || !n.requires_grad) continue;
    Tensor g = n.has_grad ? std::move(n.grad) : Tensor(n.value.shape(), 0.0);
    auto [it, inserted] = grads.try_emplace(n.leaf_name, std::move(g));
    if (!inserted) {
      for (std::size_t k = 0; k < it->second.size(); ++k) it->second[k] += g[k];
    }
  }
  return grads;
}

}  // namespace eac::nn
