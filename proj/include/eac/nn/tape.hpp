#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "eac/nn/tensor.hpp"

namespace eac::nn {

struct Parameter {
  std::string name;
  Tensor value;
  bool trainable = true;
};

// Parameter name -> gradient, ordered so iteration is deterministic.
using GradientMap = std::map<std::string, Tensor>;

class Tape;

// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  std::size_t id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// The compute record: an append-only log of primitive applications.
// backward() replays it in reverse once; afterwards the tape is consumed.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  // Leaf bound to a parameter; it requires a gradient iff the parameter is
  // trainable.
  Var param(const Parameter& p);
  // Named leaf, used for gradient checks on raw inputs.
  Var leaf(std::string name, Tensor value, bool requires_grad = true);

  // Records a primitive result. `fn` is only stored when some input needs a
  // gradient. Throws NumericError if `value` has non-finite entries.
  Var record(const char* op, Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);
  Var record(const char* op, Tensor value, std::span<const Var> inputs, BackwardFn fn);

  // Reverse-mode accumulation from a scalar loss. Every trainable leaf gets
  // an entry; leaves off the loss path get zeros.
  GradientMap backward(Var loss);

  // Gradient accumulator for node `id` during backward, or nullptr when that
  // node does not need a gradient.
  Tensor* grad_slot(std::size_t id);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  // Primitive name ("leaf" or "constant" for inputs) and operand ids.
  const std::string& op(std::size_t id) const { return nodes_[id].op; }
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_[id].inputs; }
  bool consumed() const { return consumed_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool has_grad = false;
    std::string leaf_name;
    BackwardFn backward;
    std::string op;
    std::vector<std::size_t> inputs;
  };

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

}  // namespace eac::nn
