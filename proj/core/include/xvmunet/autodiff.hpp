#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "xvmunet/tensor.hpp"

namespace xvmunet {

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  bool valid() const { return tape_ != nullptr; }
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
  bool requires_grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Gradient accumulators handed to backward closures. Buffers are created on
// first access so nodes that never receive gradient stay empty.
class GradSink {
 public:
  bool wants(const Var& v) const;
  std::span<double> at(const Var& v);

 private:
  friend class Tape;
  GradSink(const Tape& tape, std::vector<std::vector<double>>& grads) : tape_(tape), grads_(grads) {}

  const Tape& tape_;
  std::vector<std::vector<double>>& grads_;
};

class Gradients {
 public:
  // Zeros when the node was not reached from the loss.
  Tensor of(const Var& v) const;
  bool reached(const Var& v) const { return v.id() < grads_.size() && !grads_[v.id()].empty(); }

 private:
  friend class Tape;
  std::vector<std::vector<double>> grads_;
};

// Append-only record of operations. Nodes are stored in creation order, which is
// a topological order because a node can only reference existing nodes.
class Tape {
 public:
  using Backward = std::function<void(std::span<const double> grad_out, GradSink& sink)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Differentiable input (a parameter or an input being checked).
  Var leaf(Tensor value);
  // Input that never receives gradient.
  Var constant(Tensor value);
  // Result of an operation. `backward` may be dropped when no parent needs gradient.
  Var record(Tensor value, std::span<const Var> parents, Backward backward);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Reverse sweep from a single-element loss. The tape itself is not modified, so
  // repeated calls give bit-identical results.
  Gradients backward(const Var& loss) const;

 private:
  struct Node {
    Tensor value;
    bool requires_grad = false;
    Backward backward;
  };

  std::deque<Node> nodes_;
};

}  // namespace xvmunet
