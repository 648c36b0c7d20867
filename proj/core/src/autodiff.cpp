#include "xvmunet/autodiff.hpp"

#include "xvmunet/errors.hpp"

namespace xvmunet {

const Tensor& Var::value() const {
  if (!tape_) throw ContractError("use of an unbound Var");
  return tape_->value(id_);
}

bool Var::requires_grad() const { return tape_ && tape_->requires_grad(id_); }

bool GradSink::wants(const Var& v) const { return tape_.requires_grad(v.id()); }

std::span<double> GradSink::at(const Var& v) {
  auto& buf = grads_[v.id()];
  if (buf.empty()) buf.assign(tape_.value(v.id()).size(), 0.0);
  return buf;
}

Tensor Gradients::of(const Var& v) const {
  const Tensor& value = v.value();
  if (!reached(v)) return Tensor(value.shape());
  return Tensor(value.shape(), grads_[v.id()]);
}

Var Tape::leaf(Tensor value) {
  nodes_.push_back(Node{std::move(value), true, nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), false, nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::span<const Var> parents, Backward backward) {
  bool needs = false;
  for (const auto& p : parents) {
    if (&p.tape() != this) throw ContractError("operands recorded on different tapes");
    needs = needs || nodes_[p.id()].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), needs, needs ? std::move(backward) : nullptr});
  return Var(this, nodes_.size() - 1);
}

Gradients Tape::backward(const Var& loss) const {
  if (&loss.tape() != this) throw ContractError("loss was recorded on a different tape");
  if (loss.size() != 1) {
    throw ContractError("backward needs a scalar loss, got shape " + shape_str(loss.shape()));
  }
  Gradients out;
  out.grads_.resize(nodes_.size());
  if (!nodes_[loss.id()].requires_grad) return out;
  out.grads_[loss.id()] = {1.0};
  GradSink sink(*this, out.grads_);
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    const Node& node = nodes_[i];
    if (!node.backward || out.grads_[i].empty()) continue;
    // Parents always have smaller ids, so this buffer is never written while read.
    node.backward(out.grads_[i], sink);
  }
  return out;
}

}  // namespace xvmunet
