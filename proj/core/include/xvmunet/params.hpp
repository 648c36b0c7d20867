#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "xvmunet/autodiff.hpp"
#include "xvmunet/tensor.hpp"

namespace xvmunet {

// Named parameter set, ordered by name so every traversal is deterministic.
class ParamStore {
 public:
  void set(const std::string& name, Tensor value);
  const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);
  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }

  std::size_t size() const { return tensors_.size(); }
  std::size_t element_count() const;
  std::vector<std::string> names() const;

  auto begin() const { return tensors_.begin(); }
  auto end() const { return tensors_.end(); }
  auto begin() { return tensors_.begin(); }
  auto end() { return tensors_.end(); }

  // Same names and shapes, all zeros.
  ParamStore zeros_like() const;

  friend bool operator==(const ParamStore&, const ParamStore&) = default;

 private:
  std::map<std::string, Tensor> tensors_;
};

// Binds ParamStore entries to tape leaves on first use.
class Binder {
 public:
  // With trainable == false parameters become constants and nothing is kept for backward.
  Binder(Tape& tape, const ParamStore& params, bool trainable = true)
      : tape_(tape), params_(params), trainable_(trainable) {}

  Var operator()(const std::string& name);
  Tape& tape() const { return tape_; }

  // Gradient per stored parameter; parameters never bound get zeros.
  ParamStore gradients(const Gradients& grads) const;

 private:
  Tape& tape_;
  const ParamStore& params_;
  bool trainable_;
  std::map<std::string, Var> bound_;
};

// Hierarchical name prefix over a Binder: scope.sub("block0")("weight") looks up
// "<prefix>.block0.weight".
class Scope {
 public:
  Scope(Binder& binder, std::string prefix = {}) : binder_(&binder), prefix_(std::move(prefix)) {}

  Var operator()(const std::string& name) const { return (*binder_)(qualify(name)); }
  Scope sub(const std::string& name) const { return Scope(*binder_, qualify(name)); }
  Tape& tape() const { return binder_->tape(); }
  const std::string& prefix() const { return prefix_; }
  std::string qualify(const std::string& name) const { return prefix_.empty() ? name : prefix_ + "." + name; }

 private:
  Binder* binder_;
  std::string prefix_;
};

inline std::string join_name(const std::string& prefix, const std::string& name) {
  return prefix.empty() ? name : prefix + "." + name;
}

// Initializers. Each parameter draws from its own stream seeded by (seed, name),
// so a tensor's initial value does not depend on which other tensors exist.
Rng param_rng(std::uint64_t seed, const std::string& name);
// Uniform in +-1/sqrt(fan_in) (Kaiming-uniform with a = sqrt 5).
void init_kaiming(ParamStore& store, const std::string& name, Shape shape, std::size_t fan_in, std::uint64_t seed);
void init_constant(ParamStore& store, const std::string& name, Shape shape, double value);

}  // namespace xvmunet
