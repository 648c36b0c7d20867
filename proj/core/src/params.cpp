#include "xvmunet/params.hpp"

#include <cmath>

#include "xvmunet/errors.hpp"

namespace xvmunet {

void ParamStore::set(const std::string& name, Tensor value) { tensors_[name] = std::move(value); }

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw ContractError("unknown parameter '" + name + "'");
  return it->second;
}

Tensor& ParamStore::at(const std::string& name) {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw ContractError("unknown parameter '" + name + "'");
  return it->second;
}

std::size_t ParamStore::element_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : tensors_) n += t.size();
  return n;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(tensors_.size());
  for (const auto& [name, _] : tensors_) out.push_back(name);
  return out;
}

ParamStore ParamStore::zeros_like() const {
  ParamStore out;
  for (const auto& [name, t] : tensors_) out.set(name, Tensor(t.shape()));
  return out;
}

Var Binder::operator()(const std::string& name) {
  auto it = bound_.find(name);
  if (it != bound_.end()) return it->second;
  Var v = trainable_ ? tape_.leaf(params_.at(name)) : tape_.constant(params_.at(name));
  bound_.emplace(name, v);
  return v;
}

ParamStore Binder::gradients(const Gradients& grads) const {
  ParamStore out = params_.zeros_like();
  for (const auto& [name, var] : bound_) out.set(name, grads.of(var));
  return out;
}

Rng param_rng(std::uint64_t seed, const std::string& name) { return Rng(mix_seed(seed, hash_name(name))); }

void init_kaiming(ParamStore& store, const std::string& name, Shape shape, std::size_t fan_in, std::uint64_t seed) {
  Rng rng = param_rng(seed, name);
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  store.set(name, Tensor::uniform(std::move(shape), rng, -bound, bound));
}

void init_constant(ParamStore& store, const std::string& name, Shape shape, double value) {
  store.set(name, Tensor(std::move(shape), value));
}

}  // namespace xvmunet
