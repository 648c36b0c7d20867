#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "xvmunet/params.hpp"

namespace xvmunet {

// Builds a single-element loss from parameters bound through the scope.
using LossFn = std::function<Var(const Scope&)>;

struct GradCheckEntry {
  std::string name;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;

  const GradCheckEntry& worst() const;
  bool passed(double tol) const { return max_rel_error <= tol; }
};

struct GradCheckOptions {
  std::size_t samples = 100;  // parameter entries checked
  double step = 1e-4;         // central difference step
  double floor = 1e-6;        // denominator floor of the relative error
  std::uint64_t seed = 1;
};

// |a - n| / max(|a|, |n|, floor)
double relative_error(double analytic, double numeric, double floor);

// Central differences on sampled entries. Sampling walks the tensors round-robin
// (random entry each visit) so every tensor is covered once samples >= tensor count.
GradCheckReport check_gradients(const ParamStore& params, const LossFn& loss, const GradCheckOptions& opts = {});

}  // namespace xvmunet
