#include "xvmunet/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "xvmunet/errors.hpp"

namespace xvmunet {

namespace {

double loss_value(const ParamStore& params, const LossFn& loss) {
  Tape tape;
  Binder binder(tape, params, false);
  return loss(Scope(binder)).value().item();
}

}  // namespace

const GradCheckEntry& GradCheckReport::worst() const {
  if (entries.empty()) throw ContractError("gradient check report is empty");
  return *std::max_element(entries.begin(), entries.end(),
                           [](const auto& a, const auto& b) { return a.rel_error < b.rel_error; });
}

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport check_gradients(const ParamStore& params, const LossFn& loss, const GradCheckOptions& opts) {
  if (params.size() == 0) throw ContractError("check_gradients: no parameters");
  ParamStore analytic;
  {
    Tape tape;
    Binder binder(tape, params);
    const Var l = loss(Scope(binder));
    analytic = binder.gradients(tape.backward(l));
  }

  const auto names = params.names();
  Rng rng(opts.seed);
  ParamStore probe = params;
  GradCheckReport report;
  for (std::size_t k = 0; k < opts.samples; ++k) {
    const std::string& name = names[k % names.size()];
    Tensor& t = probe.at(name);
    const std::size_t idx = rng.below(t.size());
    const double orig = t[idx];
    t[idx] = orig + opts.step;
    const double up = loss_value(probe, loss);
    t[idx] = orig - opts.step;
    const double down = loss_value(probe, loss);
    t[idx] = orig;

    GradCheckEntry e;
    e.name = name;
    e.index = idx;
    e.analytic = analytic.at(name)[idx];
    e.numeric = (up - down) / (2.0 * opts.step);
    e.rel_error = relative_error(e.analytic, e.numeric, opts.floor);
    report.max_rel_error = std::max(report.max_rel_error, e.rel_error);
    report.entries.push_back(std::move(e));
  }
  return report;
}

}  // namespace xvmunet
