// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "csmoe/autodiff.hpp"
#include "csmoe/params.hpp"

namespace csmoe {

// Builds a scalar loss on the given tape from the current parameter values.
// Must be deterministic.
using LossBuilder = std::function<ad::Var(ad::Tape&, ParamStore&)>;

struct ParamGradCheck {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::vector<double> analytic_grad;
  std::vector<double> numeric_grad;
};

// Parameters sharing a name prefix ("enc.layer0.adapter_cn.w_up" belongs to
// "enc.layer0.adapter_cn"), compared as whole vectors:
// ||a - n|| / max(||a||, ||n||, 1e-8).
struct GroupGradCheck {
  std::string group;
  double rel_error = 0.0;
  double worst_entry_error = 0.0;
  std::size_t scalars = 0;
};

struct GradCheckReport {
  std::vector<ParamGradCheck> params;  // one entry per parameter, sorted by name

  double worst() const;
  bool passed(double tolerance) const { return worst() < tolerance; }
  std::vector<GroupGradCheck> groups() const;
};

std::string parameter_group(const std::string& name);

// |a - b| / max(|a|, |b|, 1e-8)
double relative_error(double a, double b);

// Compares the tape gradient of `loss` against central differences
// (f(θ+h) - f(θ-h)) / 2h for every scalar of every parameter. The optional
// hook runs after the analytic backward pass and may alter the gradients
// (used to validate the checker itself). Parameter values are restored.
GradCheckReport finite_diff_check(const LossBuilder& loss, ParamStore& params, double h = 1e-5,
                                  const std::function<void(ParamStore&)>& after_backward = {});

}  // namespace csmoe
