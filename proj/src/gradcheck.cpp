// SPDX-License-Identifier: Apache-2.0

#include "csmoe/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "csmoe/errors.hpp"

namespace csmoe {

double GradCheckReport::worst() const {
  double w = 0.0;
  for (const auto& p : params) w = std::max(w, p.max_rel_error);
  return w;
}

std::string parameter_group(const std::string& name) {
  const auto dot = name.rfind('.');
  return dot == std::string::npos ? name : name.substr(0, dot);
}

std::vector<GroupGradCheck> GradCheckReport::groups() const {
  struct Acc {
    GroupGradCheck check;
    double diff_sq = 0.0, a_sq = 0.0, n_sq = 0.0;
  };
  std::map<std::string, Acc> acc;
  for (const auto& p : params) {
    auto& g = acc[parameter_group(p.name)];
    g.check.worst_entry_error = std::max(g.check.worst_entry_error, p.max_rel_error);
    g.check.scalars += p.analytic_grad.size();
    for (std::size_t i = 0; i < p.analytic_grad.size(); ++i) {
      const double a = p.analytic_grad[i], n = p.numeric_grad[i];
      g.diff_sq += (a - n) * (a - n);
      g.a_sq += a * a;
      g.n_sq += n * n;
    }
  }
  std::vector<GroupGradCheck> out;
  for (auto& [name, g] : acc) {
    g.check.group = name;
    g.check.rel_error = std::sqrt(g.diff_sq) / std::max({std::sqrt(g.a_sq), std::sqrt(g.n_sq), 1e-8});
    out.push_back(g.check);
  }
  return out;
}

double relative_error(double a, double b) {
  const double denom = std::max({std::abs(a), std::abs(b), 1e-8});
  return std::abs(a - b) / denom;
}

namespace {

double evaluate(const LossBuilder& loss, ParamStore& params, const std::string& probing) {
  try {
    ad::Tape tape(/*grad_enabled=*/false);
    const double v = loss(tape, params).scalar();
    if (!std::isfinite(v)) throw NumericalError("non-finite loss");
    return v;
  } catch (const NumericalError& e) {
    throw NumericalError("finite-difference probe of " + probing + ": " + e.what());
  }
}

}  // namespace

GradCheckReport finite_diff_check(const LossBuilder& loss, ParamStore& params, double h,
                                  const std::function<void(ParamStore&)>& after_backward) {
  if (!(h > 0.0)) throw ContractError("finite_diff_check: step must be positive");
  GradCheckReport report;
  if (params.empty()) return report;

  params.zero_grad();
  {
    ad::Tape tape;
    ad::Var l = loss(tape, params);
    if (!std::isfinite(l.scalar())) throw NumericalError("finite_diff_check: non-finite loss");
    tape.backward(l);
  }
  if (after_backward) after_backward(params);

  for (Parameter* p : params.all()) {
    ParamGradCheck check;
    check.name = p->name;
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double orig = p->value[i];
      p->value[i] = orig + h;
      const double fp = evaluate(loss, params, p->name);
      p->value[i] = orig - h;
      const double fm = evaluate(loss, params, p->name);
      p->value[i] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      check.analytic_grad.push_back(p->grad[i]);
      check.numeric_grad.push_back(numeric);
      const double err = relative_error(p->grad[i], numeric);
      if (err > check.max_rel_error || i == 0) {
        check.max_rel_error = err;
        check.worst_index = i;
        check.analytic = p->grad[i];
        check.numeric = numeric;
      }
    }
    report.params.push_back(check);
  }
  return report;
}

}  // namespace csmoe
