// SPDX-License-Identifier: Apache-2.0

#include "csmoe/params.hpp"

#include <cmath>

#include "csmoe/errors.hpp"

namespace csmoe {

ParamStore::ParamStore(const ParamStore& other) {
  for (const auto& p : other.params_) add(p->name, p->value).grad = p->grad;
}

ParamStore& ParamStore::operator=(const ParamStore& other) {
  if (this != &other) {
    ParamStore copy(other);
    *this = std::move(copy);
  }
  return *this;
}

Parameter& ParamStore::add(const std::string& name, Matrix value) {
  if (name.empty()) throw ContractError("parameter name must be non-empty");
  if (index_.count(name)) throw ContractError("duplicate parameter name: " + name);
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->grad = Matrix(value.rows(), value.cols());
  p->value = std::move(value);
  Parameter* raw = p.get();
  params_.push_back(std::move(p));
  index_[name] = raw;
  return *raw;
}

Parameter& ParamStore::add_uniform(const std::string& name, int rows, int cols, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(rows));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix m(rows, cols);
  for (double& v : m.data()) v = dist(rng);
  return add(name, std::move(m));
}

Parameter& ParamStore::add_constant(const std::string& name, int rows, int cols, double v) {
  return add(name, Matrix(rows, cols, v));
}

Parameter& ParamStore::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter: " + name);
  return *it->second;
}

const Parameter& ParamStore::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter: " + name);
  return *it->second;
}

Parameter* ParamStore::find(const std::string& name) {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : it->second;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

std::size_t ParamStore::scalar_count_with_prefix(const std::string& prefix) const {
  std::size_t n = 0;
  for (const auto& [name, p] : index_)
    if (name.compare(0, prefix.size(), prefix) == 0) n += p->value.size();
  return n;
}

std::vector<Parameter*> ParamStore::all() {
  std::vector<Parameter*> out;
  out.reserve(index_.size());
  for (auto& [name, p] : index_) out.push_back(p);
  return out;
}

std::vector<const Parameter*> ParamStore::all() const {
  std::vector<const Parameter*> out;
  out.reserve(index_.size());
  for (const auto& [name, p] : index_) out.push_back(p);
  return out;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(index_.size());
  for (const auto& [name, p] : index_) out.push_back(name);
  return out;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p->grad.fill(0.0);
}

double ParamStore::grad_norm() const {
  double s = 0.0;
  for (const auto& [name, p] : index_)
    for (double g : p->grad.data()) s += g * g;
  return std::sqrt(s);
}

}  // namespace csmoe
