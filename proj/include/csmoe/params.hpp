// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "csmoe/matrix.hpp"

namespace csmoe {

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
};

// Named parameter store. Names are hierarchical ("enc.layer0.adapter_cn.w_up")
// and unique; iteration order is lexicographic so every traversal
// (checkpointing, gradient checks, optimizer updates) is deterministic.
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore& other);
  ParamStore& operator=(const ParamStore& other);
  ParamStore(ParamStore&&) noexcept = default;
  ParamStore& operator=(ParamStore&&) noexcept = default;

  Parameter& add(const std::string& name, Matrix value);
  // Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], fan_in = rows.
  Parameter& add_uniform(const std::string& name, int rows, int cols, std::mt19937_64& rng);
  Parameter& add_constant(const std::string& name, int rows, int cols, double v);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  Parameter* find(const std::string& name);

  std::size_t size() const { return params_.size(); }
  bool empty() const { return params_.empty(); }
  std::size_t scalar_count() const;
  std::size_t scalar_count_with_prefix(const std::string& prefix) const;

  // Sorted by name.
  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;
  std::vector<std::string> names() const;

  void zero_grad();
  double grad_norm() const;

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::map<std::string, Parameter*> index_;
};

}  // namespace csmoe
