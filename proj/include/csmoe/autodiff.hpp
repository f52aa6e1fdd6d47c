// SPDX-License-Identifier: Apache-2.0
//
// Minimal tape-based reverse-mode differentiation over dense matrices.
//
// Every primitive evaluates eagerly, stores its value on the tape and records
// a closure that maps the output gradient onto the gradients of its inputs.
// backward() walks the tape in exact reverse execution order and finally adds
// leaf gradients into the Parameter::grad of every registered parameter.

#pragma once

#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

#include "csmoe/matrix.hpp"
#include "csmoe/params.hpp"

namespace csmoe::ad {

class Tape;

// Handle to a value recorded on a tape. Cheap to copy; only valid while the
// owning tape is alive and has not been reset.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Matrix& value() const;
  int rows() const { return value().rows(); }
  int cols() const { return value().cols(); }
  double scalar() const;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int self)>;

  // With grad disabled the tape only evaluates: parameters become constants
  // and no closures are kept.
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  // Repeated registration of the same parameter returns the same leaf.
  Var param(Parameter& p);

  // Records a primitive. `inputs` are the ids the closure may read or write
  // gradients for; the node requires grad iff any input does. Throws
  // NumericalError if `value` holds NaN or Inf.
  Var record(const char* op, Matrix value, std::initializer_list<Var> inputs, BackwardFn fn);
  Var record(const char* op, Matrix value, std::span<const Var> inputs, BackwardFn fn);

  const Matrix& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
  // Only meaningful inside backward closures.
  Matrix& grad(int id) { return nodes_[static_cast<std::size_t>(id)].grad; }
  const Matrix& grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }

  // Seeds d loss / d loss = 1 and accumulates into Parameter::grad.
  // Throws ContractError for a non-scalar loss and StateError when called a
  // second time without reset().
  void backward(Var loss);
  void reset();

  bool grad_enabled() const { return grad_enabled_; }
  bool backward_done() const { return backward_done_; }
  std::size_t size() const { return nodes_.size(); }
  // Op names in execution order, and the order in which the last backward
  // visited nodes.
  std::vector<const char*> ops() const;
  const std::vector<int>& visit_order() const { return visit_order_; }

 private:
  struct Node {
    const char* op = "";
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    Parameter* param = nullptr;
    BackwardFn backward;
  };

  Var push(Node node);

  bool grad_enabled_;
  bool backward_done_ = false;
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, int> param_nodes_;
  std::vector<int> visit_order_;
};

// ---- primitives -----------------------------------------------------------

Var matmul(Var a, Var b);
// a * b^T without materializing the transpose.
Var matmul_nt(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var scale(Var a, double s);
Var hadamard(Var a, Var b);
// x (n x m) + bias (1 x m) broadcast over rows.
Var add_row(Var x, Var bias);
// x (n x m) with row r multiplied by w(r, 0); w is n x 1.
Var scale_rows(Var x, Var w);
Var relu(Var x);
Var transpose(Var x);
Var slice_cols(Var x, int begin, int count);
Var concat_cols(std::span<const Var> parts);
// Rows of `table` selected by ids.
Var gather_rows(Var table, std::span<const int> ids);

// Per-column softmax over rows (time axis).
Var softmax_cols(Var x);
// Per-row softmax; with causal=true entry (i, j>i) is excluded (weight 0).
Var softmax_rows(Var x, bool causal = false);
Var log_softmax_rows(Var x);
// Row-wise layer norm with population variance and eps inside the root.
Var layer_norm_rows(Var x, Var gamma, Var beta, double eps = 1e-5);

// Sum of all entries as a 1x1 node.
Var sum(Var x);
// Mean over rows of -x(r, targets[r]); x is typically log-probabilities.
Var nll_mean(Var log_probs, std::span<const int> targets);

// Eager versions used by forward oracles and non-differentiable code paths.
Matrix softmax_cols(const Matrix& x);
Matrix softmax_rows(const Matrix& x, bool causal = false);
Matrix log_softmax_rows(const Matrix& x);
Matrix layer_norm_rows(const Matrix& x, const Matrix& gamma, const Matrix& beta, double eps = 1e-5);

double log_sum_exp(std::span<const double> v);

}  // namespace csmoe::ad
