// SPDX-License-Identifier: Apache-2.0

#include "csmoe/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "csmoe/errors.hpp"

namespace csmoe::ad {

const Matrix& Var::value() const {
  if (!valid()) throw ContractError("use of an unbound Var");
  return tape->value(id);
}

double Var::scalar() const {
  const Matrix& v = value();
  if (v.rows() != 1 || v.cols() != 1) throw ContractError("Var is not scalar: " + v.shape_string());
  return v[0];
}

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::constant(Matrix value) {
  if (!value.all_finite()) throw NumericalError("constant contains non-finite entries");
  Node n;
  n.op = "constant";
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::param(Parameter& p) {
  if (!grad_enabled_) {
    Node n;
    n.op = "param";
    n.value = p.value;
    return push(std::move(n));
  }
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var{this, it->second};
  if (!p.value.all_finite()) throw NumericalError("parameter " + p.name + " contains non-finite entries");
  Node n;
  n.op = "param";
  n.value = p.value;
  n.requires_grad = true;
  n.param = &p;
  Var v = push(std::move(n));
  param_nodes_[&p] = v.id;
  return v;
}

Var Tape::record(const char* op, Matrix value, std::initializer_list<Var> inputs, BackwardFn fn) {
  return record(op, std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(fn));
}

Var Tape::record(const char* op, Matrix value, std::span<const Var> inputs, BackwardFn fn) {
  if (!value.all_finite()) throw NumericalError(std::string(op) + " produced non-finite values");
  if (backward_done_) throw StateError("tape already differentiated; reset() before recording");
  Node n;
  n.op = op;
  n.value = std::move(value);
  if (grad_enabled_) {
    for (const Var& in : inputs) {
      if (in.tape != this) throw ContractError(std::string(op) + ": input belongs to a different tape");
      n.requires_grad = n.requires_grad || requires_grad(in.id);
    }
    if (n.requires_grad) n.backward = std::move(fn);
  }
  return push(std::move(n));
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw ContractError("backward: loss belongs to a different tape");
  if (backward_done_) throw StateError("backward called twice without reset");
  if (!grad_enabled_) throw ContractError("backward on a tape without gradient tracking");
  const Matrix& lv = value(loss.id);
  if (lv.rows() != 1 || lv.cols() != 1) throw ContractError("backward: loss must be scalar, got " + lv.shape_string());
  backward_done_ = true;
  visit_order_.clear();
  for (int i = 0; i <= loss.id; ++i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.requires_grad) n.grad = Matrix(n.value.rows(), n.value.cols());
  }
  if (!requires_grad(loss.id)) return;
  grad(loss.id)[0] = 1.0;
  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.requires_grad) continue;
    visit_order_.push_back(i);
    if (n.backward) n.backward(*this, i);
  }
  for (int i = 0; i <= loss.id; ++i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.param != nullptr) n.param->grad += n.grad;
  }
}

void Tape::reset() {
  nodes_.clear();
  param_nodes_.clear();
  visit_order_.clear();
  backward_done_ = false;
}

std::vector<const char*> Tape::ops() const {
  std::vector<const char*> out;
  out.reserve(nodes_.size());
  for (const auto& n : nodes_) out.push_back(n.op);
  return out;
}

namespace {

Tape& tape_of(std::initializer_list<Var> vars) {
  Tape* t = nullptr;
  for (const Var& v : vars) {
    if (!v.valid()) throw ContractError("primitive received an unbound Var");
    if (t == nullptr) t = v.tape;
    if (v.tape != t) throw ContractError("primitive inputs live on different tapes");
  }
  return *t;
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " + b.shape_string());
  }
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = tape_of({a, b});
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.rows()) {
    throw DimensionError("matmul: cannot multiply " + av.shape_string() + " by " + bv.shape_string());
  }
  return t.record("matmul", csmoe::matmul(av, bv), {a, b}, [ia = a.id, ib = b.id](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    if (tp.requires_grad(ia)) matmul_nt_acc(g, tp.value(ib), tp.grad(ia));
    if (tp.requires_grad(ib)) matmul_tn_acc(tp.value(ia), g, tp.grad(ib));
  });
}

Var matmul_nt(Var a, Var b) {
  Tape& t = tape_of({a, b});
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.cols()) {
    throw DimensionError("matmul_nt: cannot multiply " + av.shape_string() + " by transpose of " + bv.shape_string());
  }
  Matrix out(av.rows(), bv.rows());
  matmul_nt_acc(av, bv, out);
  return t.record("matmul_nt", std::move(out), {a, b}, [ia = a.id, ib = b.id](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    if (tp.requires_grad(ia)) matmul_acc(g, tp.value(ib), tp.grad(ia));
    if (tp.requires_grad(ib)) matmul_tn_acc(g, tp.value(ia), tp.grad(ib));
  });
}

Var add(Var a, Var b) {
  Tape& t = tape_of({a, b});
  require_same_shape(a.value(), b.value(), "add");
  return t.record("add", a.value() + b.value(), {a, b}, [ia = a.id, ib = b.id](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    if (tp.requires_grad(ia)) tp.grad(ia) += g;
    if (tp.requires_grad(ib)) tp.grad(ib) += g;
  });
}

Var sub(Var a, Var b) {
  Tape& t = tape_of({a, b});
  require_same_shape(a.value(), b.value(), "sub");
  return t.record("sub", a.value() - b.value(), {a, b}, [ia = a.id, ib = b.id](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    if (tp.requires_grad(ia)) tp.grad(ia) += g;
    if (tp.requires_grad(ib)) tp.grad(ib) -= g;
  });
}

Var scale(Var a, double s) {
  Tape& t = tape_of({a});
  return t.record("scale", a.value() * s, {a}, [ia = a.id, s](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    Matrix& ga = tp.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
  });
}

Var hadamard(Var a, Var b) {
  Tape& t = tape_of({a, b});
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  require_same_shape(av, bv, "hadamard");
  Matrix out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return t.record("hadamard", std::move(out), {a, b}, [ia = a.id, ib = b.id](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    if (tp.requires_grad(ia)) {
      Matrix& ga = tp.grad(ia);
      const Matrix& bv2 = tp.value(ib);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv2[i];
    }
    if (tp.requires_grad(ib)) {
      Matrix& gb = tp.grad(ib);
      const Matrix& av2 = tp.value(ia);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av2[i];
    }
  });
}

Var add_row(Var x, Var bias) {
  Tape& t = tape_of({x, bias});
  const Matrix& xv = x.value();
  const Matrix& bv = bias.value();
  if (bv.rows() != 1 || bv.cols() != xv.cols()) {
    throw DimensionError("add_row: bias " + bv.shape_string() + " does not broadcast over " + xv.shape_string());
  }
  Matrix out = xv;
  for (int r = 0; r < out.rows(); ++r)
    for (int c = 0; c < out.cols(); ++c) out(r, c) += bv[static_cast<std::size_t>(c)];
  return t.record("add_row", std::move(out), {x, bias}, [ix = x.id, ib = bias.id](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    if (tp.requires_grad(ix)) tp.grad(ix) += g;
    if (tp.requires_grad(ib)) {
      Matrix& gb = tp.grad(ib);
      for (int r = 0; r < g.rows(); ++r)
        for (int c = 0; c < g.cols(); ++c) gb[static_cast<std::size_t>(c)] += g(r, c);
    }
  });
}

Var scale_rows(Var x, Var w) {
  Tape& t = tape_of({x, w});
  const Matrix& xv = x.value();
  const Matrix& wv = w.value();
  if (wv.cols() != 1 || wv.rows() != xv.rows()) {
    throw DimensionError("scale_rows: weights " + wv.shape_string() + " do not match " + xv.shape_string());
  }
  Matrix out = xv;
  for (int r = 0; r < out.rows(); ++r)
    for (int c = 0; c < out.cols(); ++c) out(r, c) *= wv(r, 0);
  return t.record("scale_rows", std::move(out), {x, w}, [ix = x.id, iw = w.id](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    const Matrix& xv2 = tp.value(ix);
    const Matrix& wv2 = tp.value(iw);
    if (tp.requires_grad(ix)) {
      Matrix& gx = tp.grad(ix);
      for (int r = 0; r < g.rows(); ++r)
        for (int c = 0; c < g.cols(); ++c) gx(r, c) += g(r, c) * wv2(r, 0);
    }
    if (tp.requires_grad(iw)) {
      Matrix& gw = tp.grad(iw);
      for (int r = 0; r < g.rows(); ++r) {
        double s = 0.0;
        for (int c = 0; c < g.cols(); ++c) s += g(r, c) * xv2(r, c);
        gw(r, 0) += s;
      }
    }
  });
}

Var relu(Var x) {
  Tape& t = tape_of({x});
  Matrix out = x.value();
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return t.record("relu", std::move(out), {x}, [ix = x.id](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    const Matrix& xv = tp.value(ix);
    Matrix& gx = tp.grad(ix);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xv[i] > 0.0) gx[i] += g[i];
  });
}

Var transpose(Var x) {
  Tape& t = tape_of({x});
  return t.record("transpose", x.value().transposed(), {x}, [ix = x.id](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    Matrix& gx = tp.grad(ix);
    for (int r = 0; r < g.rows(); ++r)
      for (int c = 0; c < g.cols(); ++c) gx(c, r) += g(r, c);
  });
}

Var slice_cols(Var x, int begin, int count) {
  Tape& t = tape_of({x});
  const Matrix& xv = x.value();
  if (begin < 0 || count < 0 || begin + count > xv.cols()) {
    throw DimensionError("slice_cols: [" + std::to_string(begin) + ", +" + std::to_string(count) + ") out of " +
                         xv.shape_string());
  }
  Matrix out(xv.rows(), count);
  for (int r = 0; r < xv.rows(); ++r)
    for (int c = 0; c < count; ++c) out(r, c) = xv(r, begin + c);
  return t.record("slice_cols", std::move(out), {x}, [ix = x.id, begin](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    Matrix& gx = tp.grad(ix);
    for (int r = 0; r < g.rows(); ++r)
      for (int c = 0; c < g.cols(); ++c) gx(r, begin + c) += g(r, c);
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  Tape& t = *parts.front().tape;
  const int rows = parts.front().rows();
  int cols = 0;
  std::vector<int> ids;
  for (const Var& p : parts) {
    if (p.tape != &t) throw ContractError("concat_cols: inputs live on different tapes");
    if (p.rows() != rows) throw DimensionError("concat_cols: row mismatch " + p.value().shape_string());
    cols += p.cols();
    ids.push_back(p.id);
  }
  Matrix out(rows, cols);
  int off = 0;
  for (const Var& p : parts) {
    const Matrix& pv = p.value();
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < pv.cols(); ++c) out(r, off + c) = pv(r, c);
    off += pv.cols();
  }
  return t.record("concat_cols", std::move(out), parts, [ids](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    int off2 = 0;
    for (int id : ids) {
      const int w = tp.value(id).cols();
      if (tp.requires_grad(id)) {
        Matrix& gp = tp.grad(id);
        for (int r = 0; r < g.rows(); ++r)
          for (int c = 0; c < w; ++c) gp(r, c) += g(r, off2 + c);
      }
      off2 += w;
    }
  });
}

Var gather_rows(Var table, std::span<const int> ids) {
  Tape& t = tape_of({table});
  const Matrix& tv = table.value();
  Matrix out(static_cast<int>(ids.size()), tv.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= tv.rows()) {
      throw ContractError("gather_rows: id " + std::to_string(ids[i]) + " outside table of " +
                          std::to_string(tv.rows()) + " rows");
    }
    for (int c = 0; c < tv.cols(); ++c) out(static_cast<int>(i), c) = tv(ids[i], c);
  }
  return t.record("gather_rows", std::move(out), {table},
                  [it = table.id, rows = std::vector<int>(ids.begin(), ids.end())](Tape& tp, int self) {
                    const Matrix& g = tp.grad(self);
                    Matrix& gt = tp.grad(it);
                    for (std::size_t i = 0; i < rows.size(); ++i)
                      for (int c = 0; c < g.cols(); ++c) gt(rows[i], c) += g(static_cast<int>(i), c);
                  });
}

double log_sum_exp(std::span<const double> v) {
  if (v.empty()) return -std::numeric_limits<double>::infinity();
  const double m = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

Matrix softmax_cols(const Matrix& x) {
  if (x.rows() < 1) throw DimensionError("softmax_cols: need at least one row");
  Matrix y(x.rows(), x.cols());
  for (int c = 0; c < x.cols(); ++c) {
    double m = x(0, c);
    for (int r = 1; r < x.rows(); ++r) m = std::max(m, x(r, c));
    double s = 0.0;
    for (int r = 0; r < x.rows(); ++r) {
      y(r, c) = std::exp(x(r, c) - m);
      s += y(r, c);
    }
    for (int r = 0; r < x.rows(); ++r) y(r, c) /= s;
  }
  return y;
}

Matrix softmax_rows(const Matrix& x, bool causal) {
  if (causal && x.cols() < x.rows()) throw DimensionError("causal softmax needs cols >= rows: " + x.shape_string());
  Matrix y(x.rows(), x.cols());
  for (int r = 0; r < x.rows(); ++r) {
    const int n = causal ? r + 1 : x.cols();
    double m = x(r, 0);
    for (int c = 1; c < n; ++c) m = std::max(m, x(r, c));
    double s = 0.0;
    for (int c = 0; c < n; ++c) {
      y(r, c) = std::exp(x(r, c) - m);
      s += y(r, c);
    }
    for (int c = 0; c < n; ++c) y(r, c) /= s;
  }
  return y;
}

Matrix log_softmax_rows(const Matrix& x) {
  Matrix y(x.rows(), x.cols());
  for (int r = 0; r < x.rows(); ++r) {
    const double lse = log_sum_exp(x.row_span(r));
    for (int c = 0; c < x.cols(); ++c) y(r, c) = x(r, c) - lse;
  }
  return y;
}

Matrix layer_norm_rows(const Matrix& x, const Matrix& gamma, const Matrix& beta, double eps) {
  if (gamma.rows() != 1 || beta.rows() != 1 || gamma.cols() != x.cols() || beta.cols() != x.cols()) {
    throw DimensionError("layer_norm_rows: gamma " + gamma.shape_string() + " / beta " + beta.shape_string() +
                         " do not match " + x.shape_string());
  }
  if (!(eps > 0.0)) throw ContractError("layer_norm_rows: eps must be positive");
  const int d = x.cols();
  Matrix y(x.rows(), d);
  for (int r = 0; r < x.rows(); ++r) {
    double mu = 0.0;
    for (int c = 0; c < d; ++c) mu += x(r, c);
    mu /= d;
    double var = 0.0;
    for (int c = 0; c < d; ++c) var += (x(r, c) - mu) * (x(r, c) - mu);
    var /= d;
    const double inv = 1.0 / std::sqrt(var + eps);
    for (int c = 0; c < d; ++c) y(r, c) = gamma[static_cast<std::size_t>(c)] * (x(r, c) - mu) * inv + beta[static_cast<std::size_t>(c)];
  }
  return y;
}

Var softmax_cols(Var x) {
  Tape& t = tape_of({x});
  return t.record("softmax_cols", softmax_cols(x.value()), {x}, [ix = x.id](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    const Matrix& y = tp.value(self);
    Matrix& gx = tp.grad(ix);
    for (int c = 0; c < y.cols(); ++c) {
      double dot = 0.0;
      for (int r = 0; r < y.rows(); ++r) dot += g(r, c) * y(r, c);
      for (int r = 0; r < y.rows(); ++r) gx(r, c) += y(r, c) * (g(r, c) - dot);
    }
  });
}

Var softmax_rows(Var x, bool causal) {
  Tape& t = tape_of({x});
  return t.record("softmax_rows", softmax_rows(x.value(), causal), {x}, [ix = x.id](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    const Matrix& y = tp.value(self);
    Matrix& gx = tp.grad(ix);
    for (int r = 0; r < y.rows(); ++r) {
      double dot = 0.0;
      for (int c = 0; c < y.cols(); ++c) dot += g(r, c) * y(r, c);
      for (int c = 0; c < y.cols(); ++c) gx(r, c) += y(r, c) * (g(r, c) - dot);
    }
  });
}

Var log_softmax_rows(Var x) {
  Tape& t = tape_of({x});
  return t.record("log_softmax_rows", log_softmax_rows(x.value()), {x}, [ix = x.id](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    const Matrix& y = tp.value(self);
    Matrix& gx = tp.grad(ix);
    for (int r = 0; r < y.rows(); ++r) {
      double gs = 0.0;
      for (int c = 0; c < y.cols(); ++c) gs += g(r, c);
      for (int c = 0; c < y.cols(); ++c) gx(r, c) += g(r, c) - std::exp(y(r, c)) * gs;
    }
  });
}

Var layer_norm_rows(Var x, Var gamma, Var beta, double eps) {
  Tape& t = tape_of({x, gamma, beta});
  const Matrix& xv = x.value();
  Matrix y = layer_norm_rows(xv, gamma.value(), beta.value(), eps);
  const int d = xv.cols();
  // Normalized rows and inverse std are kept for the backward pass.
  Matrix xhat(xv.rows(), d);
  std::vector<double> inv(static_cast<std::size_t>(xv.rows()));
  for (int r = 0; r < xv.rows(); ++r) {
    double mu = 0.0;
    for (int c = 0; c < d; ++c) mu += xv(r, c);
    mu /= d;
    double var = 0.0;
    for (int c = 0; c < d; ++c) var += (xv(r, c) - mu) * (xv(r, c) - mu);
    var /= d;
    inv[static_cast<std::size_t>(r)] = 1.0 / std::sqrt(var + eps);
    for (int c = 0; c < d; ++c) xhat(r, c) = (xv(r, c) - mu) * inv[static_cast<std::size_t>(r)];
  }
  return t.record("layer_norm_rows", std::move(y), {x, gamma, beta},
                  [ix = x.id, ig = gamma.id, ib = beta.id, xhat = std::move(xhat), inv = std::move(inv)](Tape& tp,
                                                                                                        int self) {
                    const Matrix& g = tp.grad(self);
                    const Matrix& gam = tp.value(ig);
                    const int rows = g.rows(), d2 = g.cols();
                    if (tp.requires_grad(ig) || tp.requires_grad(ib)) {
                      for (int r = 0; r < rows; ++r)
                        for (int c = 0; c < d2; ++c) {
                          if (tp.requires_grad(ig)) tp.grad(ig)[static_cast<std::size_t>(c)] += g(r, c) * xhat(r, c);
                          if (tp.requires_grad(ib)) tp.grad(ib)[static_cast<std::size_t>(c)] += g(r, c);
                        }
                    }
                    if (!tp.requires_grad(ix)) return;
                    Matrix& gx = tp.grad(ix);
                    std::vector<double> dxhat(static_cast<std::size_t>(d2));
                    for (int r = 0; r < rows; ++r) {
                      double m1 = 0.0, m2 = 0.0;
                      for (int c = 0; c < d2; ++c) {
                        dxhat[static_cast<std::size_t>(c)] = g(r, c) * gam[static_cast<std::size_t>(c)];
                        m1 += dxhat[static_cast<std::size_t>(c)];
                        m2 += dxhat[static_cast<std::size_t>(c)] * xhat(r, c);
                      }
                      m1 /= d2;
                      m2 /= d2;
                      for (int c = 0; c < d2; ++c)
                        gx(r, c) += inv[static_cast<std::size_t>(r)] *
                                    (dxhat[static_cast<std::size_t>(c)] - m1 - xhat(r, c) * m2);
                    }
                  });
}

Var sum(Var x) {
  Tape& t = tape_of({x});
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return t.record("sum", Matrix::scalar(s), {x}, [ix = x.id](Tape& tp, int self) {
    const double g = tp.grad(self)[0];
    for (double& v : tp.grad(ix).data()) v += g;
  });
}

Var nll_mean(Var log_probs, std::span<const int> targets) {
  Tape& t = tape_of({log_probs});
  const Matrix& lp = log_probs.value();
  if (static_cast<int>(targets.size()) != lp.rows()) {
    throw DimensionError("nll_mean: " + std::to_string(targets.size()) + " targets for " + lp.shape_string());
  }
  if (targets.empty()) throw ContractError("nll_mean: empty target");
  double s = 0.0;
  for (std::size_t r = 0; r < targets.size(); ++r) {
    if (targets[r] < 0 || targets[r] >= lp.cols()) {
      throw ContractError("nll_mean: target id " + std::to_string(targets[r]) + " outside vocabulary of " +
                          std::to_string(lp.cols()));
    }
    s -= lp(static_cast<int>(r), targets[r]);
  }
  const double n = static_cast<double>(targets.size());
  return t.record("nll_mean", Matrix::scalar(s / n), {log_probs},
                  [ix = log_probs.id, tg = std::vector<int>(targets.begin(), targets.end()), n](Tape& tp, int self) {
                    const double g = tp.grad(self)[0];
                    Matrix& gx = tp.grad(ix);
                    for (std::size_t r = 0; r < tg.size(); ++r) gx(static_cast<int>(r), tg[r]) -= g / n;
                  });
}

}  // namespace csmoe::ad
