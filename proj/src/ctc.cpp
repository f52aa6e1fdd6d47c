// SPDX-License-Identifier: Apache-2.0

#include "csmoe/ctc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "csmoe/errors.hpp"

namespace csmoe {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  return a > b ? a + std::log1p(std::exp(b - a)) : b + std::log1p(std::exp(a - b));
}

void check_target(const Matrix& lp, std::span<const int> target, int blank) {
  if (blank < 0 || blank >= lp.cols()) throw ContractError("CTC blank id outside vocabulary");
  for (int label : target) {
    if (label == blank) throw ContractError("CTC target contains the blank symbol");
    if (label < 0 || label >= lp.cols()) {
      throw ContractError("CTC label " + std::to_string(label) + " outside vocabulary of " + std::to_string(lp.cols()));
    }
  }
  const int need = ctc_min_frames(target);
  if (lp.rows() < need) {
    throw FeasibilityError("CTC target of length " + std::to_string(target.size()) + " needs at least " +
                               std::to_string(need) + " frames, got T=" + std::to_string(lp.rows()),
                           lp.rows(), need);
  }
}

// Forward-backward tables over the blank-interleaved label sequence.
struct Lattice {
  std::vector<int> ext;  // blank, l1, blank, l2, ..., blank
  Matrix alpha;          // T x S, log space, includes emission at t
  Matrix beta;           // T x S, log space, includes emission at t
  double log_likelihood = kNegInf;
};

bool can_skip(const std::vector<int>& ext, int s, int blank) {
  return s >= 2 && ext[static_cast<std::size_t>(s)] != blank &&
         ext[static_cast<std::size_t>(s)] != ext[static_cast<std::size_t>(s - 2)];
}

Lattice run_forward(const Matrix& lp, std::span<const int> target, int blank, bool with_beta) {
  Lattice lat;
  lat.ext.reserve(2 * target.size() + 1);
  lat.ext.push_back(blank);
  for (int label : target) {
    lat.ext.push_back(label);
    lat.ext.push_back(blank);
  }
  const int T = lp.rows();
  const int S = static_cast<int>(lat.ext.size());
  if (T == 0) {
    lat.log_likelihood = target.empty() ? 0.0 : kNegInf;
    return lat;
  }
  lat.alpha = Matrix(T, S, kNegInf);
  lat.alpha(0, 0) = lp(0, lat.ext[0]);
  if (S > 1) lat.alpha(0, 1) = lp(0, lat.ext[1]);
  for (int t = 1; t < T; ++t) {
    for (int s = 0; s < S; ++s) {
      double a = lat.alpha(t - 1, s);
      if (s >= 1) a = log_add(a, lat.alpha(t - 1, s - 1));
      if (can_skip(lat.ext, s, blank)) a = log_add(a, lat.alpha(t - 1, s - 2));
      lat.alpha(t, s) = a == kNegInf ? kNegInf : a + lp(t, lat.ext[static_cast<std::size_t>(s)]);
    }
  }
  lat.log_likelihood = lat.alpha(T - 1, S - 1);
  if (S > 1) lat.log_likelihood = log_add(lat.log_likelihood, lat.alpha(T - 1, S - 2));
  if (!with_beta) return lat;

  lat.beta = Matrix(T, S, kNegInf);
  lat.beta(T - 1, S - 1) = lp(T - 1, lat.ext[static_cast<std::size_t>(S - 1)]);
  if (S > 1) lat.beta(T - 1, S - 2) = lp(T - 1, lat.ext[static_cast<std::size_t>(S - 2)]);
  for (int t = T - 2; t >= 0; --t) {
    for (int s = 0; s < S; ++s) {
      double b = lat.beta(t + 1, s);
      if (s + 1 < S) b = log_add(b, lat.beta(t + 1, s + 1));
      if (s + 2 < S && can_skip(lat.ext, s + 2, blank)) b = log_add(b, lat.beta(t + 1, s + 2));
      lat.beta(t, s) = b == kNegInf ? kNegInf : b + lp(t, lat.ext[static_cast<std::size_t>(s)]);
    }
  }
  return lat;
}

}  // namespace

void LogProbLattice::validate(double tol) const {
  for (int r = 0; r < log_probs.rows(); ++r) {
    const double lse = ad::log_sum_exp(log_probs.row_span(r));
    if (std::abs(lse) > tol) {
      throw ContractError("lattice row " + std::to_string(r) + " is not normalized (log-sum-exp " +
                          std::to_string(lse) + ")");
    }
  }
}

int ctc_min_frames(std::span<const int> target) {
  int need = static_cast<int>(target.size());
  for (std::size_t i = 1; i < target.size(); ++i)
    if (target[i] == target[i - 1]) ++need;
  return need;
}

double ctc_loss(const LogProbLattice& lattice, std::span<const int> target) {
  check_target(lattice.log_probs, target, lattice.blank_id);
  return -run_forward(lattice.log_probs, target, lattice.blank_id, false).log_likelihood;
}

ad::Var ctc_loss(ad::Var log_probs, std::span<const int> target, int blank_id) {
  const Matrix& lp = log_probs.value();
  check_target(lp, target, blank_id);
  ad::Tape& tape = *log_probs.tape;
  Lattice lat = run_forward(lp, target, blank_id, tape.grad_enabled());
  const double nll = -lat.log_likelihood;
  return tape.record("ctc_loss", Matrix::scalar(nll), {log_probs},
                     [ix = log_probs.id, lat = std::move(lat)](ad::Tape& tp, int self) {
                       const double g = tp.grad(self)[0];
                       const Matrix& lp2 = tp.value(ix);
                       Matrix& gx = tp.grad(ix);
                       const int T = lp2.rows();
                       const int S = static_cast<int>(lat.ext.size());
                       // d nll / d lp(t,k) = -sum_{s: ext[s]=k} exp(alpha+beta-lp(t,k)-logP)
                       std::vector<double> occ(static_cast<std::size_t>(lp2.cols()));
                       for (int t = 0; t < T; ++t) {
                         std::fill(occ.begin(), occ.end(), kNegInf);
                         for (int s = 0; s < S; ++s) {
                           const double a = lat.alpha(t, s), b = lat.beta(t, s);
                           if (a == kNegInf || b == kNegInf) continue;
                           const int k = lat.ext[static_cast<std::size_t>(s)];
                           occ[static_cast<std::size_t>(k)] = log_add(occ[static_cast<std::size_t>(k)], a + b);
                         }
                         for (int k = 0; k < lp2.cols(); ++k) {
                           const double o = occ[static_cast<std::size_t>(k)];
                           if (o == kNegInf) continue;
                           gx(t, k) -= g * std::exp(o - lp2(t, k) - lat.log_likelihood);
                         }
                       }
                     });
}

std::vector<int> ctc_collapse(std::span<const int> frame_labels, int blank_id) {
  std::vector<int> out;
  int prev = -1;
  for (int label : frame_labels) {
    if (label != prev && label != blank_id) out.push_back(label);
    prev = label;
  }
  return out;
}

double ctc_brute_force(const LogProbLattice& lattice, std::span<const int> target) {
  const Matrix& lp = lattice.log_probs;
  const int T = lp.rows();
  const int V = lp.cols();
  double count = 1.0;
  for (int t = 0; t < T; ++t) {
    count *= V;
    if (count > 1e7) throw SizeError("ctc_brute_force: |V|^T exceeds 1e7");
  }
  std::vector<double> matches;
  std::vector<int> labels(static_cast<std::size_t>(T), 0);
  std::vector<int> target_vec(target.begin(), target.end());
  while (true) {
    if (ctc_collapse(labels, lattice.blank_id) == target_vec) {
      double s = 0.0;
      for (int t = 0; t < T; ++t) s += lp(t, labels[static_cast<std::size_t>(t)]);
      matches.push_back(s);
    }
    int pos = T - 1;
    while (pos >= 0 && ++labels[static_cast<std::size_t>(pos)] == V) {
      labels[static_cast<std::size_t>(pos)] = 0;
      --pos;
    }
    if (pos < 0) break;
  }
  if (matches.empty()) return std::numeric_limits<double>::infinity();
  return -ad::log_sum_exp(matches);
}

std::vector<int> ctc_greedy_decode(const LogProbLattice& lattice) {
  const Matrix& lp = lattice.log_probs;
  std::vector<int> best(static_cast<std::size_t>(lp.rows()));
  for (int t = 0; t < lp.rows(); ++t) {
    int arg = 0;
    for (int k = 1; k < lp.cols(); ++k)
      if (lp(t, k) > lp(t, arg)) arg = k;
    best[static_cast<std::size_t>(t)] = arg;
  }
  return ctc_collapse(best, lattice.blank_id);
}

}  // namespace csmoe
