// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <vector>

#include "csmoe/autodiff.hpp"
#include "csmoe/matrix.hpp"

namespace csmoe {

// T x |V| log-probabilities plus the blank symbol.
struct LogProbLattice {
  Matrix log_probs;
  int blank_id = 0;

  // Throws ContractError unless every row log-sum-exps to 0 within `tol`.
  void validate(double tol = 1e-9) const;
};

// Minimum number of frames able to emit `target`: one per label plus one
// separating blank per adjacent equal pair.
int ctc_min_frames(std::span<const int> target);

// Negative log-likelihood of `target` summed over all alignments, via the
// log-space forward recursion. Raises FeasibilityError when T is too short
// and ContractError for blank or out-of-range labels.
double ctc_loss(const LogProbLattice& lattice, std::span<const int> target);

// Differentiable version; the backward pass uses forward-backward occupancies.
ad::Var ctc_loss(ad::Var log_probs, std::span<const int> target, int blank_id);

// Exhaustive enumeration of all |V|^T frame labelings. Returns +infinity when
// no labeling collapses to the target. SizeError above 1e7 labelings.
double ctc_brute_force(const LogProbLattice& lattice, std::span<const int> target);

// Frame argmax, merge repeats, drop blanks.
std::vector<int> ctc_greedy_decode(const LogProbLattice& lattice);

// Collapse rule applied to an explicit frame labeling.
std::vector<int> ctc_collapse(std::span<const int> frame_labels, int blank_id);

}  // namespace csmoe
