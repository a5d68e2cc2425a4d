// SPDX-License-Identifier: Apache-2.0
//
// Finite-difference verification of every differentiable primitive and of
// the end-to-end predictor gradient.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace strpm {

struct GradCheckEntry {
  std::string name;
  double err = 0.0;
  double tol = 0.0;
  bool pass() const { return err < tol; }
};

// Central-difference checks (eps = 1e-5) of each op against its backward
// rule on random inputs, both through the data and through the parameters
// where the op has them. Tolerance 1e-4.
std::vector<GradCheckEntry> gradcheck_primitives(std::uint64_t seed);

// Loss = MSE of a one-step rollout of a 2-layer, 4-channel model on 8x8
// frames; checks d(loss)/d(param) for every parameter element and
// d(loss)/d(input frame). Tolerance 1e-3.
GradCheckEntry gradcheck_end_to_end(std::uint64_t seed);

}  // namespace strpm
