#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "eac/nn/tape.hpp"

namespace eac::nn {

// Builds a scalar loss on `tape` from the given leaves (same order as the
// inputs passed to grad_check).
using LossBuilder = std::function<Var(Tape& tape, const std::vector<Var>& leaves)>;

struct GradCheckInput {
  std::string name;
  Tensor value;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_input;
  std::size_t worst_index = 0;
  std::size_t coordinates = 0;
};

// Compares reverse-mode gradients with central differences, coordinate by
// coordinate. relative error = |a - f| / max(1e-8, |a| + |f|).
// `analytic_scale` multiplies the reverse-mode gradient first; anything but 1
// simulates a broken backward pass.
GradCheckResult grad_check(const LossBuilder& loss, const std::vector<GradCheckInput>& inputs, double h = 1e-5,
                           double analytic_scale = 1.0);

// Throws ArgumentError when any value of `pre_activation` lies within
// 10 * h of the ReLU kink at 0.
void require_away_from_kink(const Tensor& pre_activation, double h = 1e-5);

}  // namespace eac::nn
