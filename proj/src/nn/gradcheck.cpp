#include "eac/nn/gradcheck.hpp"

#include <cmath>

#include "eac/error.hpp"

namespace eac::nn {

namespace {

double evaluate(const LossBuilder& loss, const std::vector<GradCheckInput>& inputs) {
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(inputs.size());
  for (const auto& in : inputs) leaves.push_back(tape.leaf(in.name, in.value, false));
  return loss(tape, leaves).value().item();
}

}  // namespace

GradCheckResult grad_check(const LossBuilder& loss, const std::vector<GradCheckInput>& inputs, double h,
                           double analytic_scale) {
  GradientMap analytic;
  {
    Tape tape;
    std::vector<Var> leaves;
    for (const auto& in : inputs) leaves.push_back(tape.leaf(in.name, in.value, true));
    analytic = tape.backward(loss(tape, leaves));
  }

  GradCheckResult result;
  std::vector<GradCheckInput> probe = inputs;
  for (std::size_t k = 0; k < probe.size(); ++k) {
    const Tensor& g = analytic.at(probe[k].name);
    for (std::size_t i = 0; i < probe[k].value.size(); ++i) {
      const double saved = probe[k].value[i];
      probe[k].value[i] = saved + h;
      const double up = evaluate(loss, probe);
      probe[k].value[i] = saved - h;
      const double down = evaluate(loss, probe);
      probe[k].value[i] = saved;
      const double fd = (up - down) / (2.0 * h);
      if (!std::isfinite(fd)) {
        throw NumericError("grad_check: non-finite finite difference for '" + probe[k].name + "'[" +
                           std::to_string(i) + "]");
      }
      const double a = analytic_scale * g[i];
      const double rel = std::abs(a - fd) / std::max(1e-8, std::abs(a) + std::abs(fd));
      ++result.coordinates;
      if (rel > result.max_relative_error) {
        result.max_relative_error = rel;
        result.worst_input = probe[k].name;
        result.worst_index = i;
      }
    }
  }
  return result;
}

void require_away_from_kink(const Tensor& pre_activation, double h) {
  for (std::size_t i = 0; i < pre_activation.size(); ++i) {
    if (std::abs(pre_activation[i]) < 10.0 * h) {
      throw ArgumentError("grad_check: relu input " + std::to_string(i) + " lies within 10h of the kink at 0");
    }
  }
}

}  // namespace eac::nn
