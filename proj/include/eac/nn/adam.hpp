#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>

#include "eac/nn/tape.hpp"

namespace eac::nn {

struct AdamMoments {
  Tensor m;
  Tensor v;
};

// Adam with bias correction. Moments are keyed by parameter name and created
// on first use.
class Adam {
 public:
  Adam(double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-8)
      : beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {}

  // `grads` must hold exactly the trainable parameters among `params`.
  // Frozen parameters are never written.
  void step(std::span<Parameter* const> params, const GradientMap& grads, double lr);

  std::uint64_t steps() const { return t_; }
  const std::map<std::string, AdamMoments>& moments() const { return moments_; }
  void reset() {
    moments_.clear();
    t_ = 0;
  }

 private:
  double beta1_, beta2_, epsilon_;
  std::uint64_t t_ = 0;
  std::map<std::string, AdamMoments> moments_;
};

}  // namespace eac::nn
