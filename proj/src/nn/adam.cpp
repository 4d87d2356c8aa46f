#include "eac/nn/adam.hpp"

#include <cmath>
#include <set>

#include "eac/error.hpp"

namespace eac::nn {

void Adam::step(std::span<Parameter* const> params, const GradientMap& grads, double lr) {
  std::set<std::string> trainable;
  for (const Parameter* p : params) {
    if (p->trainable) trainable.insert(p->name);
  }
  for (const auto& [name, g] : grads) {
    if (!trainable.count(name)) {
      throw ArgumentError("adam: gradient supplied for frozen or unknown parameter '" + name + "'");
    }
  }

  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (Parameter* p : params) {
    if (!p->trainable) continue;
    auto git = grads.find(p->name);
    if (git == grads.end()) throw ArgumentError("adam: missing gradient for '" + p->name + "'");
    const Tensor& g = git->second;
    if (g.shape() != p->value.shape()) {
      throw ArgumentError("adam: gradient shape " + shape_str(g.shape()) + " does not match parameter '" + p->name +
                          "' " + shape_str(p->value.shape()));
    }
    auto [it, fresh] = moments_.try_emplace(p->name);
    if (fresh) it->second = AdamMoments{Tensor(g.shape()), Tensor(g.shape())};
    Tensor& m = it->second.m;
    Tensor& v = it->second.v;
    for (std::size_t i = 0; i < g.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      p->value[i] -= lr * m_hat / (std::sqrt(v_hat) + epsilon_);
    }
  }
}

}  // namespace eac::nn
