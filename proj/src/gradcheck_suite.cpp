#include "eac/gradcheck_suite.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>

#include "eac/backbone.hpp"
#include "eac/error.hpp"
#include "eac/graph.hpp"
#include "eac/nn/gradcheck.hpp"
#include "eac/nn/ops.hpp"
#include "eac/prompt_pool.hpp"
#include "eac/rng.hpp"

namespace eac {

using nn::GradCheckInput;
using nn::LossBuilder;
using nn::Shape;
using nn::Tape;
using nn::Tensor;
using nn::Var;

namespace {

constexpr double kStep = 1e-5;

struct Problem {
  LossBuilder loss;
  std::vector<GradCheckInput> inputs;
};

using CaseFactory = std::function<Problem(Rng&)>;

Tensor randn(Rng& rng, Shape shape, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.storage()) v = scale * rng.normal();
  return t;
}

// Normal draws pushed at least 0.1 away from zero.
Tensor randn_away(Rng& rng, Shape shape) {
  Tensor t(std::move(shape));
  for (double& v : t.storage()) {
    const double x = rng.normal();
    v = x >= 0.0 ? x + 0.1 : x - 0.1;
  }
  return t;
}

// sum(out * r) for a fixed random r, so every output coordinate matters.
Var weighted_sum(Var out, const Tensor& r) {
  const std::size_t n = out.value().size();
  Var flat = nn::reshape(out, {1, n});
  Var w = out.tape()->constant(r.reshaped({n, 1}));
  return nn::matmul(flat, w);
}

Matrix random_adjacency(Rng& rng, std::size_t n) {
  Matrix d(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    d(i, i) = 0.0;
    for (std::size_t j = i + 1; j < n; ++j) d(i, j) = d(j, i) = rng.uniform(0.1, 2.0);
  }
  return build_adjacency(d, 0.1);
}

Tensor to_tensor(const Matrix& m) {
  Tensor t({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) t[static_cast<std::size_t>(i * m.cols() + j)] = m(i, j);
  }
  return t;
}

// Same input leaves on a throwaway tape; throws if any relu input sits near
// the kink.
void check_kinks(const Problem& p) {
  Tape tape;
  std::vector<Var> leaves;
  for (const auto& in : p.inputs) leaves.push_back(tape.leaf(in.name, in.value, false));
  p.loss(tape, leaves);
  for (std::size_t id = 0; id < tape.size(); ++id) {
    if (tape.op(id) == "relu") nn::require_away_from_kink(tape.value(tape.inputs(id).front()), kStep);
  }
}

Problem backbone_problem(Rng& rng, BackboneVariant variant) {
  BackboneSpec spec;
  spec.variant = variant;
  spec.hidden = 4;
  spec.kernel = 3;
  spec.cheb_order = 2;
  spec.t_out = 3;
  const std::size_t n = 4, b = 2, t_in = 6;
  auto net = std::make_shared<Backbone>(spec, rng.next());
  const GraphOperator graph = make_graph_operator(variant, random_adjacency(rng, n));
  const Tensor x = randn(rng, {b, t_in, n});
  const Tensor r = randn(rng, {b, spec.t_out, n});
  const std::uint64_t drop_seed = rng.next();
  Problem p;
  for (const auto& param : net->parameters()) p.inputs.push_back({param.name, param.value});
  p.inputs.push_back({"prompt", randn(rng, {n, spec.hidden}, 0.5)});
  p.loss = [net, graph, x, r, drop_seed](Tape& tape, const std::vector<Var>& leaves) {
    auto& params = net->parameters();
    for (std::size_t i = 0; i < params.size(); ++i) params[i].value = leaves[i].value();
    ForwardOptions fo;
    fo.dropout_p = 0.2;
    fo.dropout_seed = drop_seed;
    return weighted_sum(net->forward(tape, graph, x, leaves.back(), fo), r);
  };
  return p;
}

const std::vector<std::pair<std::string, CaseFactory>>& cases() {
  static const std::vector<std::pair<std::string, CaseFactory>> all = {
      {"matmul",
       [](Rng& rng) {
         Problem p{nullptr, {{"a", randn(rng, {3, 4})}, {"b", randn(rng, {4, 2})}}};
         const Tensor r = randn(rng, {3, 2});
         p.loss = [r](Tape&, const std::vector<Var>& v) { return weighted_sum(nn::matmul(v[0], v[1]), r); };
         return p;
       }},
      {"add",
       [](Rng& rng) {
         Problem p{nullptr, {{"a", randn(rng, {2, 3})}, {"b", randn(rng, {2, 3})}}};
         const Tensor r = randn(rng, {2, 3});
         p.loss = [r](Tape&, const std::vector<Var>& v) { return weighted_sum(nn::add(v[0], v[1]), r); };
         return p;
       }},
      {"linear",
       [](Rng& rng) {
         Problem p{nullptr, {{"x", randn(rng, {2, 3, 4})}, {"w", randn(rng, {4, 5})}, {"b", randn(rng, {5})}}};
         const Tensor r = randn(rng, {2, 3, 5});
         p.loss = [r](Tape&, const std::vector<Var>& v) { return weighted_sum(nn::linear(v[0], v[1], v[2]), r); };
         return p;
       }},
      {"relu",
       [](Rng& rng) {
         Problem p{nullptr, {{"x", randn_away(rng, {3, 4})}}};
         const Tensor r = randn(rng, {3, 4});
         p.loss = [r](Tape&, const std::vector<Var>& v) { return weighted_sum(nn::relu(v[0]), r); };
         return p;
       }},
      {"reshape",
       [](Rng& rng) {
         Problem p{nullptr, {{"x", randn(rng, {2, 6})}}};
         const Tensor r = randn(rng, {3, 4});
         p.loss = [r](Tape&, const std::vector<Var>& v) { return weighted_sum(nn::reshape(v[0], {3, 4}), r); };
         return p;
       }},
      {"add_node_prompt",
       [](Rng& rng) {
         Problem p{nullptr, {{"h", randn(rng, {2, 3, 4, 2})}, {"p", randn(rng, {4, 2})}}};
         const Tensor r = randn(rng, {2, 3, 4, 2});
         p.loss = [r](Tape&, const std::vector<Var>& v) { return weighted_sum(nn::add_node_prompt(v[0], v[1]), r); };
         return p;
       }},
      {"graph_conv_spatial",
       [](Rng& rng) {
         const Tensor a = to_tensor(normalize_adjacency(random_adjacency(rng, 4)));
         Problem p{nullptr, {{"h", randn(rng, {2, 3, 4, 3})}, {"w", randn(rng, {3, 2})}}};
         const Tensor r = randn(rng, {2, 3, 4, 2});
         p.loss = [a, r](Tape&, const std::vector<Var>& v) {
           return weighted_sum(nn::graph_conv_spatial(a, v[0], v[1]), r);
         };
         return p;
       }},
      {"graph_conv_cheb",
       [](Rng& rng) {
         const Tensor l = to_tensor(scaled_laplacian(random_adjacency(rng, 4)));
         Problem p{nullptr,
                   {{"h", randn(rng, {2, 2, 4, 3})},
                    {"theta0", randn(rng, {3, 2})},
                    {"theta1", randn(rng, {3, 2})},
                    {"theta2", randn(rng, {3, 2})},
                    {"theta3", randn(rng, {3, 2})}}};
         const Tensor r = randn(rng, {2, 2, 4, 2});
         p.loss = [l, r](Tape&, const std::vector<Var>& v) {
           const std::vector<Var> thetas(v.begin() + 1, v.end());
           return weighted_sum(nn::graph_conv_cheb(l, v[0], thetas), r);
         };
         return p;
       }},
      {"temporal_conv",
       [](Rng& rng) {
         Problem p{nullptr, {{"x", randn(rng, {2, 5, 3, 2})}, {"w", randn(rng, {3, 2, 3})}, {"b", randn(rng, {3})}}};
         const Tensor r = randn(rng, {2, 5, 3, 3});
         p.loss = [r](Tape&, const std::vector<Var>& v) {
           return weighted_sum(nn::temporal_conv(v[0], v[1], v[2]), r);
         };
         return p;
       }},
      {"mean_pool_time",
       [](Rng& rng) {
         Problem p{nullptr, {{"x", randn(rng, {2, 4, 3, 2})}}};
         const Tensor r = randn(rng, {2, 3, 2});
         p.loss = [r](Tape&, const std::vector<Var>& v) { return weighted_sum(nn::mean_pool_time(v[0]), r); };
         return p;
       }},
      {"dropout",
       [](Rng& rng) {
         Problem p{nullptr, {{"x", randn(rng, {4, 5})}}};
         const Tensor r = randn(rng, {4, 5});
         const std::uint64_t seed = rng.next();
         p.loss = [r, seed](Tape&, const std::vector<Var>& v) {
           return weighted_sum(nn::dropout(v[0], 0.3, seed), r);
         };
         return p;
       }},
      {"mse_loss",
       [](Rng& rng) {
         Problem p{nullptr, {{"pred", randn(rng, {3, 4})}}};
         const Tensor target = randn(rng, {3, 4});
         p.loss = [target](Tape&, const std::vector<Var>& v) { return nn::mse_loss(v[0], target); };
         return p;
       }},
      {"concat_rows",
       [](Rng& rng) {
         Problem p{nullptr, {{"a", randn(rng, {2, 3})}, {"b", randn(rng, {4, 3})}}};
         const Tensor r = randn(rng, {6, 3});
         p.loss = [r](Tape&, const std::vector<Var>& v) { return weighted_sum(nn::concat_rows(v), r); };
         return p;
       }},
      {"swap_last_two",
       [](Rng& rng) {
         Problem p{nullptr, {{"x", randn(rng, {2, 3, 4})}}};
         const Tensor r = randn(rng, {2, 4, 3});
         p.loss = [r](Tape&, const std::vector<Var>& v) { return weighted_sum(nn::swap_last_two(v[0]), r); };
         return p;
       }},
      {"prompt_pool",
       [](Rng& rng) {
         Problem p{nullptr,
                   {{"A1", randn(rng, {3, 2})}, {"A2", randn(rng, {2, 2})}, {"B", randn(rng, {2, 4})}}};
         const Tensor r = randn(rng, {5, 4});
         p.loss = [r](Tape&, const std::vector<Var>& v) {
           const std::vector<Var> blocks{v[0], v[1]};
           return weighted_sum(nn::matmul(nn::concat_rows(blocks), v[2]), r);
         };
         return p;
       }},
      {"backbone_spatial", [](Rng& rng) { return backbone_problem(rng, BackboneVariant::kSpatial); }},
      {"backbone_spectral", [](Rng& rng) { return backbone_problem(rng, BackboneVariant::kSpectral); }},
  };
  return all;
}

}  // namespace

std::vector<std::string> gradcheck_case_names() {
  std::vector<std::string> names;
  for (const auto& [name, _] : cases()) names.push_back(name);
  return names;
}

std::vector<GradCheckCase> run_gradcheck_suite(std::size_t seeds, double tolerance, const std::string& corrupt) {
  if (seeds == 0) throw ArgumentError("gradcheck: at least one seed is required");
  if (!corrupt.empty()) {
    const auto names = gradcheck_case_names();
    if (std::find(names.begin(), names.end(), corrupt) == names.end()) {
      throw ArgumentError("gradcheck: unknown case '" + corrupt + "'");
    }
  }
  std::vector<GradCheckCase> out;
  const Rng root(0x67726164ULL);
  for (const auto& [name, factory] : cases()) {
    GradCheckCase c;
    c.name = name;
    c.seeds = seeds;
    const Rng stream = root.derive(name);
    for (std::size_t s = 0; s < seeds; ++s) {
      Problem p;
      // Redraw when a relu input lands next to the kink.
      for (std::uint64_t attempt = 0;; ++attempt) {
        Rng rng = stream.derive(s * 1000 + attempt);
        p = factory(rng);
        try {
          check_kinks(p);
          break;
        } catch (const ArgumentError&) {
          if (attempt >= 20) throw NumericError("gradcheck: could not draw a kink-free input for " + name);
        }
      }
      const auto r = nn::grad_check(p.loss, p.inputs, kStep, name == corrupt ? 1.5 : 1.0);
      c.max_relative_error = std::max(c.max_relative_error, r.max_relative_error);
    }
    c.passed = c.max_relative_error <= tolerance;
    out.push_back(c);
  }
  return out;
}

}  // namespace eac
