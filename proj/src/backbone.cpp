#include "eac/backbone.hpp"

#include <cmath>

#include "eac/error.hpp"
#include "eac/nn/checkpoint.hpp"
#include "eac/nn/ops.hpp"
#include "eac/rng.hpp"

namespace eac {

using nn::Parameter;
using nn::Shape;
using nn::Tape;
using nn::Tensor;
using nn::Var;

std::string to_string(BackboneVariant v) { return v == BackboneVariant::kSpatial ? "spatial" : "spectral"; }

BackboneVariant parse_variant(const std::string& tag) {
  if (tag == "spatial") return BackboneVariant::kSpatial;
  if (tag == "spectral") return BackboneVariant::kSpectral;
  throw ConfigError("unknown backbone variant '" + tag + "' (expected spatial or spectral)");
}

GraphOperator make_graph_operator(BackboneVariant variant, const Matrix& adjacency) {
  const Matrix m = variant == BackboneVariant::kSpatial ? normalize_adjacency(adjacency) : scaled_laplacian(adjacency);
  const auto n = static_cast<std::size_t>(m.rows());
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) t[i * n + j] = m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  }
  return GraphOperator{variant, std::move(t)};
}

std::size_t backbone_parameter_count(const BackboneSpec& s) {
  const std::size_t d = s.hidden;
  const std::size_t gconv = s.variant == BackboneVariant::kSpatial ? d * d : (s.cheb_order + 1) * d * d;
  return (s.in_channels * d + d) + 2 * gconv + (s.kernel * d * d + d) + (d * s.t_out + s.t_out);
}

Backbone::Backbone(const BackboneSpec& spec, std::uint64_t seed) : spec_(spec) {
  if (spec.hidden == 0 || spec.t_out == 0 || spec.in_channels == 0) {
    throw ConfigError("backbone: hidden width, input channels and t_out must be positive");
  }
  if (spec.kernel == 0 || spec.kernel % 2 == 0) throw ConfigError("backbone: temporal kernel must be odd");
  Rng rng = Rng(seed).derive("backbone.init");
  const std::size_t d = spec.hidden;
  auto uniform = [&](const std::string& name, Shape shape, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Tensor t(std::move(shape));
    for (double& v : t.storage()) v = rng.uniform(-bound, bound);
    params_.push_back(Parameter{name, std::move(t), true});
  };
  uniform("input_proj.weight", {spec.in_channels, d}, spec.in_channels);
  uniform("input_proj.bias", {d}, spec.in_channels);
  auto gconv = [&](const std::string& layer) {
    if (spec.variant == BackboneVariant::kSpatial) {
      uniform(layer + ".weight", {d, d}, d);
    } else {
      for (std::size_t k = 0; k <= spec.cheb_order; ++k) uniform(layer + ".theta" + std::to_string(k), {d, d}, d);
    }
  };
  gconv("gconv1");
  uniform("tconv.weight", {spec.kernel, d, d}, spec.kernel * d);
  uniform("tconv.bias", {d}, spec.kernel * d);
  gconv("gconv2");
  uniform("head.weight", {d, spec.t_out}, d);
  uniform("head.bias", {spec.t_out}, d);
}

std::size_t Backbone::parameter_count() const {
  std::size_t n = 0;
  for (const Parameter& p : params_) n += p.value.size();
  return n;
}

void Backbone::set_trainable(bool trainable) {
  for (Parameter& p : params_) p.trainable = trainable;
}

const Parameter& Backbone::param(const std::string& name) const {
  for (const Parameter& p : params_) {
    if (p.name == name) return p;
  }
  throw ArgumentError("backbone: no parameter named '" + name + "'");
}

Var Backbone::graph_conv(Tape& tape, const GraphOperator& graph, Var h, const std::string& layer) const {
  if (spec_.variant == BackboneVariant::kSpatial) {
    return nn::graph_conv_spatial(graph.matrix, h, tape.param(param(layer + ".weight")));
  }
  std::vector<Var> thetas;
  for (std::size_t k = 0; k <= spec_.cheb_order; ++k) {
    thetas.push_back(tape.param(param(layer + ".theta" + std::to_string(k))));
  }
  return nn::graph_conv_cheb(graph.matrix, h, thetas);
}

Var Backbone::project(Tape& tape, const Tensor& inputs) const {
  if (inputs.rank() != 3) throw ArgumentError("backbone: inputs must be [B, t_in, n], got " + nn::shape_str(inputs.shape()));
  if (spec_.in_channels != 1) throw ArgumentError("backbone: only single-channel inputs are supported");
  Shape s = inputs.shape();
  s.push_back(1);
  Var x = tape.constant(inputs.reshaped(s));
  return nn::linear(x, tape.param(param("input_proj.weight")), tape.param(param("input_proj.bias")));
}

Var Backbone::forward_fused(Tape& tape, const GraphOperator& graph, Var fused, const ForwardOptions& options) const {
  if (graph.variant != spec_.variant) {
    throw ArgumentError("backbone: graph operator is " + to_string(graph.variant) + " but the backbone is " +
                        to_string(spec_.variant));
  }
  if (fused.shape().size() != 4 || fused.shape()[2] != graph.nodes()) {
    throw ArgumentError("backbone: node count mismatch between features " + nn::shape_str(fused.shape()) +
                        " and graph of " + std::to_string(graph.nodes()) + " nodes");
  }
  const Rng drop(options.dropout_seed);
  Var h = nn::relu(graph_conv(tape, graph, fused, "gconv1"));
  h = nn::dropout(h, options.dropout_p, drop.derive("gconv1").seed());
  h = nn::relu(nn::temporal_conv(h, tape.param(param("tconv.weight")), tape.param(param("tconv.bias"))));
  h = nn::dropout(h, options.dropout_p, drop.derive("tconv").seed());
  h = nn::relu(graph_conv(tape, graph, h, "gconv2"));
  Var pooled = nn::mean_pool_time(h);
  Var out = nn::linear(pooled, tape.param(param("head.weight")), tape.param(param("head.bias")));
  return nn::swap_last_two(out);
}

Var Backbone::forward(Tape& tape, const GraphOperator& graph, const Tensor& inputs, std::optional<Var> prompt,
                      const ForwardOptions& options) const {
  if (inputs.rank() != 3 || inputs.dim(2) != graph.nodes()) {
    throw ArgumentError("backbone: node count mismatch between inputs " + nn::shape_str(inputs.shape()) +
                        " and graph of " + std::to_string(graph.nodes()) + " nodes");
  }
  Var h = project(tape, inputs);
  if (prompt) {
    if (prompt->shape() != Shape{graph.nodes(), spec_.hidden}) {
      throw ArgumentError("backbone: prompt shape " + nn::shape_str(prompt->shape()) + " does not match " +
                          std::to_string(graph.nodes()) + " nodes x " + std::to_string(spec_.hidden));
    }
    h = nn::add_node_prompt(h, *prompt);
  }
  return forward_fused(tape, graph, h, options);
}

Tensor Backbone::predict(const GraphOperator& graph, const Tensor& inputs, const Tensor* prompt) const {
  Tape tape;
  std::optional<Var> p;
  if (prompt) p = tape.constant(*prompt);
  return forward(tape, graph, inputs, p).value();
}

void Backbone::restore(const std::vector<Parameter>& saved) {
  if (saved.size() != params_.size()) throw ArgumentError("backbone: snapshot has a different parameter layout");
  for (std::size_t i = 0; i < saved.size(); ++i) {
    if (saved[i].name != params_[i].name || saved[i].value.shape() != params_[i].value.shape()) {
      throw ArgumentError("backbone: snapshot parameter '" + saved[i].name + "' does not match");
    }
    params_[i].value = saved[i].value;
  }
}

void Backbone::save(const std::string& path) const {
  nn::save_parameters(path, params_,
                      {{"variant", to_string(spec_.variant)},
                       {"in_channels", std::to_string(spec_.in_channels)},
                       {"hidden", std::to_string(spec_.hidden)},
                       {"kernel", std::to_string(spec_.kernel)},
                       {"cheb_order", std::to_string(spec_.cheb_order)},
                       {"t_out", std::to_string(spec_.t_out)}});
}

Backbone Backbone::load(const std::string& path) {
  std::map<std::string, std::string> header;
  auto params = nn::load_parameters(path, &header);
  BackboneSpec spec;
  try {
    spec.variant = parse_variant(header.at("variant"));
    spec.in_channels = std::stoul(header.at("in_channels"));
    spec.hidden = std::stoul(header.at("hidden"));
    spec.kernel = std::stoul(header.at("kernel"));
    spec.cheb_order = std::stoul(header.at("cheb_order"));
    spec.t_out = std::stoul(header.at("t_out"));
  } catch (const std::out_of_range&) {
    throw DataError(path + ": checkpoint header is missing backbone fields");
  } catch (const std::invalid_argument&) {
    throw DataError(path + ": checkpoint header has a non-numeric backbone field");
  }
  Backbone b(spec, 0);
  try {
    b.restore(params);
  } catch (const ArgumentError& e) {
    throw DataError(path + ": " + e.what());
  }
  return b;
}

std::uint64_t Backbone::hash() const { return nn::parameter_hash(params_); }

}  // namespace eac
