#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "eac/graph.hpp"
#include "eac/nn/tape.hpp"

namespace eac {

enum class BackboneVariant { kSpatial, kSpectral };

std::string to_string(BackboneVariant v);
BackboneVariant parse_variant(const std::string& tag);

struct BackboneSpec {
  BackboneVariant variant = BackboneVariant::kSpatial;
  std::size_t in_channels = 1;
  std::size_t hidden = 64;
  std::size_t kernel = 3;
  std::size_t cheb_order = 2;
  std::size_t t_out = 12;
};

// Graph matrix consumed by the graph convolutions: the normalized adjacency
// for the spatial variant, the scaled Laplacian for the spectral one.
struct GraphOperator {
  BackboneVariant variant = BackboneVariant::kSpatial;
  nn::Tensor matrix;

  std::size_t nodes() const { return matrix.rank() == 2 ? matrix.dim(0) : 0; }
};

GraphOperator make_graph_operator(BackboneVariant variant, const Matrix& adjacency);

struct ForwardOptions {
  double dropout_p = 0.0;
  std::uint64_t dropout_seed = 0;
};

// input projection -> (+ prompt) -> graph conv -> relu -> temporal conv ->
// relu -> graph conv -> relu -> mean over time -> linear head.
// Every operator is shared across nodes, so the parameter set does not depend
// on the node count.
class Backbone {
 public:
  Backbone(const BackboneSpec& spec, std::uint64_t seed);

  const BackboneSpec& spec() const { return spec_; }
  std::vector<nn::Parameter>& parameters() { return params_; }
  const std::vector<nn::Parameter>& parameters() const { return params_; }
  std::size_t parameter_count() const;
  void set_trainable(bool trainable);

  // inputs: [B, t_in, n] in normalized units. Returns [B, t_out, n].
  nn::Var forward(nn::Tape& tape, const GraphOperator& graph, const nn::Tensor& inputs,
                  std::optional<nn::Var> prompt, const ForwardOptions& options = {}) const;

  // Input projection alone: [B, t_in, n] -> [B, t_in, n, hidden].
  nn::Var project(nn::Tape& tape, const nn::Tensor& inputs) const;
  // Everything after the fusion point, applied to [B, t_in, n, hidden].
  nn::Var forward_fused(nn::Tape& tape, const GraphOperator& graph, nn::Var fused,
                        const ForwardOptions& options = {}) const;

  // Inference helper with dropout off and no gradients.
  nn::Tensor predict(const GraphOperator& graph, const nn::Tensor& inputs,
                     const nn::Tensor* prompt = nullptr) const;

  std::vector<nn::Parameter> snapshot() const { return params_; }
  void restore(const std::vector<nn::Parameter>& saved);

  void save(const std::string& path) const;
  static Backbone load(const std::string& path);
  std::uint64_t hash() const;

 private:
  const nn::Parameter& param(const std::string& name) const;
  nn::Var graph_conv(nn::Tape& tape, const GraphOperator& graph, nn::Var h, const std::string& layer) const;

  BackboneSpec spec_;
  std::vector<nn::Parameter> params_;
};

// Closed-form parameter count for a spec.
std::size_t backbone_parameter_count(const BackboneSpec& spec);

}  // namespace eac
