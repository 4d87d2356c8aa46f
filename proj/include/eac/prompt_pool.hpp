#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "eac/graph.hpp"
#include "eac/nn/tape.hpp"

namespace eac {

enum class PoolMode { kLowRank, kFull };

std::string to_string(PoolMode m);
PoolMode parse_pool_mode(const std::string& tag);

// Prompt factors for the nodes that joined in one period.
struct PoolSegment {
  int period_index = 1;
  std::vector<NodeId> node_ids;
  nn::Parameter factors;  // [rows, k] in low-rank mode, [rows, d] in full mode
};

struct ParamCount {
  std::size_t tunable = 0;
  std::size_t materialized = 0;
  double ratio = 0.0;
};

// Append-only pool of per-node prompts. In low-rank mode the prompt matrix is
// concat(A^(1), ..., A^(tau)) * B with one shared adjustment matrix B [k, d];
// in full mode each segment stores its prompt rows directly.
class PromptPool {
 public:
  // A^(1) starts at zero and B ~ N(0, 1/k), so the initial prompt is exactly
  // zero while gradients still reach A through B.
  static PromptPool create(const std::vector<NodeId>& nodes, std::size_t d, std::size_t k, PoolMode mode,
                           std::uint64_t seed, int period_index = 1);

  // Appends a zero-initialized segment for `new_ids`; an empty list is a no-op.
  void expand(const std::vector<NodeId>& new_ids, int period_index);

  // [n, d] prompt matrix in stream node order.
  nn::Tensor materialize() const;
  // Differentiable materialization recorded on `tape`.
  nn::Var materialize(nn::Tape& tape) const;

  ParamCount param_count() const;

  std::size_t rows() const;
  std::size_t width() const { return d_; }
  std::size_t rank() const { return k_; }
  PoolMode mode() const { return mode_; }
  const std::vector<PoolSegment>& segments() const { return segments_; }
  const nn::Parameter& adjustment() const { return adjustment_; }
  std::vector<NodeId> node_ids() const;

  // Pointers to every stored parameter (segments then B in low-rank mode).
  std::vector<nn::Parameter*> parameters();
  std::vector<nn::Parameter> snapshot() const;
  void restore(const std::vector<nn::Parameter>& saved);

  void set_trainable(bool trainable);
  // Freezes every segment except the most recent one.
  void freeze_old_segments();
  void set_adjustment_trainable(bool trainable);

  // Text format:
  //   eac-pool v1 k=<k> d=<d> mode=<lowrank|full>
  //   segment period=<tau> rows=<r>
  //   <id> <id> ...
  //   <r rows of factors>
  //   ...
  //   B rows=<k>            (low-rank mode only)
  //   <k rows>
  void save(const std::string& path) const;
  // `expected_d` of 0 accepts any width.
  static PromptPool load(const std::string& path, std::size_t expected_d = 0);

  std::uint64_t hash() const;

 private:
  PromptPool() = default;

  std::size_t d_ = 0;
  std::size_t k_ = 0;
  PoolMode mode_ = PoolMode::kLowRank;
  std::vector<PoolSegment> segments_;
  nn::Parameter adjustment_;
};

}  // namespace eac
