#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

namespace eac {

using Matrix = Eigen::MatrixXd;
using NodeId = std::string;

// One period of the streaming graph. `nodes` fixes the index order of every
// matrix and tensor that belongs to this period.
struct PeriodGraph {
  int period_index = 1;
  std::vector<NodeId> nodes;
  Matrix distances;
  Matrix adjacency;

  std::size_t size() const { return nodes.size(); }
  // Index of `id` in `nodes`, or nullopt.
  std::optional<std::size_t> index_of(const NodeId& id) const;
};

// Expansion-only sequence of period graphs: every period keeps the previous
// period's nodes as an index-order prefix.
struct StreamGraph {
  std::vector<PeriodGraph> periods;

  // Throws DataError when a period drops a node or reorders carried nodes.
  void validate() const;
};

// Thresholded Gaussian kernel over pairwise distances. When no sigma is
// given, the standard deviation of the off-diagonal distances is used, and 1
// if that spread is zero. Non-finite distances mean "no edge".
Matrix build_adjacency(const Matrix& distances, double threshold,
                       std::optional<double> sigma_override = std::nullopt);

// D^-1/2 (A + I) D^-1/2 with D the degree matrix of A + I.
Matrix normalize_adjacency(const Matrix& adjacency);

struct PowerIterationResult {
  double eigenvalue = 0.0;
  double residual = 0.0;
  int iterations = 0;
  bool converged = false;
};

// Largest eigenvalue of a symmetric positive semidefinite matrix. The start
// vector is fixed so the estimate is reproducible.
PowerIterationResult largest_eigenvalue(const Matrix& m, double tolerance = 1e-8,
                                        int max_iterations = 1000);

// 2 L / lambda_max - I for the combinatorial Laplacian L = D - A. The zero
// graph uses lambda_max = 1.
Matrix scaled_laplacian(const Matrix& adjacency);

struct NodeDiff {
  std::vector<NodeId> new_ids;
  // carry_index[i] is the index in `cur` of node i of `prev`.
  std::vector<std::size_t> carry_index;
};

NodeDiff diff_nodes(const PeriodGraph& prev, const PeriodGraph& cur);

// Rows/cols of `m` restricted to `indices`, in that order.
Matrix induced_submatrix(const Matrix& m, const std::vector<std::size_t>& indices);

// Dense matrix text: one row per line, comma-separated decimals.
Matrix read_dense_matrix(const std::string& path);
void write_dense_matrix(const std::string& path, const Matrix& m);

// Distances from either a dense matrix file or an edge list of
// `from_id,to_id,distance` lines. Pairs absent from an edge list are
// infinitely far apart (no edge).
Matrix read_distances(const std::string& path, const std::vector<NodeId>& nodes);

std::vector<NodeId> read_node_list(const std::string& path);

}  // namespace eac
