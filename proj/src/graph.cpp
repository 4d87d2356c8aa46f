#include "eac/graph.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <unordered_set>

#include "eac/error.hpp"
#include "eac/rng.hpp"
#include "text_io.hpp"

namespace eac {

std::optional<std::size_t> PeriodGraph::index_of(const NodeId& id) const {
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (nodes[i] == id) return i;
  }
  return std::nullopt;
}

void StreamGraph::validate() const {
  for (std::size_t p = 0; p < periods.size(); ++p) {
    const PeriodGraph& g = periods[p];
    std::unordered_set<NodeId> seen;
    for (const NodeId& id : g.nodes) {
      if (!seen.insert(id).second) {
        throw DataError("period " + std::to_string(g.period_index) + ": duplicate node id '" + id + "'");
      }
    }
    if (g.adjacency.rows() != static_cast<Eigen::Index>(g.size()) ||
        g.adjacency.cols() != static_cast<Eigen::Index>(g.size())) {
      throw DataError("period " + std::to_string(g.period_index) + ": adjacency shape does not match node count");
    }
    if (p == 0) continue;
    const PeriodGraph& prev = periods[p - 1];
    if (prev.size() > g.size()) {
      throw DataError("period " + std::to_string(g.period_index) + " has fewer nodes than the previous period");
    }
    for (std::size_t i = 0; i < prev.size(); ++i) {
      if (prev.nodes[i] != g.nodes[i]) {
        throw DataError("period " + std::to_string(g.period_index) + ": carried node '" + prev.nodes[i] +
                        "' is not at index " + std::to_string(i));
      }
    }
  }
}

Matrix build_adjacency(const Matrix& distances, double threshold, std::optional<double> sigma_override) {
  if (distances.rows() != distances.cols()) throw ArgumentError("build_adjacency: distance matrix is not square");
  if (!(threshold >= 0.0 && threshold < 1.0)) throw ArgumentError("build_adjacency: threshold must lie in [0, 1)");
  if (sigma_override && !(*sigma_override > 0.0)) throw ArgumentError("build_adjacency: sigma must be positive");
  const Eigen::Index n = distances.rows();

  double sum = 0.0, sum_sq = 0.0;
  std::size_t count = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      const double d = distances(i, j);
      if (d < 0.0 || std::isnan(d)) throw ArgumentError("build_adjacency: negative distance at (" +
                                                        std::to_string(i) + "," + std::to_string(j) + ")");
      if (i == j || !std::isfinite(d)) continue;
      sum += d;
      sum_sq += d * d;
      ++count;
    }
  }
  double sigma = 1.0;
  if (sigma_override) {
    sigma = *sigma_override;
  } else if (count > 0) {
    const double mean = sum / static_cast<double>(count);
    const double var = std::max(0.0, sum_sq / static_cast<double>(count) - mean * mean);
    if (var > 0.0) sigma = std::sqrt(var);
  }

  Matrix a = Matrix::Zero(n, n);
  const double s2 = sigma * sigma;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i == j) continue;
      const double d = distances(i, j);
      const double w = std::exp(-(d * d) / s2);
      if (w >= threshold && w > 0.0) a(i, j) = w;
    }
  }
  return a;
}

Matrix normalize_adjacency(const Matrix& adjacency) {
  if (adjacency.rows() != adjacency.cols()) throw ArgumentError("normalize_adjacency: matrix is not square");
  const Eigen::Index n = adjacency.rows();
  Matrix with_loops = adjacency + Matrix::Identity(n, n);
  const Eigen::VectorXd inv_sqrt_deg = with_loops.rowwise().sum().array().rsqrt();
  return inv_sqrt_deg.asDiagonal() * with_loops * inv_sqrt_deg.asDiagonal();
}

PowerIterationResult largest_eigenvalue(const Matrix& m, double tolerance, int max_iterations) {
  const Eigen::Index n = m.rows();
  PowerIterationResult out;
  if (n == 0) {
    out.converged = true;
    return out;
  }
  Rng rng(0x9d2c5680u);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = rng.normal();
  v.normalize();

  double lambda = 0.0;
  for (int it = 1; it <= max_iterations; ++it) {
    Eigen::VectorXd w = m * v;
    const double next = v.dot(w);
    const double norm = w.norm();
    out.iterations = it;
    out.residual = (w - next * v).norm();
    if (norm == 0.0) {
      out.eigenvalue = 0.0;
      out.converged = true;
      return out;
    }
    const bool settled = it > 1 && std::abs(next - lambda) <= tolerance * std::max(1.0, std::abs(next));
    lambda = next;
    v = w / norm;
    if (settled) {
      out.eigenvalue = lambda;
      out.converged = true;
      return out;
    }
  }
  out.eigenvalue = lambda;
  return out;
}

Matrix scaled_laplacian(const Matrix& adjacency) {
  if (adjacency.rows() != adjacency.cols()) throw ArgumentError("scaled_laplacian: matrix is not square");
  const Eigen::Index n = adjacency.rows();
  const Eigen::VectorXd degree = adjacency.rowwise().sum();
  Matrix lap = Matrix(degree.asDiagonal()) - adjacency;
  double lambda_max = 1.0;
  if (lap.cwiseAbs().maxCoeff() > 0.0) {
    const PowerIterationResult pi = largest_eigenvalue(lap);
    if (!pi.converged) {
      throw NumericError("scaled_laplacian: power iteration did not converge after " +
                         std::to_string(pi.iterations) + " iterations (residual " +
                         detail::format_double(pi.residual) + ")");
    }
    lambda_max = pi.eigenvalue;
  }
  return (2.0 / lambda_max) * lap - Matrix::Identity(n, n);
}

NodeDiff diff_nodes(const PeriodGraph& prev, const PeriodGraph& cur) {
  std::unordered_map<NodeId, std::size_t> cur_index;
  for (std::size_t i = 0; i < cur.nodes.size(); ++i) cur_index.emplace(cur.nodes[i], i);

  NodeDiff diff;
  std::unordered_set<NodeId> carried;
  diff.carry_index.reserve(prev.nodes.size());
  for (const NodeId& id : prev.nodes) {
    auto it = cur_index.find(id);
    if (it == cur_index.end()) {
      throw DataError("expansion violation: node '" + id + "' of period " + std::to_string(prev.period_index) +
                      " is missing from period " + std::to_string(cur.period_index));
    }
    diff.carry_index.push_back(it->second);
    carried.insert(id);
  }
  for (const NodeId& id : cur.nodes) {
    if (!carried.count(id)) diff.new_ids.push_back(id);
  }
  return diff;
}

Matrix induced_submatrix(const Matrix& m, const std::vector<std::size_t>& indices) {
  const auto k = static_cast<Eigen::Index>(indices.size());
  Matrix out(k, k);
  for (Eigen::Index i = 0; i < k; ++i) {
    for (Eigen::Index j = 0; j < k; ++j) {
      out(i, j) = m(static_cast<Eigen::Index>(indices[i]), static_cast<Eigen::Index>(indices[j]));
    }
  }
  return out;
}

namespace {

std::vector<std::vector<double>> parse_numeric_rows(const std::vector<std::string>& lines, const std::string& path) {
  std::vector<std::vector<double>> rows;
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    const auto line = detail::trim(lines[ln]);
    if (line.empty()) continue;
    std::vector<double> row;
    for (auto tok : detail::split(line, ',')) {
      auto v = detail::parse_double(tok);
      if (!v) {
        throw DataError(path + ":" + std::to_string(ln + 1) + ": non-numeric value '" + std::string(tok) + "'");
      }
      row.push_back(*v);
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw DataError(path + ":" + std::to_string(ln + 1) + ": expected " + std::to_string(rows.front().size()) +
                      " values, found " + std::to_string(row.size()));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix to_matrix(const std::vector<std::vector<double>>& rows) {
  const auto r = static_cast<Eigen::Index>(rows.size());
  const auto c = r == 0 ? Eigen::Index{0} : static_cast<Eigen::Index>(rows.front().size());
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  }
  return m;
}

bool looks_dense(const std::vector<std::string>& lines, std::size_t n) {
  std::size_t rows = 0;
  for (const auto& raw : lines) {
    const auto line = detail::trim(raw);
    if (line.empty()) continue;
    const auto fields = detail::split(line, ',');
    if (fields.size() != n) return false;
    for (auto f : fields) {
      if (!detail::parse_double(f)) return false;
    }
    ++rows;
  }
  return rows == n;
}

}  // namespace

Matrix read_dense_matrix(const std::string& path) {
  const auto rows = parse_numeric_rows(detail::read_lines(path), path);
  if (rows.empty()) throw DataError(path + ": empty matrix file");
  return to_matrix(rows);
}

void write_dense_matrix(const std::string& path, const Matrix& m) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) out << ',';
      out << detail::format_double(m(i, j));
    }
    out << '\n';
  }
}

Matrix read_distances(const std::string& path, const std::vector<NodeId>& nodes) {
  const auto lines = detail::read_lines(path);
  const std::size_t n = nodes.size();
  if (looks_dense(lines, n)) {
    Matrix d = to_matrix(parse_numeric_rows(lines, path));
    for (Eigen::Index i = 0; i < d.rows(); ++i) {
      for (Eigen::Index j = 0; j < d.cols(); ++j) {
        if (d(i, j) < 0.0) throw DataError(path + ": negative distance in row " + std::to_string(i + 1));
        if (d(i, j) != d(j, i)) throw DataError(path + ": distance matrix is not symmetric");
      }
    }
    return d;
  }

  std::unordered_map<NodeId, Eigen::Index> index;
  for (std::size_t i = 0; i < n; ++i) index.emplace(nodes[i], static_cast<Eigen::Index>(i));
  const double inf = std::numeric_limits<double>::infinity();
  Matrix d = Matrix::Constant(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n), inf);
  d.diagonal().setZero();
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    const auto line = detail::trim(lines[ln]);
    if (line.empty()) continue;
    const auto f = detail::split(line, ',');
    if (ln == 0 && f.size() == 3 && f[0] == "from_id") continue;
    const std::string where = path + ":" + std::to_string(ln + 1);
    if (f.size() != 3) throw DataError(where + ": expected 'from_id,to_id,distance'");
    auto a = index.find(std::string(f[0]));
    auto b = index.find(std::string(f[1]));
    if (a == index.end()) throw DataError(where + ": unknown node id '" + std::string(f[0]) + "'");
    if (b == index.end()) throw DataError(where + ": unknown node id '" + std::string(f[1]) + "'");
    auto v = detail::parse_double(f[2]);
    if (!v || *v < 0.0) throw DataError(where + ": invalid distance '" + std::string(f[2]) + "'");
    if (a->second == b->second) continue;
    const double prev = d(a->second, b->second);
    if (std::isfinite(prev) && prev != *v) throw DataError(where + ": conflicting distances for one node pair");
    d(a->second, b->second) = *v;
    d(b->second, a->second) = *v;
  }
  return d;
}

std::vector<NodeId> read_node_list(const std::string& path) {
  std::vector<NodeId> ids;
  for (const auto& raw : detail::read_lines(path)) {
    const auto line = detail::trim(raw);
    if (!line.empty()) ids.emplace_back(line);
  }
  if (ids.empty()) throw DataError(path + ": node list is empty");
  return ids;
}

}  // namespace eac
