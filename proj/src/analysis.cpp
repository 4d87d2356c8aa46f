#include "eac/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "eac/error.hpp"
#include "eac/rng.hpp"

namespace eac {

void MetricAccumulator::add(double pred, double truth) {
  const double e = pred - truth;
  abs_sum += std::abs(e);
  sq_sum += e * e;
  ++count;
  if (std::abs(truth) >= kMapeMask) {
    ape_sum += std::abs(e) / std::abs(truth);
    ++mape_count;
  }
}

Metrics MetricAccumulator::finish() const {
  if (count == 0) throw ArgumentError("metrics: empty input");
  Metrics m;
  m.count = count;
  m.mape_count = mape_count;
  m.mae = abs_sum / static_cast<double>(count);
  m.rmse = std::sqrt(sq_sum / static_cast<double>(count));
  if (mape_count > 0) m.mape = 100.0 * ape_sum / static_cast<double>(mape_count);
  return m;
}

Metrics compute_metrics(std::span<const double> pred, std::span<const double> truth) {
  if (pred.size() != truth.size()) throw ArgumentError("metrics: prediction and truth sizes differ");
  MetricAccumulator acc;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!std::isfinite(pred[i]) || !std::isfinite(truth[i])) throw ArgumentError("metrics: non-finite input");
    acc.add(pred[i], truth[i]);
  }
  return acc.finish();
}

double heterogeneity(const Matrix& x) {
  if (x.rows() == 0) return 0.0;
  const double n = static_cast<double>(x.rows());
  const double mean_sq = x.rowwise().squaredNorm().sum() / n;
  const Eigen::RowVectorXd mu = x.colwise().mean();
  return std::max(0.0, 2.0 * (mean_sq - mu.squaredNorm()));
}

DispersionReport dispersion_decomposition(const Matrix& x, const Matrix& p) {
  if (x.rows() != p.rows() || x.cols() != p.cols()) throw ArgumentError("dispersion: X and P shapes differ");
  DispersionReport r;
  if (x.rows() == 0) return r;
  const double n = static_cast<double>(x.rows());
  r.d_before = heterogeneity(x);
  r.d_after = heterogeneity(x + p);
  const Eigen::RowVectorXd mu_x = x.colwise().mean();
  const Eigen::RowVectorXd mu_p = p.colwise().mean();
  r.prompt_term = 2.0 * (p.rowwise().squaredNorm().sum() / n - mu_p.squaredNorm());
  r.cross_term = 4.0 * (x.cwiseProduct(p).sum() / n - mu_x.dot(mu_p));
  r.residual = (r.d_after - r.d_before) - r.prompt_term - r.cross_term;
  r.increase_held = r.d_after >= r.d_before;
  return r;
}

Matrix decorrelate_prompt(const Matrix& x, const Matrix& p) {
  const Matrix xc = x.rowwise() - x.colwise().mean();
  const Matrix pc = p.rowwise() - p.colwise().mean();
  const Matrix coef = xc.completeOrthogonalDecomposition().solve(pc);
  return pc - xc * coef;
}

Svd jacobi_svd(const Matrix& a, double tolerance, int max_sweeps) {
  if (a.rows() < a.cols()) {
    Svd t = jacobi_svd(a.transpose(), tolerance, max_sweeps);
    return Svd{std::move(t.v), std::move(t.singular), std::move(t.u)};
  }
  const Eigen::Index m = a.rows(), n = a.cols();
  Matrix u = a;
  Matrix v = Matrix::Identity(n, n);
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    bool rotated = false;
    for (Eigen::Index i = 0; i + 1 < n; ++i) {
      for (Eigen::Index j = i + 1; j < n; ++j) {
        const double alpha = u.col(i).squaredNorm();
        const double beta = u.col(j).squaredNorm();
        const double gamma = u.col(i).dot(u.col(j));
        if (gamma == 0.0 || std::abs(gamma) <= tolerance * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (Eigen::Index r = 0; r < m; ++r) {
          const double ui = u(r, i), uj = u(r, j);
          u(r, i) = c * ui - s * uj;
          u(r, j) = s * ui + c * uj;
        }
        for (Eigen::Index r = 0; r < n; ++r) {
          const double vi = v(r, i), vj = v(r, j);
          v(r, i) = c * vi - s * vj;
          v(r, j) = s * vi + c * vj;
        }
      }
    }
    if (!rotated) break;
  }

  Eigen::VectorXd sigma(n);
  for (Eigen::Index i = 0; i < n; ++i) sigma(i) = u.col(i).norm();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index x, Eigen::Index y) { return sigma(x) > sigma(y); });

  Svd out{Matrix(m, n), Eigen::VectorXd(n), Matrix(n, n)};
  for (Eigen::Index c = 0; c < n; ++c) {
    const Eigen::Index src = order[static_cast<std::size_t>(c)];
    out.singular(c) = sigma(src);
    out.u.col(c) = sigma(src) > 0.0 ? Eigen::VectorXd(u.col(src) / sigma(src)) : Eigen::VectorXd::Zero(m);
    out.v.col(c) = v.col(src);
  }
  return out;
}

SpectralReport svd_cumulative(const Matrix& p, std::size_t k) {
  SpectralReport r;
  r.k = k;
  if (p.size() == 0) throw ArgumentError("svd_cumulative: empty matrix");
  const Svd svd = jacobi_svd(p);
  const auto count = static_cast<std::size_t>(svd.singular.size());
  r.singular_values.assign(svd.singular.data(), svd.singular.data() + count);
  const double total = std::accumulate(r.singular_values.begin(), r.singular_values.end(), 0.0);
  if (total > 0.0) {
    std::vector<double> ratio(count);
    double run = 0.0;
    for (std::size_t i = 0; i < count; ++i) {
      run += r.singular_values[i];
      ratio[i] = std::min(1.0, run / total);
    }
    ratio.back() = 1.0;
    r.cumulative_ratio = std::move(ratio);
  }
  const auto keep = static_cast<Eigen::Index>(std::min(k, count));
  const Matrix approx =
      svd.u.leftCols(keep) * svd.singular.head(keep).asDiagonal() * svd.v.leftCols(keep).transpose();
  r.rank_k_error = (p - approx).norm();
  return r;
}

double projection_gap(const Matrix& phi) {
  const Eigen::Index k = phi.rows(), n = phi.cols();
  // Nonzero spectrum of Phi^T Phi equals the spectrum of Phi Phi^T; when
  // k < n the remaining n - k eigenvalues are 0, each contributing |1 - 0|.
  const Matrix gram = phi * phi.transpose();
  const Svd svd = jacobi_svd(gram);
  double gap = k < n ? 1.0 : 0.0;
  for (Eigen::Index i = 0; i < svd.singular.size(); ++i) gap = std::max(gap, std::abs(1.0 - svd.singular(i)));
  return gap;
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw ArgumentError("quantile of an empty sample");
  if (!(q >= 0.0 && q <= 1.0)) throw ArgumentError("quantile level must be in [0, 1]");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

ProbeReport random_projection_probe(const Matrix& p, const ProbeOptions& o) {
  if (o.trials == 0) throw ArgumentError("probe: trials must be at least 1");
  if (o.k == 0) throw ArgumentError("probe: k must be at least 1");
  const double norm = p.norm();
  if (norm == 0.0) throw ArgumentError("probe: matrix is zero");
  ProbeReport r;
  r.n = static_cast<std::size_t>(p.rows());
  r.d = static_cast<std::size_t>(p.cols());
  r.k = o.k;
  r.epsilon = o.epsilon;
  r.svd_floor = svd_cumulative(p, o.k).rank_k_error / norm;

  std::optional<double> oracle_error;
  if (o.svd_oracle) {
    const Svd svd = jacobi_svd(p);
    const Eigen::Index k = std::min<Eigen::Index>(static_cast<Eigen::Index>(o.k), svd.singular.size());
    const Matrix a = svd.u.leftCols(k) * svd.singular.head(k).asDiagonal();
    const Matrix b = svd.v.leftCols(k).transpose();
    oracle_error = (p - a * b).norm() / norm;
  }

  const Rng root(o.seed);
  const double scale = 1.0 / std::sqrt(static_cast<double>(o.k));
  std::size_t success = 0;
  for (std::size_t trial = 0; trial < o.trials; ++trial) {
    double err = 0.0;
    if (oracle_error) {
      err = *oracle_error;
      r.projection_gaps.push_back(0.0);
    } else {
      Rng rng = root.derive(static_cast<std::uint64_t>(trial));
      Matrix phi(static_cast<Eigen::Index>(o.k), p.rows());
      for (Eigen::Index i = 0; i < phi.rows(); ++i) {
        for (Eigen::Index j = 0; j < phi.cols(); ++j) phi(i, j) = scale * rng.normal();
      }
      const Matrix a = phi.transpose();
      const Matrix b = phi * p;
      err = (p - a * b).norm() / norm;
      r.projection_gaps.push_back(projection_gap(phi));
    }
    r.relative_errors.push_back(err);
    if (err <= o.epsilon) ++success;
  }
  r.success_rate = static_cast<double>(success) / static_cast<double>(o.trials);
  r.q_min = quantile(r.relative_errors, 0.0);
  r.q25 = quantile(r.relative_errors, 0.25);
  r.median = quantile(r.relative_errors, 0.5);
  r.q75 = quantile(r.relative_errors, 0.75);
  r.q_max = quantile(r.relative_errors, 1.0);
  if (!o.svd_oracle && o.k < r.n) {
    r.note = "k < n: Phi^T Phi has rank at most k, so ||I - Phi^T Phi||_2 >= 1 and the spectral-norm bound "
             "cannot certify an error below ||P||_F";
  }
  return r;
}

nlohmann::json to_json(const Metrics& m) {
  nlohmann::json j{{"MAE", m.mae}, {"RMSE", m.rmse}, {"count", m.count}, {"mape_count", m.mape_count}};
  j["MAPE"] = m.mape ? nlohmann::json(*m.mape) : nlohmann::json(nullptr);
  return j;
}

nlohmann::json to_json(const DispersionReport& r) {
  return {{"D_before", r.d_before},     {"D_after", r.d_after},   {"delta", r.d_after - r.d_before},
          {"prompt_term", r.prompt_term}, {"cross_term", r.cross_term}, {"residual", r.residual},
          {"increase_held", r.increase_held}};
}

nlohmann::json to_json(const SpectralReport& r) {
  nlohmann::json j{{"singular_values", r.singular_values}, {"k", r.k}, {"rank_k_error", r.rank_k_error}};
  j["cumulative_ratio"] = r.cumulative_ratio ? nlohmann::json(*r.cumulative_ratio) : nlohmann::json(nullptr);
  return j;
}

nlohmann::json to_json(const ProbeReport& r) {
  return {{"n", r.n},
          {"d", r.d},
          {"k", r.k},
          {"epsilon", r.epsilon},
          {"trials", r.relative_errors.size()},
          {"success_rate", r.success_rate},
          {"error_quantiles", {{"min", r.q_min}, {"q25", r.q25}, {"median", r.median}, {"q75", r.q75}, {"max", r.q_max}}},
          {"projection_gap_median", quantile(r.projection_gaps, 0.5)},
          {"svd_floor", r.svd_floor},
          {"note", r.note}};
}

}  // namespace eac
