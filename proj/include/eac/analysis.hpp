#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "eac/graph.hpp"
#include "json.hpp"

namespace eac {

// Near-zero truth values are excluded from MAPE below this magnitude.
inline constexpr double kMapeMask = 1e-4;

struct Metrics {
  double mae = 0.0;
  double rmse = 0.0;
  std::optional<double> mape;  // percent; nullopt when every entry is masked
  std::size_t count = 0;
  std::size_t mape_count = 0;
};

Metrics compute_metrics(std::span<const double> pred, std::span<const double> truth);

// Running sums so metrics can be pooled over several slices.
struct MetricAccumulator {
  double abs_sum = 0.0;
  double sq_sum = 0.0;
  double ape_sum = 0.0;
  std::size_t count = 0;
  std::size_t mape_count = 0;

  void add(double pred, double truth);
  Metrics finish() const;
};

// Average Node Deviation: (1/n^2) sum_ij ||x_i - x_j||^2, evaluated through
// 2 (mean ||x_i||^2 - ||mean x||^2).
double heterogeneity(const Matrix& x);

struct DispersionReport {
  double d_before = 0.0;     // D(X)
  double d_after = 0.0;      // D(X + P)
  double prompt_term = 0.0;  // 2 (mean ||p_i||^2 - ||mean p||^2)
  double cross_term = 0.0;   // 4 (mean x_i.p_i - mean_x . mean_p)
  double residual = 0.0;     // (d_after - d_before) - prompt_term - cross_term
  bool increase_held = false;  // d_after >= d_before
};

DispersionReport dispersion_decomposition(const Matrix& x, const Matrix& p);

// Replaces p by its column-centered part with the least-squares projection on
// the column-centered x removed, which zeroes the sample cross-covariance.
Matrix decorrelate_prompt(const Matrix& x, const Matrix& p);

struct Svd {
  Matrix u;                  // m x r
  Eigen::VectorXd singular;  // r, nonincreasing
  Matrix v;                  // n x r
};

// One-sided Jacobi SVD; r = min(m, n).
Svd jacobi_svd(const Matrix& a, double tolerance = 1e-15, int max_sweeps = 100);

struct SpectralReport {
  std::vector<double> singular_values;
  std::optional<std::vector<double>> cumulative_ratio;  // nullopt for a zero matrix
  std::size_t k = 0;
  double rank_k_error = 0.0;  // ||P - P_k||_F by reconstruction
};

SpectralReport svd_cumulative(const Matrix& p, std::size_t k = 6);

struct ProbeOptions {
  std::size_t k = 6;
  double epsilon = 0.5;
  std::size_t trials = 100;
  std::uint64_t seed = 0;
  bool svd_oracle = false;  // factor with the truncated SVD instead of a random projection
};

struct ProbeReport {
  std::size_t n = 0, d = 0, k = 0;
  double epsilon = 0.0;
  std::vector<double> relative_errors;  // per trial
  std::vector<double> projection_gaps;  // ||I - Phi^T Phi||_2 per trial
  double success_rate = 0.0;
  double q_min = 0.0, q25 = 0.0, median = 0.0, q75 = 0.0, q_max = 0.0;
  double svd_floor = 0.0;  // best rank-k relative error
  std::string note;
};

ProbeReport random_projection_probe(const Matrix& p, const ProbeOptions& options);

// ||I - Phi^T Phi||_2 for a k x n matrix, via the eigenvalues of Phi Phi^T.
double projection_gap(const Matrix& phi);

double quantile(std::vector<double> values, double q);

nlohmann::json to_json(const Metrics& m);
nlohmann::json to_json(const DispersionReport& r);
nlohmann::json to_json(const SpectralReport& r);
nlohmann::json to_json(const ProbeReport& r);

}  // namespace eac
