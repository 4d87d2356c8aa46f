// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fail.
#include <Eigen/SVD>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "eac/analysis.hpp"
#include "eac/data.hpp"
#include "eac/eac.h"
#include "eac/engine.hpp"
#include "eac/gradcheck_suite.hpp"
#include "eac/prompt_pool.hpp"
#include "eac/rng.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace eac;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int failures = 0;

void verdict(int id, const std::string& title, bool pass, const std::string& detail) {
  std::printf("%s [%d] %s: %s\n", pass ? "PASS" : "FAIL", id, title.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

Matrix gaussian(Rng& rng, Eigen::Index rows, Eigen::Index cols, double scale) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = scale * rng.normal();
  }
  return m;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void criterion_decomposition() {
  const auto t0 = Clock::now();
  Rng rng(101);
  double worst = 0.0, worst_neutral = 0.0, min_prompt = INFINITY, min_delta_ratio = INFINITY;
  int degenerate = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const auto n = static_cast<Eigen::Index>(2 + rng.below(49));
    const auto d = static_cast<Eigen::Index>(1 + rng.below(32));
    const Matrix x = gaussian(rng, n, d, std::exp(rng.uniform(-2.0, 2.0)));
    Matrix p = gaussian(rng, n, d, std::exp(rng.uniform(-2.0, 2.0)));
    if (trial % 2 == 1) p += 0.7 * x;  // strongly correlated pairs
    const auto r = dispersion_decomposition(x, p);
    const double delta = r.d_after - r.d_before;
    worst = std::max(worst, std::abs(r.residual) / (1.0 + std::abs(delta)));

    const auto q = dispersion_decomposition(x, decorrelate_prompt(x, p));
    const double dq = q.d_after - q.d_before;
    worst_neutral = std::max(worst_neutral, std::abs(dq - q.prompt_term) / (1.0 + std::abs(dq)));
    min_prompt = std::min(min_prompt, q.prompt_term);
    min_delta_ratio = std::min(min_delta_ratio, dq / (1.0 + std::abs(dq)));
    if (n - 1 <= d) ++degenerate;  // centered X spans every centered P, so the neutralized P is zero
  }
  const double t = seconds_since(t0);
  const bool pass =
      worst <= 1e-9 && worst_neutral <= 1e-9 && min_prompt >= 0.0 && min_delta_ratio >= -1e-9 && t < 5.0;
  verdict(1, "dispersion decomposition", pass,
          fmt("max residual/(1+|delta|) %.2e", worst) + fmt(", neutralized max |delta-prompt_term|/(1+|delta|) %.2e", worst_neutral) +
              fmt(", min prompt_term %.3e (>= 0)", min_prompt) +
              fmt(", min delta/(1+|delta|) %.2e (>= -1e-9)", min_delta_ratio) + "; " + std::to_string(degenerate) +
              fmt(" trials with n-1 <= d; 200 pairs in %.2f s (< 5 s)", t));
}

void criterion_gradcheck() {
  const auto t0 = Clock::now();
  const auto cases = run_gradcheck_suite(20, 1e-4);
  const double t = seconds_since(t0);
  double worst = 0.0;
  std::string failed;
  for (const auto& c : cases) {
    worst = std::max(worst, c.max_relative_error);
    if (!c.passed) failed += " " + c.name;
  }
  verdict(2, "gradient verification", failed.empty() && worst < 1e-4 && t < 60.0,
          std::to_string(cases.size()) + " cases x 20 seeds" + fmt(", max relative error %.2e (< 1e-4)", worst) +
              fmt(", %.2f s (< 60 s)", t) + (failed.empty() ? "" : ", failed:" + failed));
}

void criterion_eckart_young() {
  const auto t0 = Clock::now();
  Rng rng(303);
  double worst = 0.0, worst_end = 0.0;
  bool monotone = true;
  for (int trial = 0; trial < 50; ++trial) {
    const auto rows = static_cast<Eigen::Index>(2 + rng.below(39));
    const auto cols = static_cast<Eigen::Index>(2 + rng.below(39));
    const Matrix a = gaussian(rng, rows, cols, 1.0);
    const std::size_t k = 1 + rng.below(static_cast<std::uint64_t>(std::min(rows, cols)));
    const auto r = svd_cumulative(a, k);
    const Eigen::VectorXd s = Eigen::BDCSVD<Matrix>(a).singularValues();
    double tail = 0.0;
    for (Eigen::Index i = static_cast<Eigen::Index>(k); i < s.size(); ++i) tail += s(i) * s(i);
    worst = std::max(worst, std::abs(r.rank_k_error - std::sqrt(tail)));
    const auto& c = *r.cumulative_ratio;
    for (std::size_t i = 1; i < c.size(); ++i) monotone = monotone && c[i] >= c[i - 1];
    worst_end = std::max(worst_end, std::abs(c.back() - 1.0));
  }
  const double t = seconds_since(t0);
  verdict(3, "Eckart-Young oracle", worst <= 1e-8 && monotone && worst_end <= 1e-12 && t < 5.0,
          fmt("max |error - tail| %.2e (<= 1e-8)", worst) + (monotone ? ", cumulative monotone" : ", NOT monotone") +
              fmt(", max |terminal - 1| %.1e", worst_end) + fmt(", 50 matrices in %.2f s (< 5 s)", t));
}

void criterion_param_ratio() {
  std::vector<NodeId> ids;
  for (int i = 0; i < 500; ++i) ids.push_back("n" + std::to_string(i));
  const auto pool = PromptPool::create(ids, 64, 6, PoolMode::kLowRank, 1);
  const auto c = pool.param_count();
  const double expected = (500.0 * 6 + 6 * 64) / (500.0 * 64);
  ExperimentConfig cfg;
  cfg.d = 64;
  const std::size_t backbone = Backbone(cfg.backbone_spec(), 1).parameter_count();
  const double whole = static_cast<double>(c.tunable) / static_cast<double>(c.tunable + backbone);
  verdict(7, "low-rank parameter ratio", c.tunable == 3384 && c.materialized == 32000 && c.ratio == expected,
          std::to_string(c.tunable) + "/" + std::to_string(c.materialized) + fmt(" = %.17g", c.ratio) +
              fmt(" (expected %.17g)", expected) + "; whole-model tunable share vs a " + std::to_string(backbone) +
              fmt("-parameter backbone %.4f (reported only)", whole));
}

struct SchemeRuns {
  std::vector<SeedResult> seeds;
  double seconds = 0.0;
};

double mean_avg_mae(const SchemeRuns& r) {
  std::vector<double> maes;
  for (const auto& s : r.seeds) maes.push_back(period_average(s, "avg", "MAE"));
  return summarize(maes).mean;
}

// Mean per-epoch wall time over periods 2 and later, all seeds.
double late_epoch_seconds(const SchemeRuns& r) {
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& s : r.seeds) {
    for (const auto& p : s.periods) {
      if (p.period_index < 2 || p.epochs_run == 0) continue;
      sum += p.wall_seconds_per_epoch;
      ++count;
    }
  }
  return count ? sum / static_cast<double>(count) : NAN;
}

const char* kStream = "n0=40,growth=10,periods=3,T=2000,seed=7";
const char* kDeskConfig =
    R"({"scheme": "EAC", "d": 16, "k": 6, "epochs_max": 15, "batch_size": 32, "window_stride": 4, "patience": 5})";

void criteria_stream(const fs::path& out_dir) {
  const StreamData stream = synth_stream(parse_synth_spec(kStream));
  const ExperimentConfig base = parse_config(json::parse(kDeskConfig));
  std::printf("  stream %s, config %s\n", kStream, kDeskConfig);

  // Schemes run interleaved per seed; EAC and ContinualAN swap places on
  // alternate seeds.
  SchemeRuns eac, an, nn, pre;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    std::vector<std::pair<Scheme, SchemeRuns*>> order{{Scheme::kEAC, &eac}, {Scheme::kContinualAN, &an}};
    if (seed % 2 == 0) std::swap(order[0], order[1]);
    order.push_back({Scheme::kContinualNN, &nn});
    order.push_back({Scheme::kPretrainST, &pre});
    for (const auto& [scheme, runs] : order) {
      ExperimentConfig config = base;
      config.scheme = scheme;
      config.track_heterogeneity = scheme == Scheme::kEAC;
      const auto t0 = Clock::now();
      runs->seeds.push_back(run_stream(config, stream, seed));
      runs->seconds += seconds_since(t0);
    }
    std::printf("  seed %llu done\n", static_cast<unsigned long long>(seed));
    std::fflush(stdout);
  }
  for (const auto& [name, runs] : {std::pair{"EAC", &eac}, std::pair{"ContinualNN", &nn},
                                   std::pair{"PretrainST", &pre}, std::pair{"ContinualAN", &an}}) {
    std::printf("  %-12s Avg MAE %.4f over 5 seeds, %.1f s\n", name, mean_avg_mae(*runs), runs->seconds);
  }

  bool frozen = true;
  std::size_t checked = 0;
  for (const auto& s : eac.seeds) {
    for (const auto& p : s.periods) {
      frozen = frozen && p.backbone_hash == s.periods.front().backbone_hash;
      ++checked;
    }
    frozen = frozen && s.final_model->backbone.hash() == s.periods.front().backbone_hash;
  }
  verdict(4, "frozen backbone", frozen && checked == 15,
          std::to_string(checked) + " period checkpoints over 5 seeds" +
              (frozen ? ", backbone hash identical after periods 1, 2, 3" : ", backbone hash CHANGED"));

  const double e = mean_avg_mae(eac), m_nn = mean_avg_mae(nn) - e, m_pre = mean_avg_mae(pre) - e;
  const double t5 = eac.seconds + nn.seconds + pre.seconds;
  verdict(5, "accuracy ordering", m_nn >= 0.0 && m_pre >= 0.0 && t5 < 600.0,
          fmt("EAC %.4f", e) + fmt(", ContinualNN %.4f", e + m_nn) + fmt(" (margin %+.4f)", m_nn) +
              fmt(", PretrainST %.4f", e + m_pre) + fmt(" (margin %+.4f)", m_pre) +
              fmt("; %.1f s on one core (< 600 s)", t5));

  // Timing runs at the default width d = 64 on the same stream and windows.
  const double narrow_ratio = late_epoch_seconds(an) / late_epoch_seconds(eac);
  ExperimentConfig wide = base;
  wide.d = 64;
  wide.epochs_max = 3;
  wide.track_heterogeneity = false;
  SchemeRuns wide_eac, wide_an;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    std::vector<std::pair<Scheme, SchemeRuns*>> order{{Scheme::kEAC, &wide_eac}, {Scheme::kContinualAN, &wide_an}};
    if (seed % 2 == 0) std::swap(order[0], order[1]);
    for (const auto& [scheme, runs] : order) {
      ExperimentConfig config = wide;
      config.scheme = scheme;
      runs->seeds.push_back(run_stream(config, stream, seed));
    }
  }
  const double t_eac = late_epoch_seconds(wide_eac);
  const double t_an = late_epoch_seconds(wide_an);
  verdict(6, "per-epoch speedup", t_an / t_eac >= 1.1,
          fmt("d=64, 3 epochs/period, 5 seeds: EAC %.3f s/epoch", t_eac) +
              fmt(", ContinualAN %.3f s/epoch at periods >= 2", t_an) + fmt(", ratio %.3f (>= 1.1)", t_an / t_eac) +
              fmt("; at d=16 the ratio is %.3f", narrow_ratio));

  std::ofstream csv(out_dir / "heterogeneity.csv");
  csv << "seed,period,epoch,D\n";
  int rose = 0;
  std::string per_seed;
  for (const auto& s : eac.seeds) {
    double first = NAN, last = NAN;
    for (const auto& h : s.heterogeneity) {
      csv << s.seed << ',' << h.period_index << ',' << h.epoch << ',' << fmt("%.17g", h.value) << '\n';
      if (h.period_index != 1) continue;
      if (h.epoch == 0) first = h.value;
      last = h.value;
    }
    if (last > first) ++rose;
    per_seed += fmt(" %.3g", first) + fmt("->%.3g", last);
  }
  verdict(8, "heterogeneity trend", rose >= 4,
          "D(fused) rose during period-1 training in " + std::to_string(rose) + "/5 seeds (>= 4);" + per_seed +
              "; series in " + (out_dir / "heterogeneity.csv").string());
}

void criterion_determinism(const fs::path& out_dir) {
  std::vector<fs::path> runs{out_dir / "run_a", out_dir / "run_b"};
  std::vector<std::string> errors;
  const char* workers[] = {"2", "1"};
  for (std::size_t i = 0; i < runs.size(); ++i) {
    fs::remove_all(runs[i]);
    ::setenv("EAC_WORKERS", workers[i], 1);
    eac_experiment* exp = nullptr;
    if (eac_experiment_create_json(kDeskConfig, &exp) != EAC_OK || eac_experiment_use_synth(exp, kStream) != EAC_OK) {
      errors.push_back(eac_last_error());
    }
    const std::uint64_t seeds[] = {1, 2};
    if (exp && eac_experiment_run(exp, seeds, 2, runs[i].string().c_str()) != EAC_OK) errors.push_back(eac_last_error());
    eac_experiment_destroy(exp);
  }
  ::unsetenv("EAC_WORKERS");
  std::size_t compared = 0;
  std::string differ;
  for (const auto& entry : fs::directory_iterator(runs[0])) {
    const std::string name = entry.path().filename().string();
    if (name == "timings.json" || name == "manifest.json") continue;
    ++compared;
    if (slurp(entry.path()) != slurp(runs[1] / name)) differ += " " + name;
  }
  verdict(9, "determinism", errors.empty() && differ.empty() && compared >= 8,
          std::to_string(compared) + " report files byte-identical across reruns (2 workers vs 1)" +
              (differ.empty() ? "" : "; differ:" + differ) + (errors.empty() ? "" : "; error: " + errors.front()));
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path out_dir = argc > 1 ? fs::path(argv[1]) : fs::path("acceptance_out");
  fs::create_directories(out_dir);
  const auto t0 = Clock::now();
  const std::vector<std::pair<int, std::function<void()>>> steps{
      {1, criterion_decomposition}, {2, criterion_gradcheck}, {3, criterion_eckart_young},
      {7, criterion_param_ratio},   {4, [&] { criteria_stream(out_dir); }}, {9, [&] { criterion_determinism(out_dir); }}};
  for (const auto& [id, step] : steps) {
    try {
      step();
    } catch (const std::exception& e) {
      verdict(id, "criterion aborted", false, e.what());
    }
  }
  std::printf("%d failure(s), %.1f s total\n", failures, seconds_since(t0));
  return failures == 0 ? 0 : 1;
}
