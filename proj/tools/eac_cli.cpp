// Command-line front end over the C API.

#include <cstdint>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "eac/eac.h"
#include "json.hpp"

namespace {

int exit_code(eac_status s) {
  switch (s) {
    case EAC_OK: return 0;
    case EAC_ERR_DATA:
    case EAC_ERR_IO: return 2;
    case EAC_ERR_NUMERIC: return 3;
    default: return 1;
  }
}

int fail(eac_status s, const char* context) {
  std::cerr << "eac " << context << ": " << eac_last_error() << "\n";
  return exit_code(s);
}

// Takes ownership of a string returned by the library.
std::string take(char* s) {
  std::string out = s ? s : "";
  eac_string_free(s);
  return out;
}

struct RunArgs {
  std::string config, data, synth, out;
  std::vector<std::uint64_t> seeds;
};

int cmd_run(const RunArgs& a) {
  eac_experiment* exp = nullptr;
  eac_status s = eac_experiment_create(a.config.c_str(), &exp);
  if (s != EAC_OK) return fail(s, "run");
  s = a.data.empty() ? eac_experiment_use_synth(exp, a.synth.c_str())
                     : eac_experiment_use_manifest(exp, a.data.c_str());
  if (s == EAC_OK) {
    s = eac_experiment_run(exp, a.seeds.empty() ? nullptr : a.seeds.data(), a.seeds.size(), a.out.c_str());
  }
  if (s == EAC_OK) {
    char* table = nullptr;
    s = eac_experiment_table(exp, &table);
    if (s == EAC_OK) std::cout << take(table);
  }
  const int code = s == EAC_OK ? 0 : fail(s, "run");
  eac_experiment_destroy(exp);
  return code;
}

struct AnalyzeArgs {
  std::string what, pool, matrix, prompt, out;
  std::optional<std::size_t> k, trials;
  std::optional<double> epsilon;
  std::optional<std::uint64_t> seed;
  bool svd_oracle = false;
};

int cmd_analyze(const AnalyzeArgs& a) {
  nlohmann::json opts = nlohmann::json::object();
  if (!a.pool.empty()) opts["pool"] = a.pool;
  if (!a.matrix.empty()) opts["matrix"] = a.matrix;
  if (!a.prompt.empty()) opts["prompt"] = a.prompt;
  if (a.k) opts["k"] = *a.k;
  if (a.trials) opts["trials"] = *a.trials;
  if (a.epsilon) opts["epsilon"] = *a.epsilon;
  if (a.seed) opts["seed"] = *a.seed;
  if (a.svd_oracle) opts["svd_oracle"] = true;
  char* result = nullptr;
  const eac_status s =
      eac_analyze(a.what.c_str(), opts.dump().c_str(), a.out.empty() ? nullptr : a.out.c_str(), &result);
  if (s != EAC_OK) return fail(s, "analyze");
  std::cout << take(result);
  return 0;
}

int cmd_gradcheck(std::size_t seeds, const std::string& corrupt) {
  char* text = nullptr;
  int all_passed = 0;
  const eac_status s = eac_gradcheck(seeds, corrupt.empty() ? nullptr : corrupt.c_str(), &text, &all_passed);
  if (s != EAC_OK) return fail(s, "gradcheck");
  const auto report = nlohmann::json::parse(take(text));
  std::vector<std::string> failed;
  std::printf("%-22s %-14s %s\n", "primitive", "max rel err", "result");
  for (const auto& c : report["cases"]) {
    const bool ok = c["passed"].get<bool>();
    std::printf("%-22s %-14.3e %s\n", c["name"].get<std::string>().c_str(), c["max_relative_error"].get<double>(),
                ok ? "pass" : "FAIL");
    if (!ok) failed.push_back(c["name"].get<std::string>());
  }
  if (all_passed) return 0;
  std::cerr << "eac gradcheck: gradient mismatch in";
  for (const auto& name : failed) std::cerr << " " << name;
  std::cerr << "\n";
  return 3;
}

int cmd_synth(const std::string& spec, const std::string& out) {
  char* manifest = nullptr;
  const eac_status s = eac_synth_write(spec.c_str(), out.c_str(), &manifest);
  if (s != EAC_OK) return fail(s, "synth");
  std::cout << take(manifest) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continual spatio-temporal forecasting with expandable prompt pools"};
  app.set_version_flag("--version", std::string(eac_version()));
  app.require_subcommand(1);

  RunArgs run;
  auto* run_cmd = app.add_subcommand("run", "Train and evaluate one scheme over a stream");
  run_cmd->add_option("--config", run.config, "Experiment config (JSON)")->required();
  auto* data_opt = run_cmd->add_option("--data", run.data, "Stream manifest (JSON)");
  auto* synth_opt = run_cmd->add_option("--synth", run.synth, "Inline synthetic stream spec");
  data_opt->excludes(synth_opt);
  run_cmd->add_option("--out", run.out, "Output directory")->required();
  run_cmd->add_option("--seeds", run.seeds, "Comma-separated seed list")->delimiter(',');

  AnalyzeArgs an;
  auto* an_cmd = app.add_subcommand("analyze", "Heterogeneity and low-rank analyses");
  an_cmd->add_option("--what", an.what, "hetero | svd | prop1 | prop2")
      ->required()
      ->check(CLI::IsMember({"hetero", "svd", "prop1", "prop2"}));
  auto* pool_opt = an_cmd->add_option("--pool", an.pool, "Saved prompt pool");
  auto* matrix_opt = an_cmd->add_option("--matrix", an.matrix, "Dense matrix file");
  an_cmd->add_option("--prompt", an.prompt, "Dense prompt matrix paired with --matrix");
  an_cmd->add_option("--k", an.k, "Rank");
  an_cmd->add_option("--epsilon", an.epsilon, "Probe success threshold");
  an_cmd->add_option("--trials", an.trials, "Probe trials");
  an_cmd->add_option("--seed", an.seed, "Probe seed");
  an_cmd->add_flag("--svd-oracle", an.svd_oracle, "Factor with the truncated SVD instead of a projection");
  an_cmd->add_option("--out", an.out, "Output directory");
  (void)pool_opt;
  (void)matrix_opt;

  std::size_t gc_seeds = 20;
  std::string corrupt;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable primitive");
  gc_cmd->add_option("--seeds", gc_seeds, "Random draws per case")->check(CLI::PositiveNumber);
  gc_cmd->add_option("--corrupt", corrupt, "Scale the gradient of one case (test hook)");

  std::string synth_spec, synth_out;
  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic stream to disk");
  synth_cmd->add_option("--synth", synth_spec, "Inline synthetic stream spec")->required();
  synth_cmd->add_option("--out", synth_out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  if (run_cmd->parsed()) {
    if (run.data.empty() && run.synth.empty()) {
      std::cerr << "eac run: one of --data or --synth is required\n";
      return 1;
    }
    return cmd_run(run);
  }
  if (an_cmd->parsed()) {
    if (an.pool.empty() && an.matrix.empty()) {
      std::cerr << "eac analyze: one of --pool or --matrix is required\n";
      return 1;
    }
    return cmd_analyze(an);
  }
  if (gc_cmd->parsed()) return cmd_gradcheck(gc_seeds, corrupt);
  if (synth_cmd->parsed()) return cmd_synth(synth_spec, synth_out);
  return 1;
}
