#include "eac/eac.h"

#include <chrono>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "eac/analysis.hpp"
#include "eac/data.hpp"
#include "eac/engine.hpp"
#include "eac/error.hpp"
#include "eac/gradcheck_suite.hpp"
#include "eac/prompt_pool.hpp"
#include "eac/rng.hpp"
#include "json.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

struct eac_pool {
  eac::PromptPool pool;
};

struct eac_experiment {
  eac::ExperimentConfig config;
  std::string config_path;
  std::string config_text;
  std::optional<eac::StreamData> stream;
  json data_source;
  std::optional<eac::ExperimentReport> report;
};

namespace {

thread_local std::string g_last_error;

eac_status status_of(eac::ErrorKind kind) {
  switch (kind) {
    case eac::ErrorKind::kConfig: return EAC_ERR_CONFIG;
    case eac::ErrorKind::kData: return EAC_ERR_DATA;
    case eac::ErrorKind::kNumeric: return EAC_ERR_NUMERIC;
    case eac::ErrorKind::kArgument: return EAC_ERR_ARGUMENT;
    case eac::ErrorKind::kIo: return EAC_ERR_IO;
  }
  return EAC_ERR_INTERNAL;
}

template <typename F>
eac_status guard(F&& body) {
  try {
    body();
    g_last_error.clear();
    return EAC_OK;
  } catch (const eac::Error& e) {
    g_last_error = e.what();
    return status_of(e.kind());
  } catch (const json::exception& e) {
    g_last_error = std::string("malformed JSON: ") + e.what();
    return EAC_ERR_CONFIG;
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return EAC_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return EAC_ERR_INTERNAL;
  }
}

void require(bool ok, const char* what) {
  if (!ok) throw eac::ArgumentError(what);
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

std::vector<std::string> id_list(const char* const* ids, std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) {
    require(ids[i] != nullptr, "node id must not be null");
    out.emplace_back(ids[i]);
  }
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw eac::IoError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw eac::IoError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw eac::IoError("write failed for '" + path.string() + "'");
}

std::string digest(const std::string& bytes) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(eac::fnv1a64(bytes)));
  return std::string("fnv1a64:") + buf;
}

std::size_t worker_count() {
  const char* env = std::getenv("EAC_WORKERS");
  if (!env || !*env) return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (*end != '\0' || v < 1) throw eac::ConfigError("EAC_WORKERS must be a positive integer");
  return static_cast<std::size_t>(v);
}

eac::Matrix load_matrix_input(const json& opts, const char* key) {
  const std::string path = opts.at(key).get<std::string>();
  return eac::read_dense_matrix(path);
}

// The prompt matrix comes from a pool file or a dense matrix file.
eac::Matrix load_prompt_input(const json& opts) {
  if (opts.contains("pool")) {
    const eac::nn::Tensor t = eac::PromptPool::load(opts["pool"].get<std::string>()).materialize();
    eac::Matrix m(static_cast<Eigen::Index>(t.dim(0)), static_cast<Eigen::Index>(t.dim(1)));
    for (std::size_t i = 0; i < t.dim(0); ++i) {
      for (std::size_t j = 0; j < t.dim(1); ++j) m(i, j) = t[i * t.dim(1) + j];
    }
    return m;
  }
  if (opts.contains("prompt")) return load_matrix_input(opts, "prompt");
  if (opts.contains("matrix")) return load_matrix_input(opts, "matrix");
  throw eac::ArgumentError("analysis needs a pool or matrix input");
}

json analyze(const std::string& what, const json& opts) {
  if (what == "hetero") {
    if (!opts.contains("matrix")) {
      const eac::Matrix p = load_prompt_input(opts);
      return json{{"n", p.rows()}, {"d", p.cols()}, {"D", eac::heterogeneity(p)}};
    }
    const eac::Matrix x = load_matrix_input(opts, "matrix");
    json out{{"n", x.rows()}, {"d", x.cols()}, {"D", eac::heterogeneity(x)}};
    if (opts.contains("prompt") || opts.contains("pool")) {
      const eac::Matrix p = opts.contains("pool") ? load_prompt_input(json{{"pool", opts["pool"]}})
                                                  : load_matrix_input(opts, "prompt");
      out["D_fused"] = eac::heterogeneity(x + p);
      out["decomposition"] = eac::to_json(eac::dispersion_decomposition(x, p));
    }
    return out;
  }
  if (what == "prop1") {
    if (!opts.contains("matrix")) throw eac::ArgumentError("prop1 needs a matrix input (X)");
    if (!opts.contains("prompt") && !opts.contains("pool")) {
      throw eac::ArgumentError("prop1 needs a prompt matrix or pool (P)");
    }
    const eac::Matrix x = load_matrix_input(opts, "matrix");
    const eac::Matrix p = opts.contains("pool") ? load_prompt_input(json{{"pool", opts["pool"]}})
                                                : load_matrix_input(opts, "prompt");
    json out = eac::to_json(eac::dispersion_decomposition(x, p));
    out["decorrelated"] = eac::to_json(eac::dispersion_decomposition(x, eac::decorrelate_prompt(x, p)));
    return out;
  }
  if (what == "svd") {
    const std::size_t k = opts.value("k", std::size_t{6});
    return eac::to_json(eac::svd_cumulative(load_prompt_input(opts), k));
  }
  if (what == "prop2") {
    eac::ProbeOptions po;
    po.k = opts.value("k", po.k);
    po.epsilon = opts.value("epsilon", po.epsilon);
    po.trials = opts.value("trials", po.trials);
    po.seed = opts.value("seed", po.seed);
    po.svd_oracle = opts.value("svd_oracle", po.svd_oracle);
    return eac::to_json(eac::random_projection_probe(load_prompt_input(opts), po));
  }
  throw eac::ArgumentError("unknown analysis '" + what + "' (expected hetero, svd, prop1 or prop2)");
}

json input_digests(const eac_experiment& exp) {
  json d{{"config", exp.config_path.empty() ? digest(exp.config_text) : digest(read_file(exp.config_path))}};
  if (exp.data_source.value("kind", "") == "manifest") {
    const std::string path = exp.data_source["path"].get<std::string>();
    d["data"][path] = digest(read_file(path));
    const json m = json::parse(read_file(path));
    const fs::path base = fs::path(path).parent_path();
    for (const auto& period : m.at("periods")) {
      for (const char* key : {"nodes", "distances", "observations"}) {
        if (!period.contains(key)) continue;
        fs::path p = period[key].get<std::string>();
        if (p.is_relative()) p = base / p;
        d["data"][p.string()] = digest(read_file(p.string()));
      }
    }
  } else {
    d["data"]["synth"] = digest(exp.data_source.value("spec", ""));
  }
  return d;
}

void write_run_outputs(const eac::ExperimentReport& report, const fs::path& dir, json& manifest) {
  json seed_files = json::array();
  write_file(dir / "report.json", eac::report_json(report).dump(2) + "\n");
  write_file(dir / "table.txt", eac::format_table(report));
  write_file(dir / "timings.json", eac::timings_json(report).dump(2) + "\n");
  std::ostringstream hetero;
  hetero << "seed,period,epoch,D\n";
  bool any_hetero = false;
  for (const auto& s : report.seeds) {
    const std::string tag = "seed_" + std::to_string(s.seed);
    write_file(dir / (tag + ".json"), eac::seed_json(s).dump(2) + "\n");
    json entry{{"seed", s.seed}, {"report", tag + ".json"}};
    if (s.final_model) {
      s.final_model->backbone.save((dir / (tag + "_backbone.txt")).string());
      entry["backbone"] = tag + "_backbone.txt";
      if (s.final_model->pool) {
        s.final_model->pool->save((dir / (tag + "_pool.txt")).string());
        entry["pool"] = tag + "_pool.txt";
      }
    }
    for (const auto& h : s.heterogeneity) {
      any_hetero = true;
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.17g", h.value);
      hetero << s.seed << "," << h.period_index << "," << h.epoch << "," << buf << "\n";
    }
    seed_files.push_back(entry);
  }
  if (any_hetero) write_file(dir / "heterogeneity.csv", hetero.str());
  manifest["seed_reports"] = seed_files;
}

eac_status create_experiment(const std::string& text, const std::string& path, eac_experiment** out) {
  return guard([&] {
    require(out != nullptr, "out must not be null");
    *out = nullptr;
    json j;
    try {
      j = json::parse(text);
    } catch (const json::parse_error& e) {
      throw eac::ConfigError("config " + (path.empty() ? std::string("text") : "'" + path + "'") +
                             " is not valid JSON: " + e.what());
    }
    auto exp = std::make_unique<eac_experiment>();
    exp->config = eac::parse_config(j);
    exp->config_path = path;
    exp->config_text = text;
    *out = exp.release();
  });
}

}  // namespace

extern "C" {

const char* eac_version(void) {
  static const std::string v = eac::library_version();
  return v.c_str();
}

const char* eac_last_error(void) { return g_last_error.c_str(); }

void eac_string_free(char* s) { std::free(s); }

eac_status eac_pool_create(const char* const* node_ids, size_t n, size_t d, size_t k, const char* mode,
                           uint64_t seed, eac_pool** out) {
  return guard([&] {
    require(out != nullptr && (node_ids != nullptr || n == 0), "null argument");
    *out = nullptr;
    const eac::PoolMode m = eac::parse_pool_mode(mode ? mode : "lowrank");
    *out = new eac_pool{eac::PromptPool::create(id_list(node_ids, n), d, k, m, seed)};
  });
}

eac_status eac_pool_expand(eac_pool* pool, const char* const* new_ids, size_t count, int period_index) {
  return guard([&] {
    require(pool != nullptr && (new_ids != nullptr || count == 0), "null argument");
    pool->pool.expand(id_list(new_ids, count), period_index);
  });
}

eac_status eac_pool_shape(const eac_pool* pool, size_t* rows, size_t* cols) {
  return guard([&] {
    require(pool != nullptr && rows != nullptr && cols != nullptr, "null argument");
    *rows = pool->pool.rows();
    *cols = pool->pool.width();
  });
}

eac_status eac_pool_materialize(const eac_pool* pool, double* out, size_t capacity) {
  return guard([&] {
    require(pool != nullptr && out != nullptr, "null argument");
    const eac::nn::Tensor t = pool->pool.materialize();
    if (capacity < t.size()) {
      throw eac::ArgumentError("buffer holds " + std::to_string(capacity) + " values, pool needs " +
                               std::to_string(t.size()));
    }
    std::memcpy(out, t.data(), t.size() * sizeof(double));
  });
}

eac_status eac_pool_param_count(const eac_pool* pool, size_t* tunable, size_t* materialized, double* ratio) {
  return guard([&] {
    require(pool != nullptr, "null argument");
    const eac::ParamCount c = pool->pool.param_count();
    if (tunable) *tunable = c.tunable;
    if (materialized) *materialized = c.materialized;
    if (ratio) *ratio = c.ratio;
  });
}

eac_status eac_pool_save(const eac_pool* pool, const char* path) {
  return guard([&] {
    require(pool != nullptr && path != nullptr, "null argument");
    pool->pool.save(path);
  });
}

eac_status eac_pool_load(const char* path, size_t expected_d, eac_pool** out) {
  return guard([&] {
    require(path != nullptr && out != nullptr, "null argument");
    *out = nullptr;
    *out = new eac_pool{eac::PromptPool::load(path, expected_d)};
  });
}

void eac_pool_destroy(eac_pool* pool) { delete pool; }

eac_status eac_experiment_create(const char* config_path, eac_experiment** out) {
  std::string text;
  const eac_status s = guard([&] {
    require(config_path != nullptr, "config path must not be null");
    try {
      text = read_file(config_path);
    } catch (const eac::IoError& e) {
      throw eac::ConfigError(e.what());
    }
  });
  if (s != EAC_OK) return s;
  return create_experiment(text, config_path, out);
}

eac_status eac_experiment_create_json(const char* config_json, eac_experiment** out) {
  if (!config_json) {
    g_last_error = "config text must not be null";
    return EAC_ERR_ARGUMENT;
  }
  return create_experiment(config_json, "", out);
}

eac_status eac_experiment_use_synth(eac_experiment* exp, const char* synth_spec) {
  return guard([&] {
    require(exp != nullptr && synth_spec != nullptr, "null argument");
    const eac::SynthSpec spec = eac::parse_synth_spec(synth_spec);
    exp->stream = eac::synth_stream(spec);
    exp->data_source = json{{"kind", "synth"}, {"spec", eac::to_string(spec)}};
  });
}

eac_status eac_experiment_use_manifest(eac_experiment* exp, const char* manifest_path) {
  return guard([&] {
    require(exp != nullptr && manifest_path != nullptr, "null argument");
    exp->stream = eac::load_stream_manifest(manifest_path);
    exp->data_source = json{{"kind", "manifest"}, {"path", manifest_path}};
  });
}

eac_status eac_experiment_run(eac_experiment* exp, const uint64_t* seeds, size_t n_seeds, const char* out_dir) {
  const auto start = std::chrono::steady_clock::now();
  json manifest;
  std::optional<fs::path> dir;
  const eac_status s = guard([&] {
    require(exp != nullptr, "null experiment");
    if (!exp->stream) throw eac::DataError("no data source: call use_synth or use_manifest first");
    std::vector<std::uint64_t> seed_list = exp->config.seeds;
    if (seeds != nullptr && n_seeds > 0) seed_list.assign(seeds, seeds + n_seeds);
    manifest = json{{"library_version", eac::library_version()},
                    {"config", eac::to_json(exp->config)},
                    {"config_path", exp->config_path},
                    {"data", exp->data_source},
                    {"seeds", seed_list}};
    if (out_dir != nullptr) {
      dir = fs::path(out_dir);
      std::error_code ec;
      fs::create_directories(*dir, ec);
      if (ec) throw eac::IoError("cannot create output directory '" + dir->string() + "': " + ec.message());
    }
    manifest["digests"] = input_digests(*exp);
    exp->report.reset();
    exp->report = eac::run_experiment(exp->config, *exp->stream, seed_list, worker_count());
    if (dir) write_run_outputs(*exp->report, *dir, manifest);
  });
  if (dir) {
    manifest["status"] = s == EAC_OK ? "ok" : "error";
    if (s != EAC_OK) manifest["error"] = {{"code", static_cast<int>(s)}, {"message", g_last_error}};
    manifest["total_wall_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const std::string saved = g_last_error;
    const eac_status ws = guard([&] { write_file(*dir / "manifest.json", manifest.dump(2) + "\n"); });
    if (s != EAC_OK) {
      g_last_error = saved;
      return s;
    }
    return ws;
  }
  return s;
}

eac_status eac_experiment_table(const eac_experiment* exp, char** out) {
  return guard([&] {
    require(exp != nullptr && out != nullptr, "null argument");
    if (!exp->report) throw eac::ArgumentError("experiment has not been run");
    *out = dup_string(eac::format_table(*exp->report));
  });
}

eac_status eac_experiment_report(const eac_experiment* exp, char** out) {
  return guard([&] {
    require(exp != nullptr && out != nullptr, "null argument");
    if (!exp->report) throw eac::ArgumentError("experiment has not been run");
    *out = dup_string(eac::report_json(*exp->report).dump(2));
  });
}

void eac_experiment_destroy(eac_experiment* exp) { delete exp; }

eac_status eac_synth_write(const char* synth_spec, const char* out_dir, char** manifest_out) {
  return guard([&] {
    require(synth_spec != nullptr && out_dir != nullptr, "null argument");
    const eac::SynthSpec spec = eac::parse_synth_spec(synth_spec);
    const std::string path = eac::write_stream(eac::synth_stream(spec), out_dir, spec.threshold);
    if (manifest_out) *manifest_out = dup_string(path);
  });
}

eac_status eac_analyze(const char* what, const char* options_json, const char* out_dir, char** json_out) {
  return guard([&] {
    require(what != nullptr, "analysis name must not be null");
    json opts = json::object();
    if (options_json && *options_json) {
      try {
        opts = json::parse(options_json);
      } catch (const json::parse_error& e) {
        throw eac::ArgumentError(std::string("analysis options are not valid JSON: ") + e.what());
      }
    }
    const json result = analyze(what, opts);
    const std::string text = result.dump(2) + "\n";
    if (out_dir) {
      std::error_code ec;
      fs::create_directories(out_dir, ec);
      if (ec) throw eac::IoError(std::string("cannot create output directory '") + out_dir + "'");
      write_file(fs::path(out_dir) / (std::string(what) + ".json"), text);
    }
    if (json_out) *json_out = dup_string(text);
  });
}

eac_status eac_gradcheck(size_t n_seeds, const char* corrupt, char** json_out, int* all_passed) {
  return guard([&] {
    const auto cases = eac::run_gradcheck_suite(n_seeds, 1e-4, corrupt ? corrupt : "");
    json rows = json::array();
    bool ok = true;
    for (const auto& c : cases) {
      rows.push_back({{"name", c.name}, {"max_relative_error", c.max_relative_error}, {"seeds", c.seeds},
                      {"passed", c.passed}});
      ok = ok && c.passed;
    }
    if (all_passed) *all_passed = ok ? 1 : 0;
    if (json_out) *json_out = dup_string(json{{"tolerance", 1e-4}, {"cases", rows}}.dump(2));
  });
}

}  // extern "C"
