#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "eac/analysis.hpp"
#include "eac/backbone.hpp"
#include "eac/data.hpp"
#include "eac/prompt_pool.hpp"
#include "json.hpp"

namespace eac {

enum class Scheme { kEAC, kEACFull, kPretrainST, kRetrainST, kContinualAN, kContinualNN };
enum class HorizonMode { kAtStep, kPrefix };

std::string to_string(Scheme s);
Scheme parse_scheme(const std::string& tag);

struct ExperimentConfig {
  Scheme scheme = Scheme::kEAC;
  std::size_t k = 6;
  std::size_t d = 64;
  double lr_initial = 0.03;
  double lr_continual = 0.01;
  std::size_t epochs_max = 100;
  std::size_t batch_size = 128;
  std::size_t patience = 10;
  double min_delta = 1e-6;
  double dropout_initial = 0.1;
  double dropout_continual = 0.0;
  std::optional<double> few_shot_fraction;
  bool few_shot_random = false;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  BackboneVariant variant = BackboneVariant::kSpatial;
  std::size_t kernel = 3;
  std::size_t cheb_order = 2;
  bool freeze_old_segments = false;
  bool freeze_adjustment = false;
  std::size_t t_in = 12;
  std::size_t t_out = 12;
  std::size_t window_stride = 1;
  HorizonMode horizon_mode = HorizonMode::kAtStep;
  bool track_heterogeneity = true;

  // Throws ConfigError naming the offending field.
  void validate() const;
  BackboneSpec backbone_spec() const;
  DatasetOptions dataset_options(std::uint64_t seed) const;
};

// Parses the JSON config; `scheme` is required, unknown fields are rejected.
ExperimentConfig parse_config(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentConfig& c);

using HorizonMetrics = std::map<std::string, Metrics>;  // "3", "6", "12", "avg"

// Network plus (for the prompt schemes) its prompt pool.
struct ModelState {
  Backbone backbone;
  std::optional<PromptPool> pool;

  std::vector<nn::Parameter*> parameters();
  std::size_t trainable_count();
  nn::Tensor predict(const GraphOperator& graph, const nn::Tensor& inputs) const;
};

// Best-so-far tracking on a validation score (lower is better). An epoch
// improves when it beats the best by more than min_delta; training stops
// after `patience` consecutive epochs without improvement.
class EarlyStopping {
 public:
  EarlyStopping(std::size_t patience, double min_delta) : patience_(patience), min_delta_(min_delta) {}

  // Records one epoch; returns true when it is the new best.
  bool update(double value);
  bool should_stop() const { return stale_ >= patience_; }
  double best() const { return best_; }
  std::size_t best_epoch() const { return best_epoch_; }
  std::size_t epochs() const { return epochs_; }

 private:
  std::size_t patience_;
  double min_delta_;
  double best_ = std::numeric_limits<double>::infinity();
  std::size_t best_epoch_ = 0;
  std::size_t epochs_ = 0;
  std::size_t stale_ = 0;
};

struct TrainOptions {
  double lr = 0.01;
  std::size_t epochs_max = 100;
  std::size_t patience = 10;
  double min_delta = 1e-6;
  std::size_t batch_size = 128;
  double dropout = 0.0;
  std::uint64_t seed = 0;
};

struct TrainOutcome {
  std::size_t epochs_run = 0;
  double initial_val_mae = 0.0;  // before the first update
  double best_val_mae = 0.0;
  std::size_t best_epoch = 0;
  std::vector<double> val_mae;  // one entry per epoch
  double seconds = 0.0;  // epoch loop only; hook calls excluded
};

using EpochHook = std::function<void(std::size_t epoch)>;

// Mini-batch Adam on normalized MSE with early stopping on validation MAE in
// original units; the best-validation parameters are restored at the end.
// The hook runs once before training (epoch 0) and after every epoch.
TrainOutcome train_period(ModelState& model, const PeriodDataset& data, const GraphOperator& graph,
                          const TrainOptions& options, const EpochHook& hook = {});

// [B, t_in, n] normalized inputs for the given windows.
nn::Tensor batch_inputs(const std::vector<WindowSample>& windows, std::size_t begin, std::size_t end,
                        const Normalizer& norm);
nn::Tensor batch_targets(const std::vector<WindowSample>& windows, std::size_t begin, std::size_t end,
                         const Normalizer& norm);

// Predictions in original units, [count, t_out, n].
nn::Tensor predict_windows(const ModelState& model, const GraphOperator& graph,
                           const std::vector<WindowSample>& windows, const Normalizer& norm,
                           std::size_t batch_size);

// Horizon metrics from original-unit predictions and the windows' targets.
HorizonMetrics horizon_metrics(const nn::Tensor& predictions, const std::vector<WindowSample>& windows,
                               HorizonMode mode);

HorizonMetrics evaluate_period(const ModelState& model, const PeriodDataset& data, const GraphOperator& graph,
                               HorizonMode mode, std::size_t batch_size = 128);

struct PeriodResult {
  int period_index = 0;
  std::size_t nodes = 0;
  std::size_t new_nodes = 0;
  HorizonMetrics horizons;
  std::size_t tunable_param_count = 0;
  std::optional<ParamCount> pool_count;
  std::size_t epochs_run = 0;
  double wall_seconds_per_epoch = 0.0;
  std::uint64_t backbone_hash = 0;
  std::optional<std::uint64_t> pool_hash;
  std::vector<std::string> warnings;
};

struct HeterogeneityPoint {
  int period_index = 0;
  std::size_t epoch = 0;
  double value = 0.0;
};

struct SeedResult {
  std::uint64_t seed = 0;
  std::vector<PeriodResult> periods;
  std::vector<HeterogeneityPoint> heterogeneity;
  std::shared_ptr<ModelState> final_model;
};

// Runs one seed of the configured scheme over every period of the stream.
SeedResult run_stream(const ExperimentConfig& config, const StreamData& stream, std::uint64_t seed);

// Fused representation (projected input + prompt), averaged over the given
// windows and time: [n, d].
Matrix fused_representation(const ModelState& model, const std::vector<WindowSample>& windows,
                            const Normalizer& norm);

struct Stat {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation over seeds
  std::size_t count = 0;
};

Stat summarize(const std::vector<double>& values);

struct ExperimentReport {
  ExperimentConfig config;
  std::vector<SeedResult> seeds;
};

// Seeds run on `workers` threads; results come back in seed order.
ExperimentReport run_experiment(const ExperimentConfig& config, const StreamData& stream,
                                const std::vector<std::uint64_t>& seeds, std::size_t workers = 1);

// Mean over periods of one metric at one horizon, for one seed.
double period_average(const SeedResult& seed, const std::string& horizon, const std::string& metric);

// Deterministic documents: everything except wall-clock timings.
nlohmann::json report_json(const ExperimentReport& report);
nlohmann::json seed_json(const SeedResult& seed);
nlohmann::json timings_json(const ExperimentReport& report);
// Horizons 3/6/12/Avg x MAE/RMSE/MAPE as mean +- std over seeds, averaged
// over periods, followed by one block per period.
std::string format_table(const ExperimentReport& report);

std::string library_version();

}  // namespace eac
