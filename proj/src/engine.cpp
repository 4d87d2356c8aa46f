#include "eac/engine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include "eac/error.hpp"
#include "eac/nn/adam.hpp"
#include "eac/nn/ops.hpp"
#include "eac/rng.hpp"

#ifndef EAC_VERSION
#define EAC_VERSION "0.0.0"
#endif

namespace eac {

using nn::Tensor;
using nn::Var;
using nlohmann::json;

std::string library_version() { return EAC_VERSION; }

namespace {

const std::vector<std::pair<Scheme, const char*>> kSchemes = {
    {Scheme::kEAC, "EAC"},           {Scheme::kEACFull, "EAC_full"},         {Scheme::kPretrainST, "PretrainST"},
    {Scheme::kRetrainST, "RetrainST"}, {Scheme::kContinualAN, "ContinualAN"}, {Scheme::kContinualNN, "ContinualNN"},
};

bool uses_pool(Scheme s) { return s == Scheme::kEAC || s == Scheme::kEACFull; }

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

template <typename T>
T get_field(const json& j, const char* key, T fallback) {
  auto it = j.find(key);
  if (it == j.end()) return fallback;
  try {
    return it->get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config field '") + key + "' has the wrong type: " + e.what());
  }
}

std::size_t get_size(const json& j, const char* key, std::size_t fallback) {
  auto it = j.find(key);
  if (it == j.end()) return fallback;
  if (!it->is_number_integer() || it->get<long long>() < 0) {
    throw ConfigError(std::string("config field '") + key + "' must be a non-negative integer");
  }
  return it->get<std::size_t>();
}

double get_number(const json& j, const char* key, double fallback) {
  auto it = j.find(key);
  if (it == j.end()) return fallback;
  if (!it->is_number()) throw ConfigError(std::string("config field '") + key + "' must be a number");
  return it->get<double>();
}

}  // namespace

std::string to_string(Scheme s) {
  for (const auto& [v, tag] : kSchemes) {
    if (v == s) return tag;
  }
  return "unknown";
}

Scheme parse_scheme(const std::string& tag) {
  for (const auto& [v, name] : kSchemes) {
    if (tag == name) return v;
  }
  throw ConfigError("unknown scheme '" + tag + "'");
}

void ExperimentConfig::validate() const {
  if (d == 0) throw ConfigError("config field 'd' must be positive");
  if (k == 0) throw ConfigError("config field 'k' must be positive");
  if (scheme == Scheme::kEAC && k > d) throw ConfigError("config field 'k' exceeds d");
  if (!(lr_initial >= 0.0) || !std::isfinite(lr_initial)) throw ConfigError("config field 'lr_initial' must be >= 0");
  if (!(lr_continual >= 0.0) || !std::isfinite(lr_continual)) {
    throw ConfigError("config field 'lr_continual' must be >= 0");
  }
  if (epochs_max == 0) throw ConfigError("config field 'epochs_max' must be positive");
  if (batch_size == 0) throw ConfigError("config field 'batch_size' must be positive");
  if (!(dropout_initial >= 0.0 && dropout_initial < 1.0)) throw ConfigError("config field 'dropout' must be in [0, 1)");
  if (!(dropout_continual >= 0.0 && dropout_continual < 1.0)) {
    throw ConfigError("config field 'dropout_continual' must be in [0, 1)");
  }
  if (few_shot_fraction && !(*few_shot_fraction > 0.0 && *few_shot_fraction <= 1.0)) {
    throw ConfigError("config field 'few_shot_fraction' must be in (0, 1]");
  }
  if (seeds.empty()) throw ConfigError("config field 'seeds' must not be empty");
  if (kernel == 0 || kernel % 2 == 0) throw ConfigError("config field 'kernel' must be odd");
  if (t_in == 0 || t_out == 0) throw ConfigError("config fields 't_in' and 't_out' must be positive");
  if (window_stride == 0) throw ConfigError("config field 'window_stride' must be positive");
  if (!uses_pool(scheme) && (freeze_old_segments || freeze_adjustment)) {
    throw ConfigError("freeze_old_segments / freeze_adjustment only apply to the EAC schemes, not " +
                      to_string(scheme));
  }
  if (scheme == Scheme::kEACFull && freeze_adjustment) {
    throw ConfigError("freeze_adjustment has no effect for EAC_full, which has no adjustment matrix");
  }
}

BackboneSpec ExperimentConfig::backbone_spec() const {
  BackboneSpec s;
  s.variant = variant;
  s.hidden = d;
  s.kernel = kernel;
  s.cheb_order = cheb_order;
  s.t_out = t_out;
  return s;
}

DatasetOptions ExperimentConfig::dataset_options(std::uint64_t seed) const {
  DatasetOptions o;
  o.t_in = t_in;
  o.t_out = t_out;
  o.stride = window_stride;
  o.few_shot_fraction = few_shot_fraction;
  o.few_shot_random = few_shot_random;
  o.seed = seed;
  return o;
}

ExperimentConfig parse_config(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  static const std::set<std::string> known = {
      "scheme",  "k",          "d",          "lr_initial",   "lr_continual",        "epochs_max",
      "batch_size", "patience", "min_delta", "dropout",      "dropout_continual",   "few_shot_fraction",
      "few_shot_random", "seeds", "variant", "kernel",       "cheb_order",          "freeze_old_segments",
      "freeze_adjustment", "t_in", "t_out",  "window_stride", "horizon_mode",       "track_heterogeneity"};
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw ConfigError("unknown config field '" + key + "'");
  }
  if (!j.contains("scheme")) throw ConfigError("config field 'scheme' is required");
  ExperimentConfig c;
  c.scheme = parse_scheme(get_field<std::string>(j, "scheme", ""));
  c.k = get_size(j, "k", c.k);
  c.d = get_size(j, "d", c.d);
  c.lr_initial = get_number(j, "lr_initial", c.lr_initial);
  c.lr_continual = get_number(j, "lr_continual", c.lr_continual);
  c.epochs_max = get_size(j, "epochs_max", c.epochs_max);
  c.batch_size = get_size(j, "batch_size", c.batch_size);
  c.patience = get_size(j, "patience", c.patience);
  c.min_delta = get_number(j, "min_delta", c.min_delta);
  c.dropout_initial = get_number(j, "dropout", c.dropout_initial);
  c.dropout_continual = get_number(j, "dropout_continual", c.dropout_continual);
  if (j.contains("few_shot_fraction") && !j["few_shot_fraction"].is_null()) {
    c.few_shot_fraction = get_number(j, "few_shot_fraction", 1.0);
  }
  c.few_shot_random = get_field<bool>(j, "few_shot_random", c.few_shot_random);
  if (auto it = j.find("seeds"); it != j.end()) {
    if (it->is_number_integer()) {
      const auto count = get_size(j, "seeds", 5);
      c.seeds.clear();
      for (std::size_t s = 0; s < count; ++s) c.seeds.push_back(s);
    } else if (it->is_array()) {
      c.seeds = get_field<std::vector<std::uint64_t>>(j, "seeds", {});
    } else {
      throw ConfigError("config field 'seeds' must be a count or a list of seeds");
    }
  }
  c.variant = parse_variant(get_field<std::string>(j, "variant", to_string(c.variant)));
  c.kernel = get_size(j, "kernel", c.kernel);
  c.cheb_order = get_size(j, "cheb_order", c.cheb_order);
  c.freeze_old_segments = get_field<bool>(j, "freeze_old_segments", c.freeze_old_segments);
  c.freeze_adjustment = get_field<bool>(j, "freeze_adjustment", c.freeze_adjustment);
  c.t_in = get_size(j, "t_in", c.t_in);
  c.t_out = get_size(j, "t_out", c.t_out);
  c.window_stride = get_size(j, "window_stride", c.window_stride);
  const auto hm = get_field<std::string>(j, "horizon_mode", "at_step");
  if (hm == "at_step") {
    c.horizon_mode = HorizonMode::kAtStep;
  } else if (hm == "prefix") {
    c.horizon_mode = HorizonMode::kPrefix;
  } else {
    throw ConfigError("config field 'horizon_mode' must be 'at_step' or 'prefix'");
  }
  c.track_heterogeneity = get_field<bool>(j, "track_heterogeneity", c.track_heterogeneity);
  c.validate();
  return c;
}

json to_json(const ExperimentConfig& c) {
  json j{{"scheme", to_string(c.scheme)},
         {"k", c.k},
         {"d", c.d},
         {"lr_initial", c.lr_initial},
         {"lr_continual", c.lr_continual},
         {"epochs_max", c.epochs_max},
         {"batch_size", c.batch_size},
         {"patience", c.patience},
         {"min_delta", c.min_delta},
         {"dropout", c.dropout_initial},
         {"dropout_continual", c.dropout_continual},
         {"few_shot_random", c.few_shot_random},
         {"seeds", c.seeds},
         {"variant", to_string(c.variant)},
         {"kernel", c.kernel},
         {"cheb_order", c.cheb_order},
         {"freeze_old_segments", c.freeze_old_segments},
         {"freeze_adjustment", c.freeze_adjustment},
         {"t_in", c.t_in},
         {"t_out", c.t_out},
         {"window_stride", c.window_stride},
         {"horizon_mode", c.horizon_mode == HorizonMode::kAtStep ? "at_step" : "prefix"},
         {"track_heterogeneity", c.track_heterogeneity}};
  j["few_shot_fraction"] = c.few_shot_fraction ? json(*c.few_shot_fraction) : json(nullptr);
  return j;
}

// ---------------------------------------------------------------------------

std::vector<nn::Parameter*> ModelState::parameters() {
  std::vector<nn::Parameter*> out;
  for (auto& p : backbone.parameters()) out.push_back(&p);
  if (pool) {
    for (auto* p : pool->parameters()) out.push_back(p);
  }
  return out;
}

std::size_t ModelState::trainable_count() {
  std::size_t total = 0;
  for (auto* p : parameters()) {
    if (p->trainable) total += p->value.size();
  }
  return total;
}

Tensor ModelState::predict(const GraphOperator& graph, const Tensor& inputs) const {
  if (pool) {
    const Tensor prompt = pool->materialize();
    return backbone.predict(graph, inputs, &prompt);
  }
  return backbone.predict(graph, inputs);
}

namespace {

Tensor stack_windows(const std::vector<WindowSample>& windows, std::size_t begin, std::size_t end,
                     const Normalizer& norm, bool targets) {
  if (begin >= end || end > windows.size()) throw ArgumentError("empty or out-of-range window batch");
  const Tensor& first = targets ? windows[begin].target : windows[begin].input;
  Tensor out({end - begin, first.dim(0), first.dim(1)});
  const std::size_t stride = first.size();
  for (std::size_t b = begin; b < end; ++b) {
    const Tensor& src = targets ? windows[b].target : windows[b].input;
    double* dst = out.data() + (b - begin) * stride;
    for (std::size_t i = 0; i < stride; ++i) dst[i] = norm.apply(src[i]);
  }
  return out;
}

double mae_against(const Tensor& predictions, const std::vector<WindowSample>& windows) {
  MetricAccumulator acc;
  const std::size_t stride = windows.empty() ? 0 : windows.front().target.size();
  for (std::size_t w = 0; w < windows.size(); ++w) {
    for (std::size_t i = 0; i < stride; ++i) acc.add(predictions[w * stride + i], windows[w].target[i]);
  }
  return acc.finish().mae;
}

}  // namespace

Tensor batch_inputs(const std::vector<WindowSample>& windows, std::size_t begin, std::size_t end,
                    const Normalizer& norm) {
  return stack_windows(windows, begin, end, norm, false);
}

Tensor batch_targets(const std::vector<WindowSample>& windows, std::size_t begin, std::size_t end,
                     const Normalizer& norm) {
  return stack_windows(windows, begin, end, norm, true);
}

Tensor predict_windows(const ModelState& model, const GraphOperator& graph, const std::vector<WindowSample>& windows,
                       const Normalizer& norm, std::size_t batch_size) {
  if (windows.empty()) throw DataError("no windows to predict");
  const Tensor& t0 = windows.front().target;
  Tensor out({windows.size(), t0.dim(0), t0.dim(1)});
  const std::size_t stride = t0.size();
  for (std::size_t begin = 0; begin < windows.size(); begin += batch_size) {
    const std::size_t end = std::min(windows.size(), begin + batch_size);
    const Tensor pred = model.predict(graph, batch_inputs(windows, begin, end, norm));
    if (pred.size() != (end - begin) * stride) {
      throw ArgumentError("prediction shape " + nn::shape_str(pred.shape()) + " does not match targets");
    }
    double* dst = out.data() + begin * stride;
    for (std::size_t i = 0; i < pred.size(); ++i) dst[i] = norm.invert(pred[i]);
  }
  return out;
}

HorizonMetrics horizon_metrics(const Tensor& predictions, const std::vector<WindowSample>& windows,
                               HorizonMode mode) {
  if (windows.empty()) throw DataError("no windows to evaluate");
  const std::size_t t_out = windows.front().target.dim(0);
  const std::size_t n = windows.front().target.dim(1);
  const std::size_t stride = t_out * n;
  HorizonMetrics out;
  auto pooled = [&](std::size_t lo, std::size_t hi) {
    MetricAccumulator acc;
    for (std::size_t w = 0; w < windows.size(); ++w) {
      const Tensor& truth = windows[w].target;
      for (std::size_t s = lo; s < hi; ++s) {
        for (std::size_t j = 0; j < n; ++j) acc.add(predictions[w * stride + s * n + j], truth[s * n + j]);
      }
    }
    return acc.finish();
  };
  for (std::size_t h : {3u, 6u, 12u}) {
    if (h > t_out) continue;
    out[std::to_string(h)] = mode == HorizonMode::kAtStep ? pooled(h - 1, h) : pooled(0, h);
  }
  out["avg"] = pooled(0, t_out);
  return out;
}

HorizonMetrics evaluate_period(const ModelState& model, const PeriodDataset& data, const GraphOperator& graph,
                               HorizonMode mode, std::size_t batch_size) {
  const Tensor pred = predict_windows(model, graph, data.test, data.normalizer, batch_size);
  return horizon_metrics(pred, data.test, mode);
}

bool EarlyStopping::update(double value) {
  ++epochs_;
  if (value < best_ - min_delta_) {
    best_ = value;
    best_epoch_ = epochs_;
    stale_ = 0;
    return true;
  }
  ++stale_;
  return false;
}

TrainOutcome train_period(ModelState& model, const PeriodDataset& data, const GraphOperator& graph,
                          const TrainOptions& options, const EpochHook& hook) {
  if (data.train.empty()) throw DataError("no training windows");
  if (data.val.empty()) throw DataError("no validation windows");
  using Clock = std::chrono::steady_clock;
  TrainOutcome outcome;
  nn::Adam adam;
  const auto params = model.parameters();
  const Rng train_rng(options.seed);

  EarlyStopping stopper(options.patience, options.min_delta);
  std::vector<nn::Parameter> best_backbone = model.backbone.snapshot();
  std::vector<nn::Parameter> best_pool;
  if (model.pool) best_pool = model.pool->snapshot();

  outcome.initial_val_mae =
      mae_against(predict_windows(model, graph, data.val, data.normalizer, options.batch_size), data.val);
  if (hook) hook(0);
  Clock::duration hook_time{};
  const auto t0 = Clock::now();
  std::vector<std::size_t> order(data.train.size());
  for (std::size_t epoch = 1; epoch <= options.epochs_max; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle = train_rng.derive(epoch);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);

    std::vector<WindowSample> batch;
    std::size_t batch_index = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += options.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), begin + options.batch_size);
      batch.clear();
      for (std::size_t i = begin; i < end; ++i) batch.push_back(data.train[order[i]]);
      try {
        nn::Tape tape;
        const Tensor x = batch_inputs(batch, 0, batch.size(), data.normalizer);
        const Tensor y = batch_targets(batch, 0, batch.size(), data.normalizer);
        std::optional<Var> prompt;
        if (model.pool) prompt = model.pool->materialize(tape);
        ForwardOptions fo;
        fo.dropout_p = options.dropout;
        fo.dropout_seed = shuffle.derive(batch_index).seed();
        const Var pred = model.backbone.forward(tape, graph, x, prompt, fo);
        const Var loss = nn::mse_loss(pred, y);
        if (!std::isfinite(loss.value().item())) throw NumericError("non-finite loss");
        const nn::GradientMap grads = tape.backward(loss);
        adam.step(params, grads, options.lr);
      } catch (const NumericError& e) {
        std::ostringstream msg;
        msg << "training diverged at epoch " << epoch << ", batch " << batch_index << " (lr=" << options.lr
            << "): " << e.what();
        throw NumericError(msg.str());
      }
    }

    double val = 0.0;
    try {
      val = mae_against(predict_windows(model, graph, data.val, data.normalizer, options.batch_size), data.val);
      if (!std::isfinite(val)) throw NumericError("non-finite validation MAE");
    } catch (const NumericError& e) {
      std::ostringstream msg;
      msg << "training diverged at epoch " << epoch << ", validation pass (lr=" << options.lr << "): " << e.what();
      throw NumericError(msg.str());
    }
    outcome.val_mae.push_back(val);
    outcome.epochs_run = epoch;
    if (hook) {
      const auto h0 = Clock::now();
      hook(epoch);
      hook_time += Clock::now() - h0;
    }
    if (stopper.update(val)) {
      best_backbone = model.backbone.snapshot();
      if (model.pool) best_pool = model.pool->snapshot();
    } else if (stopper.should_stop()) {
      break;
    }
  }
  model.backbone.restore(best_backbone);
  if (model.pool) model.pool->restore(best_pool);
  outcome.best_val_mae = stopper.best();
  outcome.best_epoch = stopper.best_epoch();
  outcome.seconds = std::chrono::duration<double>(Clock::now() - t0 - hook_time).count();
  return outcome;
}

Matrix fused_representation(const ModelState& model, const std::vector<WindowSample>& windows,
                            const Normalizer& norm) {
  if (windows.empty()) throw DataError("no windows for the fused representation");
  nn::Tape tape;
  const Tensor x = batch_inputs(windows, 0, windows.size(), norm);
  const Tensor h = model.backbone.project(tape, x).value();  // [B, T, n, d]
  const std::size_t bt = h.dim(0) * h.dim(1), n = h.dim(2), d = h.dim(3);
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (std::size_t s = 0; s < bt; ++s) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < d; ++c) out(i, c) += h[(s * n + i) * d + c];
    }
  }
  out /= static_cast<double>(bt);
  if (model.pool) {
    const Tensor p = model.pool->materialize();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < d; ++c) out(i, c) += p[i * d + c];
    }
  }
  return out;
}

SeedResult run_stream(const ExperimentConfig& config, const StreamData& stream, std::uint64_t seed) {
  config.validate();
  stream.graph.validate();
  if (stream.series.size() != stream.graph.periods.size()) {
    throw DataError("stream has " + std::to_string(stream.graph.periods.size()) + " graphs but " +
                    std::to_string(stream.series.size()) + " observation series");
  }
  if (stream.series.empty()) throw DataError("stream has no periods");

  const Rng root(seed);
  const std::uint64_t backbone_seed = root.derive("backbone").seed();
  const std::uint64_t pool_seed = root.derive("pool").seed();
  const std::uint64_t train_seed = root.derive("train").seed();
  const std::uint64_t data_seed = root.derive("data").seed();
  const BackboneSpec spec = config.backbone_spec();

  SeedResult result;
  result.seed = seed;
  auto model = std::make_shared<ModelState>(ModelState{Backbone(spec, backbone_seed), std::nullopt});

  const PeriodGraph* prev = nullptr;
  for (std::size_t p = 0; p < stream.series.size(); ++p) {
    const PeriodGraph& g = stream.graph.periods[p];
    const PeriodDataset data = build_period_dataset(stream.series[p], g, config.dataset_options(data_seed));
    const GraphOperator op = make_graph_operator(config.variant, g.adjacency);
    const bool first = prev == nullptr;
    const NodeDiff diff = first ? NodeDiff{g.nodes, {}} : diff_nodes(*prev, g);

    PeriodResult pr;
    pr.period_index = g.period_index;
    pr.nodes = g.size();
    pr.new_nodes = diff.new_ids.size();

    // RetrainST starts from scratch every period, so it always trains with the
    // initial-period settings.
    const bool fresh = first || config.scheme == Scheme::kRetrainST;
    TrainOptions to;
    to.lr = fresh ? config.lr_initial : config.lr_continual;
    to.dropout = fresh ? config.dropout_initial : config.dropout_continual;
    to.epochs_max = config.epochs_max;
    to.patience = config.patience;
    to.min_delta = config.min_delta;
    to.batch_size = config.batch_size;
    to.seed = train_seed;

    bool train = true;
    const PeriodDataset* train_data = &data;
    PeriodDataset restricted;
    GraphOperator train_op = op;

    switch (config.scheme) {
      case Scheme::kEAC:
      case Scheme::kEACFull: {
        const PoolMode mode = config.scheme == Scheme::kEAC ? PoolMode::kLowRank : PoolMode::kFull;
        if (first) {
          model->pool = PromptPool::create(g.nodes, config.d, config.k, mode, pool_seed, g.period_index);
          model->backbone.set_trainable(true);
          model->pool->set_trainable(true);
        } else {
          model->backbone.set_trainable(false);
          model->pool->expand(diff.new_ids, g.period_index);
          model->pool->set_trainable(true);
          if (config.freeze_old_segments) model->pool->freeze_old_segments();
          if (config.freeze_adjustment) model->pool->set_adjustment_trainable(false);
        }
        if (model->pool->node_ids() != g.nodes) {
          throw DataError("prompt pool rows are out of step with the node order of period " +
                          std::to_string(g.period_index));
        }
        break;
      }
      case Scheme::kPretrainST:
        train = first;
        model->backbone.set_trainable(first);
        break;
      case Scheme::kRetrainST:
        if (!first) model->backbone = Backbone(spec, backbone_seed);
        model->backbone.set_trainable(true);
        break;
      case Scheme::kContinualAN:
        model->backbone.set_trainable(true);
        break;
      case Scheme::kContinualNN:
        model->backbone.set_trainable(true);
        if (!first) {
          if (diff.new_ids.empty()) {
            train = false;
            pr.warnings.push_back("period " + std::to_string(g.period_index) +
                                  " adds no nodes; ContinualNN skips training");
          } else {
            std::vector<std::size_t> idx;
            for (const auto& id : diff.new_ids) idx.push_back(*g.index_of(id));
            restricted = restrict_to_nodes(data, idx);
            train_data = &restricted;
            train_op = make_graph_operator(config.variant, restricted.graph.adjacency);
          }
        }
        break;
    }

    if (train) {
      pr.tunable_param_count = model->trainable_count();
      EpochHook hook;
      const bool track = config.track_heterogeneity && model->pool.has_value();
      std::vector<WindowSample> probe;
      if (track) {
        probe.assign(data.val.begin(), data.val.begin() + std::min<std::size_t>(32, data.val.size()));
        hook = [&](std::size_t epoch) {
          result.heterogeneity.push_back(
              {g.period_index, epoch, heterogeneity(fused_representation(*model, probe, data.normalizer))});
        };
      }
      const TrainOutcome out = train_period(*model, *train_data, train_op, to, hook);
      pr.epochs_run = out.epochs_run;
      pr.wall_seconds_per_epoch = out.epochs_run ? out.seconds / static_cast<double>(out.epochs_run) : 0.0;
    }

    pr.horizons = evaluate_period(*model, data, op, config.horizon_mode, config.batch_size);
    pr.backbone_hash = model->backbone.hash();
    if (model->pool) {
      pr.pool_count = model->pool->param_count();
      pr.pool_hash = model->pool->hash();
    }
    result.periods.push_back(std::move(pr));
    prev = &g;
  }
  result.final_model = model;
  return result;
}

Stat summarize(const std::vector<double>& values) {
  Stat s;
  s.count = values.size();
  if (values.empty()) return s;
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(ss / static_cast<double>(values.size()));
  return s;
}

ExperimentReport run_experiment(const ExperimentConfig& config, const StreamData& stream,
                                const std::vector<std::uint64_t>& seeds, std::size_t workers) {
  config.validate();
  if (seeds.empty()) throw ConfigError("no seeds to run");
  ExperimentReport report;
  report.config = config;
  report.config.seeds = seeds;
  report.seeds.resize(seeds.size());
  std::vector<std::exception_ptr> errors(seeds.size());
  workers = std::max<std::size_t>(1, std::min(workers, seeds.size()));
  if (workers == 1) {
    for (std::size_t i = 0; i < seeds.size(); ++i) report.seeds[i] = run_stream(config, stream, seeds[i]);
    return report;
  }
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < seeds.size(); i += workers) {
        try {
          report.seeds[i] = run_stream(config, stream, seeds[i]);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return report;
}

namespace {

std::optional<double> metric_value(const Metrics& m, const std::string& metric) {
  if (metric == "MAE") return m.mae;
  if (metric == "RMSE") return m.rmse;
  if (metric == "MAPE") return m.mape;
  throw ArgumentError("unknown metric '" + metric + "'");
}

const std::vector<std::string> kMetrics = {"MAE", "RMSE", "MAPE"};

std::vector<std::string> horizon_keys(const ExperimentReport& report) {
  std::vector<std::string> keys;
  for (std::size_t h : {3u, 6u, 12u}) {
    if (h <= report.config.t_out) keys.push_back(std::to_string(h));
  }
  keys.push_back("avg");
  return keys;
}

json stat_json(const std::vector<double>& values) {
  if (values.empty()) return json(nullptr);
  const Stat s = summarize(values);
  return json{{"mean", s.mean}, {"std", s.std}, {"count", s.count}};
}

json horizons_json(const HorizonMetrics& h) {
  json j = json::object();
  for (const auto& [key, m] : h) j[key] = to_json(m);
  return j;
}

}  // namespace

double period_average(const SeedResult& seed, const std::string& horizon, const std::string& metric) {
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& p : seed.periods) {
    auto it = p.horizons.find(horizon);
    if (it == p.horizons.end()) continue;
    if (auto v = metric_value(it->second, metric)) {
      sum += *v;
      ++count;
    }
  }
  return count ? sum / static_cast<double>(count) : std::numeric_limits<double>::quiet_NaN();
}

json seed_json(const SeedResult& seed) {
  json periods = json::array();
  for (const auto& p : seed.periods) {
    json pj{{"period_index", p.period_index},
            {"nodes", p.nodes},
            {"new_nodes", p.new_nodes},
            {"horizons", horizons_json(p.horizons)},
            {"tunable_param_count", p.tunable_param_count},
            {"epochs_run", p.epochs_run},
            {"backbone_hash", hex64(p.backbone_hash)},
            {"warnings", p.warnings}};
    if (p.pool_count) {
      pj["pool"] = {{"tunable", p.pool_count->tunable},
                    {"materialized", p.pool_count->materialized},
                    {"ratio", p.pool_count->ratio}};
    }
    if (p.pool_hash) pj["pool_hash"] = hex64(*p.pool_hash);
    periods.push_back(std::move(pj));
  }
  json hetero = json::array();
  for (const auto& h : seed.heterogeneity) {
    hetero.push_back({{"period_index", h.period_index}, {"epoch", h.epoch}, {"value", h.value}});
  }
  return json{{"seed", seed.seed}, {"periods", periods}, {"heterogeneity", hetero}};
}

json report_json(const ExperimentReport& report) {
  const auto keys = horizon_keys(report);
  json summary = json::object();
  for (const auto& h : keys) {
    for (const auto& m : kMetrics) {
      std::vector<double> per_seed;
      for (const auto& s : report.seeds) {
        const double v = period_average(s, h, m);
        if (std::isfinite(v)) per_seed.push_back(v);
      }
      summary[h][m] = stat_json(per_seed);
    }
  }
  json periods = json::array();
  const std::size_t n_periods = report.seeds.empty() ? 0 : report.seeds.front().periods.size();
  for (std::size_t p = 0; p < n_periods; ++p) {
    const PeriodResult& ref = report.seeds.front().periods[p];
    json pj{{"period_index", ref.period_index},
            {"nodes", ref.nodes},
            {"new_nodes", ref.new_nodes},
            {"tunable_param_count", ref.tunable_param_count}};
    if (ref.pool_count) {
      pj["pool"] = {{"tunable", ref.pool_count->tunable},
                    {"materialized", ref.pool_count->materialized},
                    {"ratio", ref.pool_count->ratio}};
    }
    json horizons = json::object();
    for (const auto& h : keys) {
      for (const auto& m : kMetrics) {
        std::vector<double> vals;
        for (const auto& s : report.seeds) {
          auto it = s.periods[p].horizons.find(h);
          if (it == s.periods[p].horizons.end()) continue;
          if (auto v = metric_value(it->second, m)) vals.push_back(*v);
        }
        horizons[h][m] = stat_json(vals);
      }
    }
    pj["horizons"] = horizons;
    json epochs = json::array(), hashes = json::array(), pool_hashes = json::array();
    for (const auto& s : report.seeds) {
      epochs.push_back(s.periods[p].epochs_run);
      hashes.push_back(hex64(s.periods[p].backbone_hash));
      if (s.periods[p].pool_hash) pool_hashes.push_back(hex64(*s.periods[p].pool_hash));
    }
    pj["epochs_run"] = epochs;
    pj["backbone_hash"] = hashes;
    if (!pool_hashes.empty()) pj["pool_hash"] = pool_hashes;
    periods.push_back(std::move(pj));
  }
  return json{{"library_version", library_version()},
              {"config", to_json(report.config)},
              {"seeds", report.config.seeds},
              {"summary", summary},
              {"periods", periods}};
}

json timings_json(const ExperimentReport& report) {
  json seeds = json::array();
  for (const auto& s : report.seeds) {
    json periods = json::array();
    for (const auto& p : s.periods) {
      periods.push_back({{"period_index", p.period_index},
                         {"epochs_run", p.epochs_run},
                         {"wall_seconds_per_epoch", p.wall_seconds_per_epoch}});
    }
    seeds.push_back({{"seed", s.seed}, {"periods", periods}});
  }
  return json{{"seeds", seeds}};
}

std::string format_table(const ExperimentReport& report) {
  const auto keys = horizon_keys(report);
  std::ostringstream out;
  char buf[128];
  auto cell = [&](const std::vector<double>& vals) {
    if (vals.empty()) return std::string("n/a");
    const Stat s = summarize(vals);
    std::snprintf(buf, sizeof buf, "%.4f +- %.4f", s.mean, s.std);
    return std::string(buf);
  };
  auto block = [&](const std::function<std::optional<double>(const SeedResult&, const std::string&,
                                                             const std::string&)>& value) {
    std::snprintf(buf, sizeof buf, "%-8s%-22s%-22s%-22s\n", "horizon", "MAE", "RMSE", "MAPE(%)");
    out << buf;
    for (const auto& h : keys) {
      std::snprintf(buf, sizeof buf, "%-8s", h == "avg" ? "Avg" : h.c_str());
      out << buf;
      for (const auto& m : kMetrics) {
        std::vector<double> vals;
        for (const auto& s : report.seeds) {
          if (auto v = value(s, h, m)) vals.push_back(*v);
        }
        std::snprintf(buf, sizeof buf, "%-22s", cell(vals).c_str());
        out << buf;
      }
      out << "\n";
    }
  };
  out << "scheme " << to_string(report.config.scheme) << ", variant " << to_string(report.config.variant) << ", "
      << report.seeds.size() << " seed(s)\n";
  out << "\naverage over periods\n";
  block([](const SeedResult& s, const std::string& h, const std::string& m) -> std::optional<double> {
    const double v = period_average(s, h, m);
    return std::isfinite(v) ? std::optional<double>(v) : std::nullopt;
  });
  const std::size_t n_periods = report.seeds.empty() ? 0 : report.seeds.front().periods.size();
  for (std::size_t p = 0; p < n_periods; ++p) {
    const auto& ref = report.seeds.front().periods[p];
    out << "\nperiod " << ref.period_index << " (" << ref.nodes << " nodes, " << ref.new_nodes << " new, "
        << ref.tunable_param_count << " tunable)\n";
    block([p](const SeedResult& s, const std::string& h, const std::string& m) -> std::optional<double> {
      auto it = s.periods[p].horizons.find(h);
      if (it == s.periods[p].horizons.end()) return std::nullopt;
      return metric_value(it->second, m);
    });
  }
  return out.str();
}

}  // namespace eac
