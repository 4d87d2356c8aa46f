#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "eac/graph.hpp"
#include "eac/nn/tensor.hpp"

namespace eac {

// T x n readings for one period; column j belongs to node_ids[j].
struct ObservationSeries {
  int period_index = 1;
  std::vector<NodeId> node_ids;
  Matrix values;

  std::size_t steps() const { return static_cast<std::size_t>(values.rows()); }
};

// One supervised example: `target` immediately follows `input` on the
// timeline. Both are stored in original units, row-major [steps, n].
struct WindowSample {
  nn::Tensor input;
  nn::Tensor target;
  std::size_t start_index = 0;
};

// Scalar z-score fitted on a training segment.
struct Normalizer {
  static constexpr double kMinStd = 1e-8;

  double mean = 0.0;
  double std = 1.0;

  static Normalizer fit(const Matrix& train_segment);
  double apply(double x) const { return (x - mean) / std; }
  double invert(double z) const { return z * std + mean; }
  nn::Tensor apply(const nn::Tensor& t) const;
  nn::Tensor invert(const nn::Tensor& t) const;
};

struct SplitSegments {
  Matrix train, val, test;
  std::size_t val_start = 0;
  std::size_t test_start = 0;
};

// Cuts the raw timeline at floor(r0 * T) and floor((r0 + r1) * T). Each
// segment must hold at least one window of t_in + t_out steps.
SplitSegments chrono_split(const Matrix& values, std::size_t t_in, std::size_t t_out,
                           double train_ratio = 0.6, double val_ratio = 0.2);

// Sliding windows over one segment; start_index is offset + local start.
std::vector<WindowSample> make_windows(const Matrix& segment, std::size_t t_in, std::size_t t_out,
                                       std::size_t stride = 1, std::size_t offset = 0);

// Keeps floor(fraction * size) windows: the chronological prefix, or a seeded
// uniform sample (kept in time order) when `random` is set.
std::vector<WindowSample> few_shot_subsample(const std::vector<WindowSample>& train, double fraction,
                                             bool random = false, std::uint64_t seed = 0);

struct DatasetOptions {
  std::size_t t_in = 12;
  std::size_t t_out = 12;
  std::size_t stride = 1;
  std::optional<double> few_shot_fraction;
  bool few_shot_random = false;
  std::uint64_t seed = 0;
};

struct PeriodDataset {
  PeriodGraph graph;
  std::vector<WindowSample> train, val, test;
  Normalizer normalizer;
};

PeriodDataset build_period_dataset(const ObservationSeries& series, const PeriodGraph& graph,
                                   const DatasetOptions& options);

// Copies the columns of `nodes` (indices into the series) into a new dataset
// view; used for training on a node subset.
PeriodDataset restrict_to_nodes(const PeriodDataset& data, const std::vector<std::size_t>& nodes);

// Reads `time,<id>,...` CSV. Columns are reordered to the graph's node order;
// gaps are forward-filled and leading gaps take the column mean.
ObservationSeries ingest_period(const std::string& path, const PeriodGraph& graph);
void write_observations(const std::string& path, const ObservationSeries& series);

struct StreamData {
  StreamGraph graph;
  std::vector<ObservationSeries> series;
};

// Synthetic stream parameters, written inline as `key=value,...`.
struct SynthSpec {
  std::size_t n0 = 40;
  std::size_t growth = 10;
  std::size_t periods = 3;
  std::size_t steps = 2000;  // "T"
  std::uint64_t seed = 7;
  double level = 50.0;
  double amplitude = 20.0;
  double day = 48.0;         // steps per diurnal cycle
  double offset = 10.0;      // std of the per-node offset
  double noise = 2.0;        // std of the innovation noise
  double rho = 0.8;          // persistence of the diffused latent field
  double threshold = 0.5;    // adjacency kernel threshold
};

SynthSpec parse_synth_spec(const std::string& text);
std::string to_string(const SynthSpec& spec);

// Latent field e(t) = rho * M e(t-1) + noise * xi(t) over the final node set,
// with M the row-normalized kernel (self weight 1), observed as
// level + offset_i + amplitude * sin(2 pi t / day) + e_i(t). Every period
// observes the columns of its own nodes on its own slice of the timeline.
StreamData synth_stream(const SynthSpec& spec);

// Manifest JSON:
//   {"threshold": 0.5, "periods": [{"nodes": "...", "distances": "...",
//     "observations": "...", "threshold": 0.5, "sigma": 1.0}, ...]}
// Relative paths resolve against the manifest's directory.
StreamData load_stream_manifest(const std::string& path);
// Writes a stream directory with manifest.json; returns the manifest path.
std::string write_stream(const StreamData& stream, const std::string& dir, double threshold);

}  // namespace eac
