#include "eac/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <unordered_map>

#include "json.hpp"

#include "eac/error.hpp"
#include "eac/rng.hpp"
#include "text_io.hpp"

namespace eac {

namespace fs = std::filesystem;
using nn::Tensor;

Normalizer Normalizer::fit(const Matrix& train_segment) {
  Normalizer n;
  const double count = static_cast<double>(train_segment.size());
  if (count == 0) return n;
  n.mean = train_segment.mean();
  const double var = (train_segment.array() - n.mean).square().sum() / count;
  n.std = std::max(kMinStd, std::sqrt(var));
  return n;
}

Tensor Normalizer::apply(const Tensor& t) const {
  Tensor out = t;
  for (double& v : out.storage()) v = apply(v);
  return out;
}

Tensor Normalizer::invert(const Tensor& t) const {
  Tensor out = t;
  for (double& v : out.storage()) v = invert(v);
  return out;
}

SplitSegments chrono_split(const Matrix& values, std::size_t t_in, std::size_t t_out, double train_ratio,
                           double val_ratio) {
  if (!(train_ratio > 0 && val_ratio > 0 && train_ratio + val_ratio < 1.0)) {
    throw ConfigError("chrono_split: ratios must be positive and leave room for a test segment");
  }
  const auto steps = static_cast<std::size_t>(values.rows());
  const auto b1 = static_cast<std::size_t>(std::floor(train_ratio * static_cast<double>(steps)));
  const auto b2 = static_cast<std::size_t>(std::floor((train_ratio + val_ratio) * static_cast<double>(steps)));
  const std::size_t need = t_in + t_out;
  const std::size_t lens[3] = {b1, b2 - b1, steps - b2};
  const char* names[3] = {"train", "val", "test"};
  for (int i = 0; i < 3; ++i) {
    if (lens[i] < need) {
      throw DataError("series of " + std::to_string(steps) + " steps is too short: " + names[i] + " segment has " +
                      std::to_string(lens[i]) + " steps, one window needs " + std::to_string(need));
    }
  }
  SplitSegments s;
  s.train = values.topRows(static_cast<Eigen::Index>(b1));
  s.val = values.middleRows(static_cast<Eigen::Index>(b1), static_cast<Eigen::Index>(b2 - b1));
  s.test = values.bottomRows(static_cast<Eigen::Index>(steps - b2));
  s.val_start = b1;
  s.test_start = b2;
  return s;
}

std::vector<WindowSample> make_windows(const Matrix& segment, std::size_t t_in, std::size_t t_out, std::size_t stride,
                                       std::size_t offset) {
  if (t_in == 0 || t_out == 0 || stride == 0) throw ArgumentError("make_windows: lengths and stride must be positive");
  const auto steps = static_cast<std::size_t>(segment.rows());
  const auto n = static_cast<std::size_t>(segment.cols());
  if (steps < t_in + t_out) {
    throw DataError("make_windows: segment of " + std::to_string(steps) + " steps is shorter than one window (" +
                    std::to_string(t_in + t_out) + ")");
  }
  std::vector<WindowSample> out;
  out.reserve((steps - t_in - t_out) / stride + 1);
  for (std::size_t s = 0; s + t_in + t_out <= steps; s += stride) {
    WindowSample w{Tensor({t_in, n}), Tensor({t_out, n}), offset + s};
    for (std::size_t t = 0; t < t_in; ++t) {
      for (std::size_t j = 0; j < n; ++j) {
        w.input[t * n + j] = segment(static_cast<Eigen::Index>(s + t), static_cast<Eigen::Index>(j));
      }
    }
    for (std::size_t t = 0; t < t_out; ++t) {
      for (std::size_t j = 0; j < n; ++j) {
        w.target[t * n + j] = segment(static_cast<Eigen::Index>(s + t_in + t), static_cast<Eigen::Index>(j));
      }
    }
    out.push_back(std::move(w));
  }
  return out;
}

std::vector<WindowSample> few_shot_subsample(const std::vector<WindowSample>& train, double fraction, bool random,
                                             std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("few_shot_fraction must lie in (0, 1]");
  const auto keep = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(train.size())));
  if (keep == 0) {
    throw DataError("few-shot subsample of " + std::to_string(train.size()) + " windows at fraction " +
                    detail::format_double(fraction) + " leaves an empty training set");
  }
  if (!random) return std::vector<WindowSample>(train.begin(), train.begin() + static_cast<long>(keep));
  // Partial Fisher-Yates over indices, then restore time order.
  std::vector<std::size_t> idx(train.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng rng = Rng(seed).derive("few_shot");
  for (std::size_t i = 0; i < keep; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(idx.size() - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(keep);
  std::sort(idx.begin(), idx.end());
  std::vector<WindowSample> out;
  for (std::size_t i : idx) out.push_back(train[i]);
  return out;
}

PeriodDataset build_period_dataset(const ObservationSeries& series, const PeriodGraph& graph,
                                   const DatasetOptions& options) {
  if (series.node_ids != graph.nodes) {
    throw DataError("period " + std::to_string(graph.period_index) + ": observation columns do not match graph nodes");
  }
  const SplitSegments seg = chrono_split(series.values, options.t_in, options.t_out);
  PeriodDataset ds;
  ds.graph = graph;
  ds.normalizer = Normalizer::fit(seg.train);
  ds.train = make_windows(seg.train, options.t_in, options.t_out, options.stride, 0);
  ds.val = make_windows(seg.val, options.t_in, options.t_out, options.stride, seg.val_start);
  ds.test = make_windows(seg.test, options.t_in, options.t_out, options.stride, seg.test_start);
  if (options.few_shot_fraction) {
    ds.train = few_shot_subsample(ds.train, *options.few_shot_fraction, options.few_shot_random,
                                  Rng(options.seed).derive(static_cast<std::uint64_t>(graph.period_index)).seed());
  }
  return ds;
}

PeriodDataset restrict_to_nodes(const PeriodDataset& data, const std::vector<std::size_t>& nodes) {
  PeriodDataset out;
  out.normalizer = data.normalizer;
  out.graph.period_index = data.graph.period_index;
  for (std::size_t i : nodes) out.graph.nodes.push_back(data.graph.nodes.at(i));
  out.graph.distances = induced_submatrix(data.graph.distances, nodes);
  out.graph.adjacency = induced_submatrix(data.graph.adjacency, nodes);
  const std::size_t n = data.graph.size(), m = nodes.size();
  auto cut = [&](const Tensor& t) {
    const std::size_t steps = t.size() / n;
    Tensor r({steps, m});
    for (std::size_t s = 0; s < steps; ++s) {
      for (std::size_t j = 0; j < m; ++j) r[s * m + j] = t[s * n + nodes[j]];
    }
    return r;
  };
  auto cut_all = [&](const std::vector<WindowSample>& ws) {
    std::vector<WindowSample> r;
    r.reserve(ws.size());
    for (const auto& w : ws) r.push_back(WindowSample{cut(w.input), cut(w.target), w.start_index});
    return r;
  };
  out.train = cut_all(data.train);
  out.val = cut_all(data.val);
  out.test = cut_all(data.test);
  return out;
}

ObservationSeries ingest_period(const std::string& path, const PeriodGraph& graph) {
  const auto lines = detail::read_lines(path);
  std::size_t ln = 0;
  while (ln < lines.size() && detail::trim(lines[ln]).empty()) ++ln;
  if (ln == lines.size()) throw DataError(path + ": empty observations file");
  const auto header = detail::split(lines[ln], ',');
  if (header.empty() || header[0] != "time") throw DataError(path + ": header must start with 'time'");

  std::unordered_map<NodeId, std::size_t> graph_index;
  for (std::size_t i = 0; i < graph.nodes.size(); ++i) graph_index.emplace(graph.nodes[i], i);
  // column_target[c] = graph index of file column c + 1.
  std::vector<std::size_t> column_target;
  std::vector<bool> covered(graph.nodes.size(), false);
  for (std::size_t c = 1; c < header.size(); ++c) {
    auto it = graph_index.find(std::string(header[c]));
    if (it == graph_index.end()) throw DataError(path + ": unknown node id '" + std::string(header[c]) + "' in header");
    if (covered[it->second]) throw DataError(path + ": node '" + std::string(header[c]) + "' appears twice");
    covered[it->second] = true;
    column_target.push_back(it->second);
  }
  for (std::size_t i = 0; i < covered.size(); ++i) {
    if (!covered[i]) throw DataError(path + ": graph node '" + graph.nodes[i] + "' has no column");
  }

  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::vector<double>> rows;
  for (++ln; ln < lines.size(); ++ln) {
    if (detail::trim(lines[ln]).empty()) continue;
    const auto cells = detail::split(lines[ln], ',');
    if (cells.size() != header.size()) {
      throw DataError(path + ":" + std::to_string(ln + 1) + ": expected " + std::to_string(header.size()) + " cells");
    }
    std::vector<double> row(graph.nodes.size(), nan);
    for (std::size_t c = 1; c < cells.size(); ++c) {
      if (cells[c].empty()) continue;
      auto v = detail::parse_double(cells[c]);
      if (!v || !std::isfinite(*v)) {
        throw DataError(path + ":" + std::to_string(ln + 1) + ": non-numeric cell '" + std::string(cells[c]) + "'");
      }
      row[column_target[c - 1]] = *v;
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw DataError(path + ": no observation rows");

  ObservationSeries s;
  s.period_index = graph.period_index;
  s.node_ids = graph.nodes;
  s.values = Matrix(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(graph.nodes.size()));
  for (std::size_t j = 0; j < graph.nodes.size(); ++j) {
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& r : rows) {
      if (!std::isnan(r[j])) {
        sum += r[j];
        ++count;
      }
    }
    if (count == 0) throw DataError(path + ": node '" + graph.nodes[j] + "' has no observed values");
    const double column_mean = sum / static_cast<double>(count);
    double last = nan;
    for (std::size_t t = 0; t < rows.size(); ++t) {
      double v = rows[t][j];
      if (std::isnan(v)) v = std::isnan(last) ? column_mean : last;
      else last = v;
      s.values(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(j)) = v;
    }
  }
  return s;
}

void write_observations(const std::string& path, const ObservationSeries& series) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << "time";
  for (const auto& id : series.node_ids) out << ',' << id;
  out << '\n';
  for (Eigen::Index t = 0; t < series.values.rows(); ++t) {
    out << t;
    for (Eigen::Index j = 0; j < series.values.cols(); ++j) out << ',' << detail::format_double(series.values(t, j));
    out << '\n';
  }
}

SynthSpec parse_synth_spec(const std::string& text) {
  SynthSpec s;
  for (auto item : detail::split(text, ',')) {
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string_view::npos) throw ConfigError("synth spec: expected key=value, got '" + std::string(item) + "'");
    const std::string key(detail::trim(item.substr(0, eq)));
    auto v = detail::parse_double(detail::trim(item.substr(eq + 1)));
    if (!v || !std::isfinite(*v)) throw ConfigError("synth spec: bad value for '" + key + "'");
    auto count = [&](std::size_t& field, bool allow_zero) {
      if (*v < 0 || *v != std::floor(*v) || (!allow_zero && *v == 0)) {
        throw ConfigError("synth spec: '" + key + "' must be a " + (allow_zero ? "non-negative" : "positive") +
                          " integer");
      }
      field = static_cast<std::size_t>(*v);
    };
    if (key == "n0") count(s.n0, false);
    else if (key == "growth") count(s.growth, true);
    else if (key == "periods") count(s.periods, false);
    else if (key == "T") count(s.steps, false);
    else if (key == "seed") {
      if (*v < 0 || *v != std::floor(*v)) throw ConfigError("synth spec: 'seed' must be a non-negative integer");
      s.seed = static_cast<std::uint64_t>(*v);
    } else if (key == "level") s.level = *v;
    else if (key == "amplitude") s.amplitude = *v;
    else if (key == "day") s.day = *v;
    else if (key == "offset") s.offset = *v;
    else if (key == "noise") s.noise = *v;
    else if (key == "rho") s.rho = *v;
    else if (key == "r") s.threshold = *v;
    else throw ConfigError("synth spec: unknown key '" + key + "'");
  }
  if (s.day <= 0) throw ConfigError("synth spec: 'day' must be positive");
  if (s.noise < 0 || s.offset < 0) throw ConfigError("synth spec: 'noise' and 'offset' must be non-negative");
  if (!(s.threshold >= 0 && s.threshold < 1)) throw ConfigError("synth spec: 'r' must lie in [0, 1)");
  return s;
}

std::string to_string(const SynthSpec& s) {
  using detail::format_double;
  return "n0=" + std::to_string(s.n0) + ",growth=" + std::to_string(s.growth) + ",periods=" +
         std::to_string(s.periods) + ",T=" + std::to_string(s.steps) + ",seed=" + std::to_string(s.seed) +
         ",level=" + format_double(s.level) + ",amplitude=" + format_double(s.amplitude) + ",day=" +
         format_double(s.day) + ",offset=" + format_double(s.offset) + ",noise=" + format_double(s.noise) +
         ",rho=" + format_double(s.rho) + ",r=" + format_double(s.threshold);
}

StreamData synth_stream(const SynthSpec& spec) {
  const std::size_t total = spec.n0 + spec.growth * (spec.periods - 1);
  const Rng root(spec.seed);

  Rng place = root.derive("positions");
  Matrix pos(static_cast<Eigen::Index>(total), 2);
  for (Eigen::Index i = 0; i < pos.rows(); ++i) {
    pos(i, 0) = place.uniform();
    pos(i, 1) = place.uniform();
  }
  Matrix dist(pos.rows(), pos.rows());
  for (Eigen::Index i = 0; i < pos.rows(); ++i) {
    for (Eigen::Index j = 0; j < pos.rows(); ++j) dist(i, j) = (pos.row(i) - pos.row(j)).norm();
  }

  Rng off_rng = root.derive("offsets");
  Eigen::VectorXd offset(pos.rows());
  for (Eigen::Index i = 0; i < offset.size(); ++i) offset(i) = spec.offset * off_rng.normal();

  // Diffusion operator over the final node set: kernel rows normalized to 1.
  Matrix mix = build_adjacency(dist, spec.threshold) + Matrix::Identity(pos.rows(), pos.rows());
  const Eigen::VectorXd row_sum = mix.rowwise().sum();
  mix = row_sum.cwiseInverse().asDiagonal() * mix;

  const std::size_t horizon = spec.periods * spec.steps;
  Matrix signal(static_cast<Eigen::Index>(horizon), pos.rows());
  Eigen::VectorXd latent = Eigen::VectorXd::Zero(pos.rows());
  Rng noise_rng = root.derive("noise");
  for (std::size_t t = 0; t < horizon; ++t) {
    Eigen::VectorXd next = spec.rho * (mix * latent);
    for (Eigen::Index i = 0; i < next.size(); ++i) next(i) += spec.noise * noise_rng.normal();
    latent = next;
    const double seasonal = spec.amplitude * std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / spec.day);
    for (Eigen::Index i = 0; i < latent.size(); ++i) {
      signal(static_cast<Eigen::Index>(t), i) = spec.level + offset(i) + seasonal + latent(i);
    }
  }

  StreamData out;
  for (std::size_t p = 0; p < spec.periods; ++p) {
    const std::size_t n = spec.n0 + spec.growth * p;
    PeriodGraph g;
    g.period_index = static_cast<int>(p + 1);
    for (std::size_t i = 0; i < n; ++i) {
      char buf[16];
      std::snprintf(buf, sizeof(buf), "n%04zu", i);
      g.nodes.emplace_back(buf);
    }
    g.distances = dist.topLeftCorner(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    g.adjacency = build_adjacency(g.distances, spec.threshold);
    ObservationSeries s;
    s.period_index = g.period_index;
    s.node_ids = g.nodes;
    s.values = signal.block(static_cast<Eigen::Index>(p * spec.steps), 0, static_cast<Eigen::Index>(spec.steps),
                            static_cast<Eigen::Index>(n));
    out.graph.periods.push_back(std::move(g));
    out.series.push_back(std::move(s));
  }
  return out;
}

StreamData load_stream_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": invalid JSON (" + std::string(e.what()) + ")");
  }
  const fs::path base = fs::path(path).parent_path();
  auto resolve = [&](const nlohmann::json& p, const char* key, std::size_t idx) {
    if (!p.contains(key) || !p[key].is_string()) {
      throw DataError(path + ": period " + std::to_string(idx + 1) + " lacks string field '" + key + "'");
    }
    fs::path f = p[key].get<std::string>();
    return (f.is_absolute() ? f : base / f).string();
  };
  if (!j.contains("periods") || !j["periods"].is_array() || j["periods"].empty()) {
    throw DataError(path + ": manifest needs a non-empty 'periods' array");
  }
  const double default_threshold = j.value("threshold", 0.5);
  StreamData out;
  for (std::size_t i = 0; i < j["periods"].size(); ++i) {
    const auto& p = j["periods"][i];
    PeriodGraph g;
    g.period_index = static_cast<int>(i + 1);
    g.nodes = read_node_list(resolve(p, "nodes", i));
    g.distances = read_distances(resolve(p, "distances", i), g.nodes);
    std::optional<double> sigma;
    if (p.contains("sigma")) sigma = p["sigma"].get<double>();
    try {
      g.adjacency = build_adjacency(g.distances, p.value("threshold", default_threshold), sigma);
    } catch (const ArgumentError& e) {
      throw DataError(path + ": period " + std::to_string(i + 1) + ": " + e.what());
    }
    out.series.push_back(ingest_period(resolve(p, "observations", i), g));
    out.graph.periods.push_back(std::move(g));
  }
  out.graph.validate();
  return out;
}

std::string write_stream(const StreamData& stream, const std::string& dir, double threshold) {
  fs::create_directories(dir);
  nlohmann::json manifest;
  manifest["threshold"] = threshold;
  manifest["periods"] = nlohmann::json::array();
  for (std::size_t i = 0; i < stream.graph.periods.size(); ++i) {
    const PeriodGraph& g = stream.graph.periods[i];
    const std::string stem = "period_" + std::to_string(g.period_index);
    fs::create_directories(fs::path(dir) / stem);
    {
      std::ofstream nodes(fs::path(dir) / stem / "nodes.txt");
      if (!nodes) throw IoError("cannot write node list in '" + dir + "'");
      for (const auto& id : g.nodes) nodes << id << '\n';
    }
    write_dense_matrix((fs::path(dir) / stem / "distances.csv").string(), g.distances);
    write_observations((fs::path(dir) / stem / "observations.csv").string(), stream.series[i]);
    manifest["periods"].push_back({{"nodes", stem + "/nodes.txt"},
                                   {"distances", stem + "/distances.csv"},
                                   {"observations", stem + "/observations.csv"}});
  }
  const std::string mpath = (fs::path(dir) / "manifest.json").string();
  std::ofstream out(mpath);
  if (!out) throw IoError("cannot write '" + mpath + "'");
  out << manifest.dump(2) << '\n';
  return mpath;
}

}  // namespace eac
