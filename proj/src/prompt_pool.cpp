#include "eac/prompt_pool.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include <Eigen/Dense>

#include "eac/error.hpp"
#include "eac/nn/ops.hpp"
#include "eac/rng.hpp"
#include "text_io.hpp"

namespace eac {

using nn::Parameter;
using nn::Tensor;

namespace {
constexpr const char* kPoolMagic = "eac-pool";
constexpr const char* kPoolVersion = "v1";

std::string segment_name(int period_index) { return "pool.A." + std::to_string(period_index); }
}  // namespace

std::string to_string(PoolMode m) { return m == PoolMode::kLowRank ? "lowrank" : "full"; }

PoolMode parse_pool_mode(const std::string& tag) {
  if (tag == "lowrank") return PoolMode::kLowRank;
  if (tag == "full") return PoolMode::kFull;
  throw ConfigError("unknown pool mode '" + tag + "' (expected lowrank or full)");
}

PromptPool PromptPool::create(const std::vector<NodeId>& nodes, std::size_t d, std::size_t k, PoolMode mode,
                              std::uint64_t seed, int period_index) {
  if (nodes.empty()) throw ArgumentError("prompt pool: empty node list");
  if (d == 0) throw ArgumentError("prompt pool: width d must be positive");
  if (mode == PoolMode::kLowRank && (k == 0 || k > std::min(nodes.size(), d))) {
    throw ArgumentError("prompt pool: rank k=" + std::to_string(k) + " must lie in [1, min(n, d)] = [1, " +
                        std::to_string(std::min(nodes.size(), d)) + "]");
  }
  PromptPool pool;
  pool.d_ = d;
  pool.k_ = mode == PoolMode::kLowRank ? k : d;
  pool.mode_ = mode;
  if (mode == PoolMode::kLowRank) {
    Rng rng = Rng(seed).derive("pool.B");
    Tensor b({k, d});
    const double sd = 1.0 / std::sqrt(static_cast<double>(k));
    for (double& v : b.storage()) v = rng.normal(0.0, sd);
    pool.adjustment_ = Parameter{"pool.B", std::move(b), true};
  }
  std::unordered_set<NodeId> seen;
  for (const NodeId& id : nodes) {
    if (!seen.insert(id).second) throw ArgumentError("prompt pool: duplicate node id '" + id + "'");
  }
  pool.segments_.push_back(
      PoolSegment{period_index, nodes, Parameter{segment_name(period_index), Tensor({nodes.size(), pool.k_}), true}});
  return pool;
}

void PromptPool::expand(const std::vector<NodeId>& new_ids, int period_index) {
  if (new_ids.empty()) return;
  std::unordered_set<NodeId> existing;
  for (const auto& seg : segments_) existing.insert(seg.node_ids.begin(), seg.node_ids.end());
  for (const auto& seg : segments_) {
    if (seg.period_index == period_index) {
      throw ArgumentError("prompt pool: period " + std::to_string(period_index) + " already has a segment");
    }
  }
  for (const NodeId& id : new_ids) {
    if (!existing.insert(id).second) throw ArgumentError("prompt pool: duplicate node id '" + id + "'");
  }
  segments_.push_back(
      PoolSegment{period_index, new_ids, Parameter{segment_name(period_index), Tensor({new_ids.size(), k_}), true}});
}

std::size_t PromptPool::rows() const {
  std::size_t n = 0;
  for (const auto& seg : segments_) n += seg.node_ids.size();
  return n;
}

std::vector<NodeId> PromptPool::node_ids() const {
  std::vector<NodeId> ids;
  for (const auto& seg : segments_) ids.insert(ids.end(), seg.node_ids.begin(), seg.node_ids.end());
  return ids;
}

Tensor PromptPool::materialize() const {
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const std::size_t n = rows();
  Tensor stacked({n, k_});
  std::size_t off = 0;
  for (const auto& seg : segments_) {
    std::copy(seg.factors.value.storage().begin(), seg.factors.value.storage().end(),
              stacked.storage().begin() + static_cast<long>(off));
    off += seg.factors.value.size();
  }
  if (mode_ == PoolMode::kFull) return stacked;
  Tensor out({n, d_});
  Eigen::Map<RowMat>(out.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d_)).noalias() =
      Eigen::Map<const RowMat>(stacked.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k_)) *
      Eigen::Map<const RowMat>(adjustment_.value.data(), static_cast<Eigen::Index>(k_), static_cast<Eigen::Index>(d_));
  return out;
}

nn::Var PromptPool::materialize(nn::Tape& tape) const {
  std::vector<nn::Var> blocks;
  for (const auto& seg : segments_) blocks.push_back(tape.param(seg.factors));
  nn::Var stacked = blocks.size() == 1 ? blocks[0] : nn::concat_rows(blocks);
  if (mode_ == PoolMode::kFull) return stacked;
  return nn::matmul(stacked, tape.param(adjustment_));
}

ParamCount PromptPool::param_count() const {
  ParamCount c;
  for (const auto& seg : segments_) c.tunable += seg.factors.value.size();
  if (mode_ == PoolMode::kLowRank) c.tunable += adjustment_.value.size();
  c.materialized = rows() * d_;
  c.ratio = c.materialized ? static_cast<double>(c.tunable) / static_cast<double>(c.materialized) : 0.0;
  return c;
}

std::vector<Parameter*> PromptPool::parameters() {
  std::vector<Parameter*> out;
  for (auto& seg : segments_) out.push_back(&seg.factors);
  if (mode_ == PoolMode::kLowRank) out.push_back(&adjustment_);
  return out;
}

std::vector<Parameter> PromptPool::snapshot() const {
  std::vector<Parameter> out;
  for (const auto& seg : segments_) out.push_back(seg.factors);
  if (mode_ == PoolMode::kLowRank) out.push_back(adjustment_);
  return out;
}

void PromptPool::restore(const std::vector<Parameter>& saved) {
  auto params = parameters();
  if (saved.size() != params.size()) throw ArgumentError("prompt pool: snapshot has a different layout");
  for (std::size_t i = 0; i < saved.size(); ++i) {
    if (saved[i].name != params[i]->name || saved[i].value.shape() != params[i]->value.shape()) {
      throw ArgumentError("prompt pool: snapshot entry '" + saved[i].name + "' does not match");
    }
    params[i]->value = saved[i].value;
  }
}

void PromptPool::set_trainable(bool trainable) {
  for (Parameter* p : parameters()) p->trainable = trainable;
}

void PromptPool::freeze_old_segments() {
  for (std::size_t i = 0; i + 1 < segments_.size(); ++i) segments_[i].factors.trainable = false;
}

void PromptPool::set_adjustment_trainable(bool trainable) {
  if (mode_ == PoolMode::kLowRank) adjustment_.trainable = trainable;
}

void PromptPool::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  auto write_rows = [&](const Tensor& t) {
    const std::size_t cols = t.dim(1);
    for (std::size_t r = 0; r < t.dim(0); ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        if (c) out << ' ';
        out << detail::format_double(t[r * cols + c]);
      }
      out << '\n';
    }
  };
  out << kPoolMagic << ' ' << kPoolVersion << " k=" << k_ << " d=" << d_ << " mode=" << to_string(mode_) << '\n';
  for (const auto& seg : segments_) {
    out << "segment period=" << seg.period_index << " rows=" << seg.node_ids.size() << '\n';
    for (std::size_t i = 0; i < seg.node_ids.size(); ++i) out << (i ? " " : "") << seg.node_ids[i];
    out << '\n';
    write_rows(seg.factors.value);
  }
  if (mode_ == PoolMode::kLowRank) {
    out << "B rows=" << k_ << '\n';
    write_rows(adjustment_.value);
  }
  if (!out) throw IoError("failed writing '" + path + "'");
}

namespace {

struct LineReader {
  std::vector<std::string> lines;
  std::size_t pos = 0;
  std::string path;

  bool done() const { return pos >= lines.size(); }
  const std::string& next(const char* what) {
    if (done()) throw DataError(path + ": truncated pool file, expected " + what);
    return lines[pos++];
  }
};

std::size_t field_value(const std::string& token, const std::string& key, const std::string& path) {
  if (token.rfind(key + "=", 0) != 0) throw DataError(path + ": expected '" + key + "=' in pool file");
  auto v = detail::parse_double(std::string_view(token).substr(key.size() + 1));
  if (!v || *v < 0 || *v != std::floor(*v)) throw DataError(path + ": bad value for '" + key + "'");
  return static_cast<std::size_t>(*v);
}

Tensor read_rows(LineReader& r, std::size_t rows, std::size_t cols) {
  Tensor t({rows, cols});
  for (std::size_t i = 0; i < rows; ++i) {
    const std::string& line = r.next("matrix row");
    std::istringstream ls(line);
    std::string tok;
    std::size_t c = 0;
    while (ls >> tok) {
      auto v = detail::parse_double(tok);
      if (!v || c >= cols) throw DataError(r.path + ":" + std::to_string(r.pos) + ": malformed matrix row");
      t[i * cols + c++] = *v;
    }
    if (c != cols) throw DataError(r.path + ":" + std::to_string(r.pos) + ": truncated matrix row");
  }
  return t;
}

}  // namespace

PromptPool PromptPool::load(const std::string& path, std::size_t expected_d) {
  LineReader r{detail::read_lines(path), 0, path};
  std::istringstream hs(r.next("header"));
  std::string magic, version, k_tok, d_tok, mode_tok;
  hs >> magic >> version >> k_tok >> d_tok >> mode_tok;
  if (magic != kPoolMagic) throw DataError(path + ": not a prompt pool file");
  if (version != kPoolVersion) throw DataError(path + ": unsupported pool version tag '" + version + "'");
  PromptPool pool;
  pool.k_ = field_value(k_tok, "k", path);
  pool.d_ = field_value(d_tok, "d", path);
  if (mode_tok.rfind("mode=", 0) != 0) throw DataError(path + ": expected 'mode=' in pool header");
  try {
    pool.mode_ = parse_pool_mode(mode_tok.substr(5));
  } catch (const ConfigError& e) {
    throw DataError(path + ": " + e.what());
  }
  if (expected_d != 0 && pool.d_ != expected_d) {
    throw DataError(path + ": pool width d=" + std::to_string(pool.d_) + " does not match expected d=" +
                    std::to_string(expected_d));
  }
  if (pool.mode_ == PoolMode::kFull && pool.k_ != pool.d_) throw DataError(path + ": full-mode pool needs k == d");

  std::unordered_set<NodeId> seen;
  while (!r.done()) {
    const std::string& line = r.next("section");
    if (detail::trim(line).empty()) continue;
    std::istringstream ls(line);
    std::string kind, a, b;
    ls >> kind >> a;
    if (kind == "segment") {
      ls >> b;
      PoolSegment seg;
      seg.period_index = static_cast<int>(field_value(a, "period", path));
      const std::size_t rows = field_value(b, "rows", path);
      std::istringstream ids(r.next("segment node ids"));
      std::string id;
      while (ids >> id) {
        if (!seen.insert(id).second) throw DataError(path + ": duplicate node id '" + id + "'");
        seg.node_ids.push_back(id);
      }
      if (seg.node_ids.size() != rows) throw DataError(path + ": segment node count does not match rows=");
      seg.factors = Parameter{segment_name(seg.period_index), read_rows(r, rows, pool.k_), true};
      pool.segments_.push_back(std::move(seg));
    } else if (kind == "B") {
      if (pool.mode_ != PoolMode::kLowRank) throw DataError(path + ": full-mode pool has an adjustment block");
      if (field_value(a, "rows", path) != pool.k_) throw DataError(path + ": adjustment block must have k rows");
      pool.adjustment_ = Parameter{"pool.B", read_rows(r, pool.k_, pool.d_), true};
    } else {
      throw DataError(path + ":" + std::to_string(r.pos) + ": unexpected line '" + line + "'");
    }
  }
  if (pool.segments_.empty()) throw DataError(path + ": pool file has no segments");
  if (pool.mode_ == PoolMode::kLowRank && pool.adjustment_.value.size() == 0) {
    throw DataError(path + ": truncated pool file, missing adjustment block");
  }
  return pool;
}

std::uint64_t PromptPool::hash() const {
  std::string bytes;
  for (const Parameter& p : snapshot()) {
    bytes += p.name;
    for (double v : p.value.storage()) bytes += detail::format_double(v) + ",";
  }
  return fnv1a64(bytes);
}

}  // namespace eac
