#include "eac/nn/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "../text_io.hpp"
#include "eac/error.hpp"
#include "eac/rng.hpp"

namespace eac::nn {

namespace {
constexpr const char* kMagic = "eac-params";
constexpr const char* kVersion = "v1";
}  // namespace

std::string serialize_parameters(const std::vector<Parameter>& params,
                                 const std::map<std::string, std::string>& header) {
  std::string out = std::string(kMagic) + " " + kVersion;
  for (const auto& [k, v] : header) out += " " + k + "=" + v;
  out += '\n';
  for (const Parameter& p : params) {
    out += p.name;
    out += ' ';
    for (std::size_t i = 0; i < p.value.rank(); ++i) {
      if (i) out += 'x';
      out += std::to_string(p.value.dim(i));
    }
    if (p.value.rank() == 0) out += "scalar";
    for (double v : p.value.storage()) {
      out += ' ';
      out += detail::format_double(v);
    }
    out += '\n';
  }
  return out;
}

std::vector<Parameter> parse_parameters(const std::string& text, std::map<std::string, std::string>* header) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw DataError("checkpoint: empty file");
  {
    std::istringstream hs(line);
    std::string magic, version;
    hs >> magic >> version;
    if (magic != kMagic) throw DataError("checkpoint: not a parameter file");
    if (version != kVersion) throw DataError("checkpoint: unsupported version tag '" + version + "'");
    std::string kv;
    while (hs >> kv) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw DataError("checkpoint: malformed header field '" + kv + "'");
      if (header) (*header)[kv.substr(0, eq)] = kv.substr(eq + 1);
    }
  }
  std::vector<Parameter> params;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    std::istringstream ls(line);
    std::string name, shape_text, tok;
    ls >> name >> shape_text;
    Shape shape;
    if (shape_text != "scalar") {
      for (auto part : detail::split(shape_text, 'x')) {
        auto d = detail::parse_double(part);
        if (!d || *d < 0) throw DataError("checkpoint: bad shape '" + shape_text + "' for '" + name + "'");
        shape.push_back(static_cast<std::size_t>(*d));
      }
    }
    std::vector<double> values;
    while (ls >> tok) {
      auto v = detail::parse_double(tok);
      if (!v) throw DataError("checkpoint: bad value '" + tok + "' in '" + name + "'");
      values.push_back(*v);
    }
    if (values.size() != numel(shape)) {
      throw DataError("checkpoint: parameter '" + name + "' is truncated (" + std::to_string(values.size()) + " of " +
                      std::to_string(numel(shape)) + " values)");
    }
    params.push_back(Parameter{name, Tensor(shape, std::move(values)), true});
  }
  return params;
}

void save_parameters(const std::string& path, const std::vector<Parameter>& params,
                     const std::map<std::string, std::string>& header) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << serialize_parameters(params, header);
}

std::vector<Parameter> load_parameters(const std::string& path, std::map<std::string, std::string>* header) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_parameters(ss.str(), header);
}

std::uint64_t parameter_hash(const std::vector<Parameter>& params) { return fnv1a64(serialize_parameters(params)); }

}  // namespace eac::nn
