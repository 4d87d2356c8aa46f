#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "eac/nn/tape.hpp"

namespace eac::nn {

// Text checkpoint:
//   eac-params v1 <key=value>...
//   <name> <d0>x<d1>... <v0> <v1> ...
// Values use the shortest round-trip decimal form, so save/load is exact.
std::string serialize_parameters(const std::vector<Parameter>& params,
                                 const std::map<std::string, std::string>& header = {});
std::vector<Parameter> parse_parameters(const std::string& text,
                                        std::map<std::string, std::string>* header = nullptr);

void save_parameters(const std::string& path, const std::vector<Parameter>& params,
                     const std::map<std::string, std::string>& header = {});
std::vector<Parameter> load_parameters(const std::string& path,
                                       std::map<std::string, std::string>* header = nullptr);

// FNV-1a over the serialized values; equal iff every value is bit-identical.
std::uint64_t parameter_hash(const std::vector<Parameter>& params);

}  // namespace eac::nn
