#pragma once

// Named-tensor container:
//   "UFCK" | u32 version | u64 metadata length | metadata JSON |
//   u32 tensor count | per tensor: u32 name length, name, u8 dtype (0 f32, 1 f64),
//   u32 rank, u64 dims[rank], little-endian data.
// Optimizer moments are stored as "<name>#m" and "<name>#v".

#include "ufad/network.hpp"

#include <string>

#include <nlohmann/json.hpp>

namespace ufad {

void save_checkpoint(const std::string& path, const ParamStore<float>& params, const nlohmann::json& metadata);

struct Checkpoint {
  ParamStore<float> params;
  nlohmann::json metadata;
};

Checkpoint load_checkpoint(const std::string& path);

}  // namespace ufad
