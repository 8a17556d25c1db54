#pragma once

#include <string>

#include "stacklab/model.hpp"
#include "stacklab/optim.hpp"

namespace stacklab {

// Binary checkpoint: a u64(LE) length-prefixed text config record, then one
// record per parameter in store order: u64 name length, name bytes, u64
// rank, u64 per dimension, raw little-endian float32 data. Round-trips are
// bit-exact.
void save_checkpoint(const TransformerParams& params, const std::string& path);
TransformerParams load_checkpoint(const std::string& path);

// Optimizer sidecar in the same container format; tensors are stored as
// m.<param> and v.<param> in parameter order.
void save_optimizer(const AdamState& state, const std::string& path);
AdamState load_optimizer(const std::string& path, const TransformerParams& params);

// FNV-1a 64-bit over the file bytes; used to stamp analysis outputs.
uint64_t file_fnv1a(const std::string& path);
uint64_t fnv1a64(const void* data, size_t n, uint64_t seed = 0xcbf29ce484222325ull);

}  // namespace stacklab
