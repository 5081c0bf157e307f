#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "xattn/model.hpp"
#include "xattn/optimizer.hpp"

namespace xattn {

// Binary checkpoint: magic "XATN", u32 version, embedded config JSON, step,
// named little-endian f32 tensor table, optional Adam state. Round trips
// bit-exactly.
struct Checkpoint {
  ModelParams params;
  int64_t step = 0;
  std::optional<AdamState> opt_state;
};

std::vector<uint8_t> checkpoint_to_bytes(const ModelParams& params, int64_t step,
                                         const AdamState* opt_state);
Checkpoint checkpoint_from_bytes(const std::vector<uint8_t>& bytes);

void save_checkpoint(const ModelParams& params, int64_t step,
                     const AdamState* opt_state, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Throws when the checkpoint's embedded config differs from `expected`.
void check_config(const ModelParams& params, const ModelConfig& expected);

// Stable content id (FNV-1a over the serialized bytes), hex string.
std::string checkpoint_id(const ModelParams& params, int64_t step);

}  // namespace xattn
