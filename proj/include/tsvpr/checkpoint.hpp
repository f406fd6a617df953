#pragma once

#include <string>

#include "tsvpr/model.hpp"

namespace tsvpr {

// Layout: "SVWT", u32 version, config block, u32 array count, then per array
// u32 name length, name bytes, u32 rank, u32 dims[rank], f32 values.
// Everything little-endian.
constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    ModelConfig config;
    ModelParams params;
};

void save_checkpoint(const std::string& path, const ModelConfig& config, const ModelParams& params);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace tsvpr
