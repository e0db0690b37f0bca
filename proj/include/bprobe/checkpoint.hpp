#pragma once

#include <string>

#include "bprobe/tinylm.hpp"

namespace bprobe::tinylm {

// Binary checkpoint: "BPLM" magic, u32 LE format version, u32 LE length-prefixed
// UTF-8 JSON header (config + vocabulary), row-major little-endian f64 weight
// blocks in declaration order, then an FNV-1a64 checksum of the weight bytes.
void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);

constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace bprobe::tinylm
