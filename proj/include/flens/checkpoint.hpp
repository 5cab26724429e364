#pragma once

#include <string>

#include "flens/model.hpp"

namespace flens {

// Checkpoint container: 8-byte magic "FLENSCPT", u32 version, u64
// header length, UTF-8 JSON header (spec id, epoch, layer shapes, seed,
// metadata), then raw little-endian f32 parameter blobs in
// header-declared order. Values are promoted to f64 on load.

inline constexpr char kCheckpointMagic[8] = {'F', 'L', 'E', 'N', 'S', 'C', 'P', 'T'};
inline constexpr uint32_t kCheckpointVersion = 1;

/// Writes via a temp file + atomic rename.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);

Checkpoint load_checkpoint(const std::string& path);

}  // namespace flens
