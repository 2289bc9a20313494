#pragma once

// Versioned binary checkpoints.
//
// Layout (all integers little-endian u32, floats little-endian f32):
//   magic "ADDC" | version | config length | config JSON bytes |
//   repeated until EOF: name length | name | rank | dims... | payload
//
// The payload is always f32 regardless of the library's working precision.

#include <string>
#include <utility>
#include <vector>

#include "core/tensor.hpp"

namespace add {

inline constexpr uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  uint32_t version = kCheckpointVersion;
  std::string config_json;
  std::vector<std::pair<std::string, Tensor>> blobs;
};

// Writes the file atomically enough for our purposes (truncate + write).
// Throws Error(Io) on filesystem trouble.
void save_checkpoint(const std::string& path, const std::string& config_json,
                     const std::vector<std::pair<std::string, Tensor>>& blobs);

// Throws Error(Io) when the file cannot be read and Error(Format) on bad
// magic, unsupported version, or truncation.
Checkpoint load_checkpoint(const std::string& path);

// Copies checkpoint values into the matching destination tensors. Every
// destination name must be present with the same shape, and the checkpoint
// must not carry extras. Throws Error(Format) on mismatch.
void load_tensors(const Checkpoint& ckpt,
                  const std::vector<std::pair<std::string, Tensor>>& dst);

}  // namespace add
