#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "semafo/array.hpp"

namespace semafo {

// Versioned binary parameter container.
//
// Layout (all integers little-endian):
//   magic  "SMFO1" (5 bytes)
//   u32    format version (currently 1)
//   u64    config hash
//   u32    config text length, followed by that many bytes (canonical form)
//   u32    tensor count
//   per tensor:
//     u32  name length, name bytes
//     u32  rank, u64 dims...
//     f64  payload (row-major), bit-exact
struct Checkpoint {
  uint64_t config_hash = 0;
  std::string config_text;
  std::vector<std::pair<std::string, Array>> tensors;

  const Array* find(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// FNV-1a over a byte string; used for config hashes and checkpoint identity.
uint64_t fnv1a64(const void* data, size_t len);
uint64_t fnv1a64_file(const std::string& path);

// Write-to-temp-then-rename, so readers never observe a partial file.
void atomic_write_file(const std::string& path, const std::string& bytes);

}  // namespace semafo
