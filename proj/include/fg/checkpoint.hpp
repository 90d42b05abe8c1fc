#ifndef FG_CHECKPOINT_HPP
#define FG_CHECKPOINT_HPP

#include <string>
#include <vector>

#include "fg/tensor.hpp"

namespace fg {

// Model checkpoint container. On disk:
//   "FGT1" | u32 version | u32 metadata length | metadata bytes (JSON)
//   | u32 entry count | entries (u32 name length, name, u8 dtype, u8 ndim,
//   u32 dims...) | raw little-endian buffers in entry order.
// Loaders reject unknown magic and versions.
struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<double> data;
};

struct Checkpoint {
  std::string metadata;  // JSON, may be empty
  std::vector<CheckpointEntry> entries;

  const CheckpointEntry& at(const std::string& name) const;
  bool has(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace fg

#endif  // FG_CHECKPOINT_HPP
