#pragma once

// Checkpoint file format: magic "PTMCKPT1", u32 tensor count, then per
// tensor: u32 name length, name bytes, u32 rank, u32 dims, float32
// little-endian values.

#include <string>
#include <vector>

namespace pretram {

struct NamedTensor {
  std::string name;
  std::vector<int> dims;
  std::vector<float> values;
};

void save_checkpoint(const std::string& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_checkpoint(const std::string& path);

}  // namespace pretram
