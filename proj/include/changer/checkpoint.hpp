#pragma once

#include <string>
#include <vector>

#include "changer/tensor.hpp"

namespace changer {

// On-disk layout:
//   "CHANGER-CKPT 1\n"
//   plain-text header lines (the run configuration), terminated by "---\n"
//   u64 entry count
//   per entry: u32 name length, name bytes, u32 rank, rank x u64 dims,
//              numel x f64 values
// Every integer and float is little-endian.

class CheckpointError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct NamedTensor {
  std::string name;
  Tensor4 value;
};

struct Checkpoint {
  std::string header;
  std::vector<NamedTensor> entries;
};

void save_checkpoint(const std::string& path, const std::string& header, const Parameters& params);
Checkpoint load_checkpoint(const std::string& path);

/// Copies checkpoint values into params; names, order and shapes must match exactly.
void restore_parameters(const Checkpoint& ckpt, Parameters& params);

} // namespace changer
