#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "hkd/tensor.hpp"

namespace hkd {

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Binary layout (native little-endian):
//   "HKDCKPT1" | u64 count | count x { u32 name_len | name | u32 rank | u64 dims[rank] | f64 values[] }
void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& entries);
std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path);

/// Hex SHA-256 of a file's bytes.
std::string file_sha256(const std::filesystem::path& path);
/// Hex SHA-256 of a string's bytes.
std::string sha256_hex(const std::string& bytes);

}  // namespace hkd
