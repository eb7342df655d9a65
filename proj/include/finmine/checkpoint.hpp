#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "finmine/tensor.hpp"

namespace finmine {

// Container layout (little-endian):
//   "DAE1" | u32 version = 1 | u32 count |
//   count × { u16 name_len | name (UTF-8) | u8 dtype (0 = float32) | u8 rank |
//             u32 dims[rank] | row-major data }

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor<float> tensor;
};

std::vector<std::uint8_t> encode_checkpoint(const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> decode_checkpoint(const std::vector<std::uint8_t>& bytes);

/// Writes through a temporary file and renames it into place.
void write_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

}  // namespace finmine
