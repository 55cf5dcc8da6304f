#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "gmx/tensor.hpp"

namespace gmx {

using NamedTensor = std::pair<std::string, Tensor>;

// Binary layout (all integers little-endian):
//   "GMNT" | u32 version=1 | u32 count |
//   count x { u16 name_len | name | u8 rank | u32 dims[rank] | f64 data[] }
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string encode_checkpoint(const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> decode_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path);

std::string read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::string& bytes);

}  // namespace gmx
