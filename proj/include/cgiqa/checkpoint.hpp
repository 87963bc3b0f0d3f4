#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "cgiqa/param.hpp"
#include "cgiqa/tensor.hpp"

// Weight container layout (all integers little-endian):
//
//   "CGQW"            4-byte magic
//   u32 version       currently 1
//   u32 count         number of tensors
//   per tensor:
//     u32 name_len, name bytes (UTF-8)
//     u8  dtype       1 = float64
//     u32 rank, u64 dims[rank]
//     payload         product(dims) IEEE-754 binary64 values
//
// A JSON manifest with the same entries (name, shape, dtype, byte offset of
// the payload) is written next to the container as `<path>.json`.
namespace cgiqa {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

void save_tensors(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_tensors(const std::filesystem::path& path);

// Writes every parameter value in store order.
void save_params(const std::filesystem::path& path, const ParamStore& store);
// Loads every parameter named `prefix + rest` from the checkpoint entry
// `source_prefix + rest`. Returns how many were loaded; throws IoError when an
// entry is missing or a shape disagrees.
std::size_t load_params(const std::filesystem::path& path, ParamStore& store,
                        const std::string& prefix = "",
                        const std::string& source_prefix = "");

}  // namespace cgiqa
