#pragma once

// Binary checkpoint:
//   "PSPG" | u32 version | entries... | u32 CRC32 of all preceding bytes
// entry: u16 name length | UTF-8 name | u8 dtype (0 f32, 1 f64) | u8 rank |
//        u64 dims[rank] | payload
// All integers and payload values are little-endian.

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "pspg/params.hpp"

namespace pspg {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Each tensor is written at its own dtype; f32 tensors hold float values, so
// both encodings are lossless.
std::string encode_checkpoint(const ParamList& params);
ParamList decode_checkpoint(const std::string& bytes);

void write_checkpoint(const std::filesystem::path& path, const ParamList& params);
ParamList read_checkpoint(const std::filesystem::path& path);

// Entries of `params` whose names start with `prefix`.
ParamList with_prefix(const ParamList& params, const std::string& prefix);

// Bitwise equality of names, shapes, dtypes and values.
bool params_identical(const ParamList& a, const ParamList& b);

}  // namespace pspg
