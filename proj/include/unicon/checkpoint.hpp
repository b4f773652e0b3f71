#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "unicon/module.hpp"

namespace unicon {

class CheckpointError : public Error {
 public:
  using Error::Error;
};
/// Stored CRC differs from the CRC of the preceding bytes (also raised for
/// files too short to carry one).
class CheckpointCrcError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class CheckpointVersionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
/// Tensor names or shapes differ from the model being loaded.
class CheckpointMismatchError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Layout, little-endian: "UCKP", u32 version, u64 tensor count, then per
/// tensor u32 name length, name bytes, u8 dtype (0 = f32), u32 rank, rank x
/// i64 dims, raw f32 data; finally u32 CRC-32 of all preceding bytes.
std::string encode_checkpoint(const std::map<std::string, Tensor>& tensors,
                              std::uint32_t version = kCheckpointVersion);
std::map<std::string, Tensor> decode_checkpoint(const std::string& bytes);

std::map<std::string, Tensor> module_tensors(const Module& module);

/// Every parameter, trainable or not, by name.
void save_checkpoint(const std::filesystem::path& path, const Module& module);
/// Loads into `module`; the name set and every shape must match exactly.
void load_checkpoint(const std::filesystem::path& path, Module& module);
std::map<std::string, Tensor> read_checkpoint(const std::filesystem::path& path);

}  // namespace unicon
