#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "attnflow/param.hpp"
#include "attnflow/tensor.hpp"

namespace attnflow {

inline constexpr std::uint32_t kArchiveFormatVersion = 1;

struct TensorBlock {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<Real> values;
};

/// Single-file container for named tensors plus a JSON metadata document.
///
/// Layout (little-endian): magic "ATTNFLOW", u32 format version, u32 kind
/// length + kind, u64 metadata length + JSON text, u32 block count, then per
/// block u32 name length + name, u32 rank, u64 dims, u64 count, f64 values; finally a
/// 32-byte SHA-256 of every preceding byte.
struct Archive {
  std::string kind;
  std::uint32_t version = kArchiveFormatVersion;
  nlohmann::json meta = nlohmann::json::object();
  std::vector<TensorBlock> blocks;

  const TensorBlock* find(const std::string& name) const;
  void add(const Param& p);
  void add(TensorBlock block);
};

void write_archive(const Archive& archive, const std::filesystem::path& path);

/// Throws IoError when the file is missing, truncated or fails its digest,
/// and ConfigError when the format version is newer than this build reads.
Archive read_archive(const std::filesystem::path& path);

/// Copies a stored block into a parameter, checking name and element count.
void restore_param(const Archive& archive, Param& p);

std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_file(const std::filesystem::path& path);

/// Digest over parameter names, shapes and values.
std::string params_digest(const ConstParamList& params);

}  // namespace attnflow
