#pragma once

#include "udama/netgraph.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>

namespace udama {

/// Binary checkpoint, little-endian host layout:
///   "UDAMACKP" | u32 version | NetConfig | u8 freeze_applied |
///   u32 n_flags { str layer, u8 trainable } | u32 n_tensors { str name, u64 rows, u64 cols, f64[rows*cols] }
/// where str = u32 length + bytes. Parameters and batch-norm buffers are both stored.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(std::ostream& os, const ModelParams& params);
ModelParams load_checkpoint(std::istream& is);

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace udama
