#pragma once

#include <filesystem>
#include <string>

#include "mpcflow/mlp.hpp"

namespace mpcflow {

/// Checkpoint layout, all integers little-endian:
///   "FLOWCKPT" | u32 version (1) | u32 input dim | u32 layer count |
///   (u32 rows, u32 cols) per layer | f64 weights then f64 bias, per layer.
/// The number of time frequencies is implied by the first layer's width.
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string checkpoint_bytes(const MlpVectorField& model);
MlpVectorField parse_checkpoint(const std::string& bytes, const std::string& origin = "<memory>");

void save_checkpoint(const MlpVectorField& model, const std::filesystem::path& path);
/// FormatError kinds: BadMagic, VersionMismatch, Truncated (payload length does
/// not match the declared shapes), Io.
MlpVectorField load_checkpoint(const std::filesystem::path& path);

}  // namespace mpcflow
