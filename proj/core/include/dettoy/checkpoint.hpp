#pragma once

#include <filesystem>

#include "dettoy/model.hpp"

namespace dettoy {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary container: magic, version, model config as JSON, then every parameter table as
/// (path, rows, cols, row-major doubles) in canonical path order. Little-endian hosts only.
void save_checkpoint(const Model& model, const std::filesystem::path& path);

/// Throws IoError if unreadable, ParseError on a corrupt or truncated file, and
/// ValidationError if the stored tables do not match the stored config.
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace dettoy
