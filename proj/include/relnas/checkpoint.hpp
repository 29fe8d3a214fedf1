#pragma once

#include "relnas/config.hpp"
#include "relnas/slow_fast.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>

namespace relnas {

inline constexpr int kCheckpointFormatVersion = 1;

/// "checkpoint_g0025.ckpt"
std::string checkpoint_name(int generation);

/// JSON envelope with the config hash, population, weight set (base64 payload),
/// random stream states, per-generation history, best record and a checksum over
/// everything else.
nlohmann::json checkpoint_to_json(const RunConfig& config, const SearchState& state);

/// Throws CorruptCheckpoint on a damaged envelope and HashMismatch when the
/// checkpoint was written under a different configuration.
SearchState checkpoint_from_json(const nlohmann::json& j, const RunConfig& config);

void save_checkpoint(const std::filesystem::path& path, const RunConfig& config, const SearchState& state);
SearchState load_checkpoint(const std::filesystem::path& path, const RunConfig& config);

} // namespace relnas
