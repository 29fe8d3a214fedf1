#pragma once

#include "relnas/dataset.hpp"
#include "relnas/micronet.hpp"
#include "relnas/search_space.hpp"
#include "relnas/slow_fast.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

namespace relnas {

struct EvaluatorConfig {
    /// "distance" | "opcost" | "micronet" | "tabular"
    std::string kind = "distance";
    /// Target genotype JSON for the distance surrogate; a seeded random target when empty.
    std::filesystem::path target;
    /// Loss table JSON for the tabular backend.
    std::filesystem::path table;
    /// opcost: score only the normal cell.
    bool single_cell = false;
};

/// Full run configuration. Text form is an INI-style file:
///
///     seed = 7
///     [search]
///     population_size = 20
///     generations = 50
///     [evaluator]
///     kind = micronet
///
/// Unset fields keep their defaults; see README for the full key list.
struct RunConfig {
    std::optional<std::uint64_t> seed;
    SearchSpaceScheme scheme;
    SlowFastConfig search;
    std::filesystem::path frozen_reduction_path;
    int checkpoint_every = 10;
    EvaluatorConfig evaluator;
    TrainHyper train;
    MacroConfig macro;
    DatasetConfig data;
    std::filesystem::path output_dir = "results";

    /// Loads referenced files, derives dependent fields (schedule horizon,
    /// dataset width) and validates everything. Throws ConfigError.
    void finalize();

    /// Throws ConfigError if no seed was given.
    std::uint64_t require_seed() const;

    /// Sorted key=value lines for every field that influences the trajectory;
    /// referenced files contribute a content hash instead of their path.
    std::string canonical() const;
    std::uint64_t hash() const;
};

/// Parses config text. Errors carry "source:line:" prefixes. Relative paths are
/// resolved against base_dir.
RunConfig parse_config(std::string_view text, const std::string& source = "<config>",
                       const std::filesystem::path& base_dir = {});

RunConfig load_config(const std::filesystem::path& path);

/// Applies "section.key=value" (or "seed=value"). Throws ConfigError.
void apply_override(RunConfig& config, std::string_view assignment);

} // namespace relnas
