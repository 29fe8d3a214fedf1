#pragma once

#include "relnas/config.hpp"
#include "relnas/evaluators.hpp"
#include "relnas/slow_fast.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace relnas {

/// Bumped whenever a CSV header changes; recorded in summary.json.
inline constexpr int kLogSchemaVersion = 1;

/// Shortest round-trip decimal form of a double.
std::string format_double(double v);

/// Builds the configured evaluator. Needs a seed (random distance targets and
/// the synthetic dataset derive from it).
std::unique_ptr<Evaluator> make_evaluator(const RunConfig& config);

/// Reduction cell used by single-cell enumeration when none is configured:
/// a chain where block b reads node b+1 twice through sep_conv_3x3.
CellGenotype default_frozen_reduction(int blocks_per_cell);

std::string log_header();
/// One row per individual: generation,individual_id,loss,is_fast,pair_index.
std::string log_rows(const GenerationStats& stats);

struct SearchRunOptions {
    /// Stop (and checkpoint) after this many completed generations.
    std::optional<int> stop_after;
    /// Called after every generation.
    std::function<void(const GenerationStats&)> on_generation;
};

/// All entry points below finalize a copy of the config themselves.

/// Runs or continues a search in out_dir, writing log.csv, checkpoints and, when
/// the configured generation count is reached, the final artifacts.
/// The state returned is the one at the point the run stopped.
SearchState run_search(const RunConfig& config, const std::filesystem::path& out_dir,
                       const SearchRunOptions& options = {});
SearchState resume_search(const RunConfig& config, const std::filesystem::path& checkpoint,
                          const std::filesystem::path& out_dir, const SearchRunOptions& options = {});

/// best_genotype.json, normal.dot, reduction.dot and summary.json.
void write_final_artifacts(const RunConfig& config, const SearchState& state, const std::filesystem::path& out_dir,
                           double wall_time_seconds);

struct RandomSearchResult {
    int budget = 0;
    std::vector<double> losses;
    double best_loss = 0.0;
    int best_index = 0;
    Genotype best_genotype;
};

/// N*G independent random architectures, each estimated once from the initial
/// weight set (never committed). Sample i uses epoch index i / N.
RandomSearchResult random_search(const RunConfig& config, const Evaluator& evaluator);
void write_random_search(const RunConfig& config, const RandomSearchResult& result,
                         const std::filesystem::path& out_dir, double wall_time_seconds);

struct EnumerationRow {
    double loss;
    Genotype genotype;
};

struct Enumeration {
    /// Ascending by loss; ties keep enumeration order.
    std::vector<EnumerationRow> rows;
    /// Percentile -> loss of the ceil(p/100 * n)-th best row.
    std::map<double, double> thresholds;
    bool single_cell = false;
};

inline const std::vector<double> kReportedPercentiles = {0.1, 1, 5, 10, 25, 50, 75, 90, 100};

/// Loss at rank ceil(p/100 * n) (1-based) of ascending losses.
double percentile_threshold(const std::vector<double>& sorted_losses, double percent);

/// Scores every genotype with a surrogate evaluator. In single-cell mode only
/// normal cells are enumerated and the reduction cell is held at the frozen one.
/// Throws SpaceTooLarge above the cap and ConfigError for the micronet kind.
Enumeration enumerate_space(const RunConfig& config, std::uint64_t cap = kDefaultEnumerationCap);
void write_enumeration(const Enumeration& e, const std::filesystem::path& out_dir);

/// Parses "0.5, 3.2, ..." into a vector.
ArchVector parse_vector(std::string_view text);

/// Blocks per cell from the vector length when not given. Throws LengthMismatch.
SearchSpaceScheme infer_scheme(std::size_t length, std::optional<int> blocks_per_cell);

struct VectorInput {
    ArchVector vector;
    SearchSpaceScheme scheme;
};

/// Reads gene values separated by commas or whitespace, any number per line
/// ("#" starts a comment). Malformed or out-of-interval values are reported as
/// "file:line: ...".
VectorInput read_vector_file(const std::filesystem::path& path, std::optional<int> blocks_per_cell);

} // namespace relnas
