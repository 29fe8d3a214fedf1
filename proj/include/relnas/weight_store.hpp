#pragma once

#include "relnas/rng.hpp"
#include "relnas/search_space.hpp"

#include <json.hpp>

#include <compare>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace relnas {

/// Identifies the parameters of one operation on one edge of one cell type.
struct WeightKey {
    CellType cell = CellType::Normal;
    int source = 0;
    int target = 2;
    OperationKind op = OperationKind::Identity;

    /// Stable textual form "cell/src/dst/op_name".
    std::string text() const;
    static WeightKey parse(std::string_view text);

    friend auto operator<=>(const WeightKey&, const WeightKey&) = default;
};

struct ParamShape {
    std::vector<std::size_t> dims;
    std::size_t fan_in = 0;

    /// Zero for parameter-free operations (empty dims).
    std::size_t numel() const;
};

using ShapeRegistry = std::map<WeightKey, ParamShape>;

struct WeightEntry {
    std::vector<std::size_t> shape;
    std::vector<double> params;
    std::uint64_t version = 0;

    /// Shape and parameters bitwise equal; versions ignored.
    bool same_values(const WeightEntry& other) const;
};

/// Copies of the entries one genotype uses; never aliases the weight set.
using InheritedWeights = std::map<WeightKey, WeightEntry>;

/// Shared parameter store, total over the key space of a scheme. The key set is
/// fixed at construction; commits only replace entries.
class WeightSet {
public:
    WeightSet() = default;

    /// Wraps a complete entry map; throws UnknownKey/MissingShape if the keys do
    /// not match the scheme's key space exactly.
    static WeightSet from_entries(const SearchSpaceScheme& scheme,
                                  std::map<WeightKey, WeightEntry> entries);

    const std::map<WeightKey, WeightEntry>& entries() const { return entries_; }
    const WeightEntry& at(const WeightKey& key) const;
    bool contains(const WeightKey& key) const { return entries_.count(key) != 0; }
    std::size_t size() const { return entries_.size(); }
    std::size_t parameter_count() const;

    /// Hash over keys, shapes, parameter bits and versions.
    std::uint64_t fingerprint() const;

    friend WeightSet commit(WeightSet omega, const InheritedWeights& fast,
                            const InheritedWeights& slow);

private:
    std::map<WeightKey, WeightEntry> entries_;
};

/// Every (cell type, source, target, op) key; 2 * 7 * sum_{t=2}^{B+1} t entries.
std::vector<WeightKey> enumerate_keys(const SearchSpaceScheme& scheme);

/// Keys used by a genotype, deduplicated and sorted.
std::vector<WeightKey> genotype_keys(const Genotype& g);

/// Uniform(-a, a) initialization with a = sqrt(3 / fan_in); parameter-free
/// entries stay empty. Throws MissingShape if the registry lacks a key.
WeightSet init_weight_set(const SearchSpaceScheme& scheme, const ShapeRegistry& shapes, Rng& rng);

InheritedWeights inherit(const WeightSet& omega, const Genotype& g);

/// Fast-learner entries take precedence, slow-learner entries fill keys the
/// fast-learner did not use, everything else is left alone. Overwritten entries
/// get their version bumped. Throws UnknownKey or ShapeMismatch.
WeightSet commit(WeightSet omega, const InheritedWeights& fast, const InheritedWeights& slow);

/// Checkpoint segment: {"entries": {"normal/0/2/sep_conv_3x3": {"shape": [...],
/// "version": n, "params": "<base64 little-endian f64>"}, ...}}.
nlohmann::json weights_to_json(const WeightSet& omega);
WeightSet weights_from_json(const nlohmann::json& j, const SearchSpaceScheme& scheme);

std::string base64_encode(const std::vector<double>& values);
std::vector<double> base64_decode_doubles(std::string_view text);

} // namespace relnas
