#pragma once

#include "relnas/rng.hpp"

#include <json.hpp>

#include <array>
#include <compare>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace relnas {

/// Candidate operations, numbered in encoding order. Ordinal k owns the
/// half-open gene interval [k, k+1).
enum class OperationKind : std::uint8_t {
    MaxPool3 = 0,
    AvgPool3 = 1,
    Identity = 2,
    SepConv3 = 3,
    SepConv5 = 4,
    DilConv3 = 5,
    DilConv5 = 6,
};

inline constexpr int kOperationCount = 7;

inline constexpr std::array<OperationKind, kOperationCount> kAllOperations = {
    OperationKind::MaxPool3, OperationKind::AvgPool3, OperationKind::Identity,
    OperationKind::SepConv3, OperationKind::SepConv5, OperationKind::DilConv3,
    OperationKind::DilConv5,
};

constexpr int ordinal(OperationKind op) { return static_cast<int>(op); }

/// Kernel size as listed for the operation (0 for identity).
int kernel_size(OperationKind op);

/// Canonical serialized name, e.g. "sep_conv_3x3".
std::string_view op_name(OperationKind op);

/// Inverse of op_name. Throws InvalidGenotype for unknown names.
OperationKind op_from_name(std::string_view name);

OperationKind op_from_ordinal(int k);

enum class CellType : std::uint8_t { Normal = 0, Reduction = 1 };

std::string_view cell_type_name(CellType t);
CellType cell_type_from_name(std::string_view name);

struct Interval {
    double lo = 0.0;
    double hi = 0.0;

    bool contains(double v) const { return v >= lo && v < hi; }
};

enum class GeneSlot : std::uint8_t { Pre1 = 0, Op1 = 1, Pre2 = 2, Op2 = 3 };

struct GeneInfo {
    CellType cell;
    int block;
    GeneSlot slot;
    Interval interval;
};

/// Layout of the flat encoding. Each cell contributes four genes per block in
/// the order (pre1, op1, pre2, op2); normal-cell genes come first.
struct SearchSpaceScheme {
    int blocks_per_cell = 4;

    std::size_t genes_per_cell() const { return 4 * static_cast<std::size_t>(blocks_per_cell); }
    std::size_t length() const { return 2 * genes_per_cell(); }

    std::size_t position(CellType cell, int block, GeneSlot slot) const;
    GeneInfo gene(std::size_t position) const;
    Interval interval(std::size_t position) const { return gene(position).interval; }

    /// Throws ConfigError unless blocks_per_cell >= 1.
    void check() const;

    friend bool operator==(const SearchSpaceScheme&, const SearchSpaceScheme&) = default;
};

struct ArchVector {
    std::vector<double> values;

    std::size_t size() const { return values.size(); }
    double operator[](std::size_t i) const { return values[i]; }
    double& operator[](std::size_t i) { return values[i]; }

    friend bool operator==(const ArchVector&, const ArchVector&) = default;
};

struct Block {
    int pre1 = 0;
    OperationKind op1 = OperationKind::Identity;
    int pre2 = 0;
    OperationKind op2 = OperationKind::Identity;

    friend bool operator==(const Block&, const Block&) = default;
};

/// Block b defines node b + 2; nodes 0 and 1 are the cell inputs.
struct CellGenotype {
    CellType cell_type = CellType::Normal;
    std::vector<Block> blocks;

    friend bool operator==(const CellGenotype&, const CellGenotype&) = default;
};

struct Genotype {
    CellGenotype normal{CellType::Normal, {}};
    CellGenotype reduction{CellType::Reduction, {}};

    const CellGenotype& cell(CellType t) const { return t == CellType::Normal ? normal : reduction; }
    CellGenotype& cell(CellType t) { return t == CellType::Normal ? normal : reduction; }

    friend bool operator==(const Genotype&, const Genotype&) = default;
};

struct DagEdge {
    int source = 0;
    int target = 0;
    OperationKind op = OperationKind::Identity;

    friend bool operator==(const DagEdge&, const DagEdge&) = default;
};

/// Explicit graph form of one cell. Nodes 0..B+1 are inputs and intermediate
/// nodes; node B+2 is the concatenation output fed by every intermediate node.
struct CellDag {
    CellType cell_type = CellType::Normal;
    int blocks = 0;
    std::vector<DagEdge> edges;

    int output_node() const { return blocks + 2; }
    int node_count() const { return blocks + 3; }
    std::vector<int> output_sources() const;
    int in_degree(int node) const;
    /// Kahn's algorithm, lowest ready index first. Throws InvalidGenotype on a cycle.
    std::vector<int> topological_order() const;
};

struct GeneViolation {
    std::size_t position;
    double value;
    Interval interval;
};

/// Every out-of-interval gene; empty iff the vector is valid.
/// Throws LengthMismatch if the length does not match the scheme.
std::vector<GeneViolation> validate(const ArchVector& vec, const SearchSpaceScheme& scheme);

/// Throws InvalidGene for the first violation (or LengthMismatch).
void require_valid(const ArchVector& vec, const SearchSpaceScheme& scheme);

Genotype decode(const ArchVector& vec, const SearchSpaceScheme& scheme);

/// Maps each discrete choice k to the interval midpoint k + 0.5.
ArchVector encode(const Genotype& g, const SearchSpaceScheme& scheme);

/// Throws InvalidGenotype if g does not fit the scheme.
void require_valid(const Genotype& g, const SearchSpaceScheme& scheme);
void require_valid(const CellGenotype& cell, int blocks_per_cell);

ArchVector random_arch(Rng& rng, const SearchSpaceScheme& scheme);
Genotype random_genotype(Rng& rng, const SearchSpaceScheme& scheme);
CellGenotype random_cell(Rng& rng, CellType type, int blocks_per_cell);

CellDag to_dag(const CellGenotype& cell);

/// Graphviz rendering: inputs "in0"/"in1", intermediates "c_{k}", output "out".
std::string to_dot(const CellDag& dag);

nlohmann::json to_json(const Genotype& g);
nlohmann::json to_json(const CellGenotype& cell);
Genotype genotype_from_json(const nlohmann::json& j);
CellGenotype cell_from_json(const nlohmann::json& j, CellType type);

/// Compact JSON text, used as the lookup key for tabulated losses.
std::string canonical_string(const Genotype& g);

/// Short human-readable form, e.g. "1:sep_conv_3x3 1:sep_conv_3x3 | 2:identity ...".
std::string compact_string(const CellGenotype& cell);

inline constexpr std::uint64_t kDefaultEnumerationCap = 100'000'000ULL;

/// Number of distinct cells for the scheme, saturating at UINT64_MAX.
std::uint64_t cell_space_size(const SearchSpaceScheme& scheme);
/// Number of distinct genotypes (cells squared), saturating at UINT64_MAX.
std::uint64_t genotype_space_size(const SearchSpaceScheme& scheme);

/// Visits every cell of one type exactly once, in lexicographic gene order.
void for_each_cell(const SearchSpaceScheme& scheme, CellType type,
                   const std::function<void(const CellGenotype&)>& visit,
                   std::uint64_t cap = kDefaultEnumerationCap);

/// Visits every genotype exactly once. Throws SpaceTooLarge above the cap.
void for_each_genotype(const SearchSpaceScheme& scheme,
                       const std::function<void(const Genotype&)>& visit,
                       std::uint64_t cap = kDefaultEnumerationCap);

} // namespace relnas
