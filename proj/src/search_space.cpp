#include "relnas/search_space.hpp"

#include "relnas/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace relnas {

namespace {

struct OpInfo {
    OperationKind op;
    std::string_view name;
    int kernel;
};

constexpr std::array<OpInfo, kOperationCount> kOpTable = {{
    {OperationKind::MaxPool3, "max_pool_3x3", 3},
    {OperationKind::AvgPool3, "avg_pool_3x3", 3},
    {OperationKind::Identity, "identity", 0},
    {OperationKind::SepConv3, "sep_conv_3x3", 3},
    {OperationKind::SepConv5, "sep_conv_5x5", 5},
    {OperationKind::DilConv3, "dil_conv_3x3", 3},
    {OperationKind::DilConv5, "dil_conv_5x5", 5},
}};

std::uint64_t saturating_mul(std::uint64_t a, std::uint64_t b) {
    if (a != 0 && b > std::numeric_limits<std::uint64_t>::max() / a) {
        return std::numeric_limits<std::uint64_t>::max();
    }
    return a * b;
}

std::string node_label(int node, int blocks) {
    if (node < 2) {
        return "in" + std::to_string(node);
    }
    if (node == blocks + 2) {
        return "out";
    }
    return "c_" + std::to_string(node - 2);
}

} // namespace

int kernel_size(OperationKind op) { return kOpTable[ordinal(op)].kernel; }

std::string_view op_name(OperationKind op) { return kOpTable[ordinal(op)].name; }

OperationKind op_from_name(std::string_view name) {
    for (const auto& info : kOpTable) {
        if (info.name == name) {
            return info.op;
        }
    }
    throw InvalidGenotype("unknown operation name '" + std::string(name) + "'");
}

OperationKind op_from_ordinal(int k) {
    if (k < 0 || k >= kOperationCount) {
        throw InvalidGenotype("operation ordinal " + std::to_string(k) + " out of range");
    }
    return static_cast<OperationKind>(k);
}

std::string_view cell_type_name(CellType t) {
    return t == CellType::Normal ? "normal" : "reduction";
}

CellType cell_type_from_name(std::string_view name) {
    if (name == "normal") {
        return CellType::Normal;
    }
    if (name == "reduction") {
        return CellType::Reduction;
    }
    throw InvalidGenotype("unknown cell type '" + std::string(name) + "'");
}

std::size_t SearchSpaceScheme::position(CellType cell, int block, GeneSlot slot) const {
    return (cell == CellType::Normal ? 0 : genes_per_cell()) + 4 * static_cast<std::size_t>(block) +
           static_cast<std::size_t>(slot);
}

GeneInfo SearchSpaceScheme::gene(std::size_t position) const {
    const auto per_cell = genes_per_cell();
    GeneInfo info{};
    info.cell = position < per_cell ? CellType::Normal : CellType::Reduction;
    const auto within = position % per_cell;
    info.block = static_cast<int>(within / 4);
    info.slot = static_cast<GeneSlot>(within % 4);
    if (info.slot == GeneSlot::Pre1 || info.slot == GeneSlot::Pre2) {
        info.interval = {0.0, static_cast<double>(info.block + 2)};
    } else {
        info.interval = {0.0, static_cast<double>(kOperationCount)};
    }
    return info;
}

void SearchSpaceScheme::check() const {
    if (blocks_per_cell < 1) {
        throw ConfigError("blocks_per_cell must be at least 1, got " + std::to_string(blocks_per_cell));
    }
}

std::vector<int> CellDag::output_sources() const {
    std::vector<int> out;
    for (int b = 0; b < blocks; ++b) {
        out.push_back(b + 2);
    }
    return out;
}

int CellDag::in_degree(int node) const {
    if (node == output_node()) {
        return blocks;
    }
    return static_cast<int>(std::count_if(edges.begin(), edges.end(),
                                          [node](const DagEdge& e) { return e.target == node; }));
}

std::vector<int> CellDag::topological_order() const {
    const int n = node_count();
    std::vector<std::vector<int>> succ(n);
    std::vector<int> indeg(n, 0);
    for (const auto& e : edges) {
        succ[e.source].push_back(e.target);
        ++indeg[e.target];
    }
    for (int s : output_sources()) {
        succ[s].push_back(output_node());
        ++indeg[output_node()];
    }
    std::vector<int> order;
    std::vector<int> ready;
    for (int v = 0; v < n; ++v) {
        if (indeg[v] == 0) {
            ready.push_back(v);
        }
    }
    while (!ready.empty()) {
        auto it = std::min_element(ready.begin(), ready.end());
        const int v = *it;
        ready.erase(it);
        order.push_back(v);
        for (int w : succ[v]) {
            if (--indeg[w] == 0) {
                ready.push_back(w);
            }
        }
    }
    if (static_cast<int>(order.size()) != n) {
        throw InvalidGenotype("cell graph contains a cycle");
    }
    return order;
}

std::vector<GeneViolation> validate(const ArchVector& vec, const SearchSpaceScheme& scheme) {
    if (vec.size() != scheme.length()) {
        throw LengthMismatch("architecture vector has " + std::to_string(vec.size()) +
                             " genes, scheme expects " + std::to_string(scheme.length()));
    }
    std::vector<GeneViolation> report;
    for (std::size_t i = 0; i < vec.size(); ++i) {
        const auto iv = scheme.interval(i);
        if (!iv.contains(vec[i])) {
            report.push_back({i, vec[i], iv});
        }
    }
    return report;
}

void require_valid(const ArchVector& vec, const SearchSpaceScheme& scheme) {
    const auto report = validate(vec, scheme);
    if (!report.empty()) {
        const auto& v = report.front();
        throw InvalidGene(v.position, v.value, v.interval.lo, v.interval.hi);
    }
}

Genotype decode(const ArchVector& vec, const SearchSpaceScheme& scheme) {
    require_valid(vec, scheme);
    Genotype g;
    for (CellType t : {CellType::Normal, CellType::Reduction}) {
        auto& cell = g.cell(t);
        cell.cell_type = t;
        cell.blocks.resize(static_cast<std::size_t>(scheme.blocks_per_cell));
        for (int b = 0; b < scheme.blocks_per_cell; ++b) {
            auto gene = [&](GeneSlot s) {
                return static_cast<int>(std::floor(vec[scheme.position(t, b, s)]));
            };
            auto& block = cell.blocks[static_cast<std::size_t>(b)];
            block.pre1 = gene(GeneSlot::Pre1);
            block.op1 = op_from_ordinal(gene(GeneSlot::Op1));
            block.pre2 = gene(GeneSlot::Pre2);
            block.op2 = op_from_ordinal(gene(GeneSlot::Op2));
        }
    }
    return g;
}

void require_valid(const CellGenotype& cell, int blocks_per_cell) {
    if (static_cast<int>(cell.blocks.size()) != blocks_per_cell) {
        throw InvalidGenotype(std::string(cell_type_name(cell.cell_type)) + " cell has " +
                              std::to_string(cell.blocks.size()) + " blocks, expected " +
                              std::to_string(blocks_per_cell));
    }
    for (int b = 0; b < blocks_per_cell; ++b) {
        const auto& block = cell.blocks[static_cast<std::size_t>(b)];
        const int node = b + 2;
        for (int pre : {block.pre1, block.pre2}) {
            if (pre < 0 || pre >= node) {
                throw InvalidGenotype(std::string(cell_type_name(cell.cell_type)) + " block " +
                                      std::to_string(b) + ": predecessor " + std::to_string(pre) +
                                      " must lie in [0, " + std::to_string(node) + ")");
            }
        }
        for (auto op : {block.op1, block.op2}) {
            if (ordinal(op) < 0 || ordinal(op) >= kOperationCount) {
                throw InvalidGenotype("operation ordinal out of range");
            }
        }
    }
}

void require_valid(const Genotype& g, const SearchSpaceScheme& scheme) {
    if (g.normal.cell_type != CellType::Normal || g.reduction.cell_type != CellType::Reduction) {
        throw InvalidGenotype("genotype cells carry the wrong cell types");
    }
    require_valid(g.normal, scheme.blocks_per_cell);
    require_valid(g.reduction, scheme.blocks_per_cell);
}

ArchVector encode(const Genotype& g, const SearchSpaceScheme& scheme) {
    require_valid(g, scheme);
    ArchVector vec{std::vector<double>(scheme.length())};
    for (CellType t : {CellType::Normal, CellType::Reduction}) {
        const auto& cell = g.cell(t);
        for (int b = 0; b < scheme.blocks_per_cell; ++b) {
            const auto& block = cell.blocks[static_cast<std::size_t>(b)];
            vec[scheme.position(t, b, GeneSlot::Pre1)] = block.pre1 + 0.5;
            vec[scheme.position(t, b, GeneSlot::Op1)] = ordinal(block.op1) + 0.5;
            vec[scheme.position(t, b, GeneSlot::Pre2)] = block.pre2 + 0.5;
            vec[scheme.position(t, b, GeneSlot::Op2)] = ordinal(block.op2) + 0.5;
        }
    }
    return vec;
}

ArchVector random_arch(Rng& rng, const SearchSpaceScheme& scheme) {
    ArchVector vec{std::vector<double>(scheme.length())};
    for (std::size_t i = 0; i < vec.size(); ++i) {
        const auto iv = scheme.interval(i);
        vec[i] = rng.uniform(iv.lo, iv.hi);
    }
    return vec;
}

CellGenotype random_cell(Rng& rng, CellType type, int blocks_per_cell) {
    CellGenotype cell{type, {}};
    for (int b = 0; b < blocks_per_cell; ++b) {
        const auto nodes = static_cast<std::uint64_t>(b + 2);
        Block block;
        block.pre1 = static_cast<int>(rng.below(nodes));
        block.op1 = op_from_ordinal(static_cast<int>(rng.below(kOperationCount)));
        block.pre2 = static_cast<int>(rng.below(nodes));
        block.op2 = op_from_ordinal(static_cast<int>(rng.below(kOperationCount)));
        cell.blocks.push_back(block);
    }
    return cell;
}

Genotype random_genotype(Rng& rng, const SearchSpaceScheme& scheme) {
    Genotype g;
    g.normal = random_cell(rng, CellType::Normal, scheme.blocks_per_cell);
    g.reduction = random_cell(rng, CellType::Reduction, scheme.blocks_per_cell);
    return g;
}

CellDag to_dag(const CellGenotype& cell) {
    CellDag dag;
    dag.cell_type = cell.cell_type;
    dag.blocks = static_cast<int>(cell.blocks.size());
    for (std::size_t b = 0; b < cell.blocks.size(); ++b) {
        const int node = static_cast<int>(b) + 2;
        const auto& block = cell.blocks[b];
        dag.edges.push_back({block.pre1, node, block.op1});
        dag.edges.push_back({block.pre2, node, block.op2});
    }
    return dag;
}

std::string to_dot(const CellDag& dag) {
    std::ostringstream os;
    os << "digraph " << cell_type_name(dag.cell_type) << " {\n";
    os << "  rankdir=LR;\n";
    os << "  \"in0\" [shape=box];\n";
    os << "  \"in1\" [shape=box];\n";
    for (int b = 0; b < dag.blocks; ++b) {
        os << "  \"" << node_label(b + 2, dag.blocks) << "\" [shape=ellipse];\n";
    }
    os << "  \"out\" [shape=box];\n";
    for (const auto& e : dag.edges) {
        os << "  \"" << node_label(e.source, dag.blocks) << "\" -> \""
           << node_label(e.target, dag.blocks) << "\" [label=\"" << op_name(e.op) << "\"];\n";
    }
    for (int s : dag.output_sources()) {
        os << "  \"" << node_label(s, dag.blocks) << "\" -> \"out\";\n";
    }
    os << "}\n";
    return os.str();
}

nlohmann::json to_json(const CellGenotype& cell) {
    auto arr = nlohmann::json::array();
    for (const auto& b : cell.blocks) {
        arr.push_back({b.pre1, op_name(b.op1), b.pre2, op_name(b.op2)});
    }
    return arr;
}

nlohmann::json to_json(const Genotype& g) {
    return {
        {"blocks_per_cell", g.normal.blocks.size()},
        {"normal", to_json(g.normal)},
        {"reduction", to_json(g.reduction)},
    };
}

CellGenotype cell_from_json(const nlohmann::json& j, CellType type) {
    if (!j.is_array()) {
        throw InvalidGenotype("cell must be a JSON array of blocks");
    }
    CellGenotype cell{type, {}};
    for (const auto& jb : j) {
        if (!jb.is_array() || jb.size() != 4 || !jb[0].is_number_integer() || !jb[1].is_string() ||
            !jb[2].is_number_integer() || !jb[3].is_string()) {
            throw InvalidGenotype("block must be [pre1, op1_name, pre2, op2_name]: " + jb.dump());
        }
        cell.blocks.push_back({jb[0].get<int>(), op_from_name(jb[1].get<std::string>()),
                               jb[2].get<int>(), op_from_name(jb[3].get<std::string>())});
    }
    return cell;
}

Genotype genotype_from_json(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("blocks_per_cell") || !j.contains("normal") ||
        !j.contains("reduction")) {
        throw InvalidGenotype("genotype JSON needs blocks_per_cell, normal and reduction");
    }
    Genotype g;
    g.normal = cell_from_json(j.at("normal"), CellType::Normal);
    g.reduction = cell_from_json(j.at("reduction"), CellType::Reduction);
    const SearchSpaceScheme scheme{j.at("blocks_per_cell").get<int>()};
    scheme.check();
    require_valid(g, scheme);
    return g;
}

std::string canonical_string(const Genotype& g) { return to_json(g).dump(); }

std::string compact_string(const CellGenotype& cell) {
    std::string out;
    for (std::size_t b = 0; b < cell.blocks.size(); ++b) {
        const auto& blk = cell.blocks[b];
        if (b > 0) {
            out += " | ";
        }
        out += std::to_string(blk.pre1) + ":" + std::string(op_name(blk.op1)) + " " +
               std::to_string(blk.pre2) + ":" + std::string(op_name(blk.op2));
    }
    return out;
}

std::uint64_t cell_space_size(const SearchSpaceScheme& scheme) {
    std::uint64_t count = 1;
    for (int b = 0; b < scheme.blocks_per_cell; ++b) {
        const auto choices = static_cast<std::uint64_t>(b + 2) * kOperationCount;
        count = saturating_mul(count, saturating_mul(choices, choices));
    }
    return count;
}

std::uint64_t genotype_space_size(const SearchSpaceScheme& scheme) {
    const auto cells = cell_space_size(scheme);
    return saturating_mul(cells, cells);
}

void for_each_cell(const SearchSpaceScheme& scheme, CellType type,
                   const std::function<void(const CellGenotype&)>& visit, std::uint64_t cap) {
    const auto count = cell_space_size(scheme);
    if (count > cap) {
        throw SpaceTooLarge("cell space has " + std::to_string(count) + " members, cap is " +
                            std::to_string(cap));
    }
    const int genes = 4 * scheme.blocks_per_cell;
    std::vector<int> digits(static_cast<std::size_t>(genes), 0);
    auto radix = [&](int i) { return (i % 2 == 0) ? i / 4 + 2 : kOperationCount; };
    CellGenotype cell{type, std::vector<Block>(static_cast<std::size_t>(scheme.blocks_per_cell))};
    while (true) {
        for (int b = 0; b < scheme.blocks_per_cell; ++b) {
            auto& blk = cell.blocks[static_cast<std::size_t>(b)];
            blk.pre1 = digits[4 * b];
            blk.op1 = static_cast<OperationKind>(digits[4 * b + 1]);
            blk.pre2 = digits[4 * b + 2];
            blk.op2 = static_cast<OperationKind>(digits[4 * b + 3]);
        }
        visit(cell);
        int i = genes - 1;
        while (i >= 0 && ++digits[i] == radix(i)) {
            digits[i] = 0;
            --i;
        }
        if (i < 0) {
            break;
        }
    }
}

void for_each_genotype(const SearchSpaceScheme& scheme,
                       const std::function<void(const Genotype&)>& visit, std::uint64_t cap) {
    const auto count = genotype_space_size(scheme);
    if (count > cap) {
        throw SpaceTooLarge("genotype space has " +
                            (count == std::numeric_limits<std::uint64_t>::max()
                                 ? std::string("more than 2^64")
                                 : std::to_string(count)) +
                            " members, cap is " + std::to_string(cap));
    }
    Genotype g;
    for_each_cell(scheme, CellType::Normal, [&](const CellGenotype& normal) {
        g.normal = normal;
        for_each_cell(scheme, CellType::Reduction, [&](const CellGenotype& reduction) {
            g.reduction = reduction;
            visit(g);
        }, cap);
    }, cap);
}

} // namespace relnas
