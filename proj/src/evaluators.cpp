#include "relnas/evaluators.hpp"

#include "relnas/errors.hpp"

#include <cmath>
#include <fstream>

namespace relnas {

namespace {

void require_same_scheme(const Genotype& a, const Genotype& b) {
    if (a.normal.blocks.size() != b.normal.blocks.size() ||
        a.reduction.blocks.size() != b.reduction.blocks.size()) {
        throw SchemeMismatch("genotypes have different blocks per cell");
    }
}

double finite_or_throw(double loss, std::string_view who) {
    if (!std::isfinite(loss)) {
        throw NonFiniteLoss(std::string(who) + " produced a non-finite loss");
    }
    return loss;
}

} // namespace

ShapeRegistry Evaluator::shapes(const SearchSpaceScheme& scheme) const {
    ShapeRegistry reg;
    for (const auto& key : enumerate_keys(scheme)) {
        reg.emplace(key, ParamShape{});
    }
    return reg;
}

double surrogate_distance(const Genotype& genotype, const Genotype& target) {
    require_same_scheme(genotype, target);
    std::size_t differing = 0;
    std::size_t slots = 0;
    for (CellType t : {CellType::Normal, CellType::Reduction}) {
        const auto& a = genotype.cell(t).blocks;
        const auto& b = target.cell(t).blocks;
        for (std::size_t i = 0; i < a.size(); ++i) {
            differing += (a[i].pre1 != b[i].pre1) + (a[i].op1 != b[i].op1) + (a[i].pre2 != b[i].pre2) +
                         (a[i].op2 != b[i].op2);
            slots += 4;
        }
    }
    return slots == 0 ? 0.0 : static_cast<double>(differing) / static_cast<double>(slots);
}

double op_cost(OperationKind op) {
    switch (op) {
    case OperationKind::SepConv3: return 0.2;
    case OperationKind::SepConv5: return 0.3;
    case OperationKind::DilConv3: return 0.4;
    case OperationKind::DilConv5: return 0.5;
    case OperationKind::MaxPool3: return 0.8;
    case OperationKind::AvgPool3: return 0.8;
    case OperationKind::Identity: return 0.9;
    }
    return 1.0;
}

double surrogate_opcost(const CellGenotype& cell) {
    if (cell.blocks.empty()) {
        return 0.0;
    }
    double cost = 0.0;
    int off_chain = 0;
    for (std::size_t b = 0; b < cell.blocks.size(); ++b) {
        const auto& blk = cell.blocks[b];
        const int previous = static_cast<int>(b) + 1;
        cost += op_cost(blk.op1) + op_cost(blk.op2);
        off_chain += (blk.pre1 != previous) + (blk.pre2 != previous);
    }
    const double slots = 2.0 * static_cast<double>(cell.blocks.size());
    return cost / slots + 0.1 * off_chain / slots;
}

double surrogate_opcost(const Genotype& genotype) {
    return 0.5 * (surrogate_opcost(genotype.normal) + surrogate_opcost(genotype.reduction));
}

InheritedWeights empty_weights(const Genotype& genotype) {
    InheritedWeights w;
    for (const auto& key : genotype_keys(genotype)) {
        w.emplace(key, WeightEntry{});
    }
    return w;
}

EstimationResult DistanceEvaluator::estimate(const EstimationRequest& request) const {
    return {finite_or_throw(surrogate_distance(request.genotype, target_), name()), request.inherited};
}

EstimationResult OpCostEvaluator::estimate(const EstimationRequest& request) const {
    const double loss = single_cell_ ? surrogate_opcost(request.genotype.normal)
                                     : surrogate_opcost(request.genotype);
    return {finite_or_throw(loss, name()), request.inherited};
}

TabularEvaluator TabularEvaluator::from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open loss table " + path.string());
    }
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("loss table " + path.string() + " is not valid JSON: " + e.what());
    }
    if (!j.is_object()) {
        throw ConfigError("loss table " + path.string() + " must be a JSON object");
    }
    std::unordered_map<std::string, double> table;
    for (const auto& [key, value] : j.items()) {
        if (!value.is_number()) {
            throw ConfigError("loss table entry for " + key + " is not a number");
        }
        // Re-canonicalize so formatting differences in the file do not matter.
        const auto g = genotype_from_json(nlohmann::json::parse(key));
        table[canonical_string(g)] = value.get<double>();
    }
    return TabularEvaluator(std::move(table));
}

EstimationResult TabularEvaluator::estimate(const EstimationRequest& request) const {
    const auto key = canonical_string(request.genotype);
    auto it = table_.find(key);
    if (it == table_.end()) {
        throw UnknownKey("genotype missing from loss table: " + key);
    }
    return {finite_or_throw(it->second, name()), request.inherited};
}

MicroNetEvaluator::MicroNetEvaluator(MacroConfig macro, TrainHyper hyper,
                                     std::shared_ptr<const DatasetSplit> data, std::uint64_t init_seed,
                                     std::uint64_t shuffle_seed)
    : macro_(macro), hyper_(hyper), data_(std::move(data)), init_seed_(init_seed),
      shuffle_seed_(shuffle_seed) {
    macro_.check();
    hyper_.check();
    if (!data_) {
        throw ConfigError("micro-network evaluator needs a dataset");
    }
}

ShapeRegistry MicroNetEvaluator::shapes(const SearchSpaceScheme& scheme) const {
    return micronet_shapes(scheme, macro_);
}

MicroNet MicroNetEvaluator::build(const Genotype& genotype, InheritedWeights weights) const {
    return MicroNet(genotype, macro_, std::move(weights), data_->train.dim, data_->classes, init_seed_);
}

EstimationResult MicroNetEvaluator::estimate(const EstimationRequest& request) const {
    MicroNet net = build(request.genotype, request.inherited);
    Rng shuffle(mix64(shuffle_seed_ ^ fnv1a(canonical_string(request.genotype))) ^
                mix64(static_cast<std::uint64_t>(request.epoch_index)));
    net.train_epoch(data_->train, hyper_, request.epoch_index, shuffle);
    const double loss = finite_or_throw(net.mean_loss(data_->validation), name());
    return {loss, net.trained_weights()};
}

} // namespace relnas
