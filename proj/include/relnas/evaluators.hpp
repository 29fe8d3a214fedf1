#pragma once

#include "relnas/dataset.hpp"
#include "relnas/micronet.hpp"
#include "relnas/search_space.hpp"
#include "relnas/weight_store.hpp"

#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>

namespace relnas {

struct EstimationRequest {
    Genotype genotype;
    InheritedWeights inherited;
    /// Position in the learning-rate schedule; the search passes generation - 1.
    int epoch_index = 0;
};

struct EstimationResult {
    double validation_loss = 0.0;
    InheritedWeights trained;
};

/// Low-fidelity performance estimation: one epoch of training from the
/// inherited weights, then the validation loss of the trained weights.
/// Implementations hold no mutable state, so concurrent calls are safe.
class Evaluator {
public:
    virtual ~Evaluator() = default;

    virtual std::string_view name() const = 0;

    /// Parameter shapes for every weight key. Surrogates use no parameters.
    virtual ShapeRegistry shapes(const SearchSpaceScheme& scheme) const;

    virtual EstimationResult estimate(const EstimationRequest& request) const = 0;
};

/// Fraction of the 8B gene slots where the genotype differs from the target.
double surrogate_distance(const Genotype& genotype, const Genotype& target);

double op_cost(OperationKind op);

/// Mean op cost over the cell's op slots plus 0.1 times the fraction of
/// predecessor slots that do not point at the immediately preceding node.
double surrogate_opcost(const CellGenotype& cell);

/// Same formula over both cells' slots (the mean of the two cell values).
double surrogate_opcost(const Genotype& genotype);

/// Inherited weights with empty entries for every edge key; lets surrogates be
/// called outside a search.
InheritedWeights empty_weights(const Genotype& genotype);

class DistanceEvaluator final : public Evaluator {
public:
    explicit DistanceEvaluator(Genotype target) : target_(std::move(target)) {}
    std::string_view name() const override { return "distance"; }
    EstimationResult estimate(const EstimationRequest& request) const override;
    const Genotype& target() const { return target_; }

private:
    Genotype target_;
};

class OpCostEvaluator final : public Evaluator {
public:
    /// With single_cell set only the normal cell is scored.
    explicit OpCostEvaluator(bool single_cell = false) : single_cell_(single_cell) {}
    std::string_view name() const override { return "opcost"; }
    EstimationResult estimate(const EstimationRequest& request) const override;

private:
    bool single_cell_;
};

/// Looks losses up in a JSON object keyed by canonical genotype JSON text.
/// Genotypes missing from the table are an error.
class TabularEvaluator final : public Evaluator {
public:
    explicit TabularEvaluator(std::unordered_map<std::string, double> table) : table_(std::move(table)) {}
    static TabularEvaluator from_file(const std::filesystem::path& path);
    std::string_view name() const override { return "tabular"; }
    EstimationResult estimate(const EstimationRequest& request) const override;

private:
    std::unordered_map<std::string, double> table_;
};

/// Trains the vector micro-network for one epoch on a synthetic dataset.
/// Network-local parameters start from init_seed on every call; batch order is
/// derived from shuffle_seed, the epoch index and the genotype, so identical
/// requests give bitwise identical results.
class MicroNetEvaluator final : public Evaluator {
public:
    MicroNetEvaluator(MacroConfig macro, TrainHyper hyper, std::shared_ptr<const DatasetSplit> data,
                      std::uint64_t init_seed, std::uint64_t shuffle_seed);
    std::string_view name() const override { return "micronet"; }
    ShapeRegistry shapes(const SearchSpaceScheme& scheme) const override;
    EstimationResult estimate(const EstimationRequest& request) const override;

    MicroNet build(const Genotype& genotype, InheritedWeights weights) const;
    const DatasetSplit& data() const { return *data_; }
    const TrainHyper& hyper() const { return hyper_; }
    const MacroConfig& macro() const { return macro_; }

private:
    MacroConfig macro_;
    TrainHyper hyper_;
    std::shared_ptr<const DatasetSplit> data_;
    std::uint64_t init_seed_;
    std::uint64_t shuffle_seed_;
};

} // namespace relnas
