#pragma once

#include "relnas/dataset.hpp"
#include "relnas/rng.hpp"
#include "relnas/search_space.hpp"
#include "relnas/weight_store.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace relnas {

/// Macro layout: s normal cells, a reduction cell, s normal, a reduction, s normal.
struct MacroConfig {
    int stacking = 2;
    int width = 16;

    int cell_count() const { return 3 * stacking + 2; }
    std::vector<CellType> layout() const;
    /// Reduction cells work on stride-2 subsampled features.
    int cell_width(CellType t) const { return t == CellType::Normal ? width : width / 2; }
    void check() const;
};

struct TrainHyper {
    double lr0 = 0.1;
    int t_max = 50;
    int batch_size = 64;
    double weight_decay = 3e-4;
    /// Global gradient-norm clip; 0 disables.
    double grad_clip = 5.0;

    /// Cosine annealing: 0.5 * lr0 * (1 + cos(pi * epoch / t_max)), zero from t_max on.
    double lr(int epoch) const;
    void check() const;
};

/// Parameter layout of one operation at a given feature width.
ParamShape operation_shape(OperationKind op, int width);

ShapeRegistry micronet_shapes(const SearchSpaceScheme& scheme, const MacroConfig& macro);

/// Parameters owned by the network itself (stem, per-cell projections, head).
std::size_t micronet_local_parameter_count(const SearchSpaceScheme& scheme, const MacroConfig& macro,
                                           int input_dim, int classes);

/// Vector-valued analog of a stacked-cell network. Each cell is the genotype's
/// DAG over feature vectors; every intermediate node sums its two edge outputs,
/// the intermediate nodes are concatenated and projected back to the macro width.
///
/// Parameters are held as a list of tensors: first one per inherited weight key
/// (in key order, parameter-free keys included as empty tensors), then the stem
/// weight and bias, each cell's projection weight and bias, and the head weight
/// and bias.
class MicroNet {
public:
    using Tensors = std::vector<std::vector<double>>;

    MicroNet(const Genotype& genotype, const MacroConfig& macro, InheritedWeights weights,
             int input_dim, int classes, std::uint64_t init_seed);

    Tensors& parameters() { return params_; }
    const Tensors& parameters() const { return params_; }
    std::size_t parameter_count() const;
    /// Number of leading tensors that came from inherited weights.
    std::size_t inherited_tensor_count() const { return inherited_keys_.size(); }
    Tensors zero_like() const;

    std::vector<double> logits(std::span<const double> x) const;
    std::vector<double> probabilities(std::span<const double> x) const;

    /// Mean cross-entropy over the given rows (all rows when empty).
    double mean_loss(const Samples& data, std::span<const std::size_t> rows = {}) const;

    /// Mean cross-entropy over rows and its gradient; grad is overwritten.
    double loss_and_gradient(const Samples& data, std::span<const std::size_t> rows, Tensors& grad) const;

    /// Plain SGD with decoupled-from-clip weight decay: the gradient is clipped
    /// first, then p -= lr * (g + weight_decay * p).
    void sgd_step(Tensors& grad, double lr, const TrainHyper& hyper);

    /// One shuffled pass over the training rows. Returns the mean training loss.
    /// Throws NonFiniteLoss if training diverges.
    double train_epoch(const Samples& train, const TrainHyper& hyper, int epoch_index, Rng& shuffle);

    /// Digest of every max-pool winner and ReLU on/off state over the rows. The loss
    /// is smooth in the parameters wherever this stays constant.
    std::uint64_t activation_pattern(const Samples& data, std::span<const std::size_t> rows) const;

    /// Current values of the inherited entries, same keys and shapes as given.
    InheritedWeights trained_weights() const;

private:
    struct EdgePlan {
        int source;
        OperationKind op;
        int tensor;
    };
    struct CellPlan {
        CellType type;
        int width;
        std::vector<EdgePlan> edges;
        int proj_w;
        int proj_b;
    };
    struct EdgeCache {
        std::vector<double> z1, h1, z2, y;
        std::vector<int> argmax;
    };
    struct CellCache {
        std::vector<std::vector<double>> nodes;
        std::vector<EdgeCache> edges;
        std::vector<double> concat;
    };
    struct Trace {
        std::vector<std::vector<double>> states;
        std::vector<CellCache> cells;
        std::vector<double> logits;
    };

    void forward(std::span<const double> x, Trace& trace) const;
    void backward(std::span<const double> x, const Trace& trace, int label, Tensors& grad) const;
    void edge_forward(const EdgePlan& e, int w, const std::vector<double>& x, EdgeCache& c) const;
    void edge_backward(const EdgePlan& e, int w, const std::vector<double>& x, const EdgeCache& c,
                       const std::vector<double>& gy, Tensors& grad, std::vector<double>& gx) const;
    void cell_forward(const CellPlan& plan, const std::vector<double>& in0,
                      const std::vector<double>& in1, CellCache& cache, std::vector<double>& out) const;
    void cell_backward(const CellPlan& plan, const CellCache& cache, const std::vector<double>& gout,
                       std::vector<double>& gin0, std::vector<double>& gin1, Tensors& grad) const;

    MacroConfig macro_;
    int input_dim_;
    int classes_;
    int blocks_;
    std::vector<WeightKey> inherited_keys_;
    std::vector<std::vector<std::size_t>> inherited_shapes_;
    std::vector<std::uint64_t> inherited_versions_;
    Tensors params_;
    std::vector<CellPlan> cells_;
    int stem_w_ = -1;
    int stem_b_ = -1;
    int head_w_ = -1;
    int head_b_ = -1;
};

} // namespace relnas
