#pragma once

#include "relnas/evaluators.hpp"
#include "relnas/rng.hpp"
#include "relnas/search_space.hpp"
#include "relnas/weight_store.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

namespace relnas {

struct Individual {
    int id = 0;
    ArchVector alpha;
    /// Previous pseudo-gradient (momentum); zero until the first slow update.
    std::vector<double> delta_prev;
    std::optional<double> last_loss;

    friend bool operator==(const Individual&, const Individual&) = default;
};

struct Population {
    std::vector<Individual> individuals;
    /// Completed generations.
    int generation = 0;

    std::size_t size() const { return individuals.size(); }

    friend bool operator==(const Population&, const Population&) = default;
};

struct LambdaSampling {
    /// Draw a fresh lambda pair per coordinate instead of one scalar pair per slow-learner.
    bool per_coordinate = false;
    /// Test hooks: pin lambda1 / lambda2 instead of sampling U[0, 1].
    std::optional<double> fixed_lambda1;
    std::optional<double> fixed_lambda2;
};

struct SlowFastConfig {
    int population_size = 20;
    int generations = 50;
    double clamp_epsilon = 1e-6;
    LambdaSampling lambdas;
    /// When set, reduction-cell genes are pinned to this cell and never updated.
    std::optional<CellGenotype> frozen_reduction;

    void check(const SearchSpaceScheme& scheme) const;
};

struct PairingPlan {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
};

struct GenerationStats {
    int generation = 0;
    /// Indexed by population position (equal to individual id).
    std::vector<double> losses;
    std::vector<bool> is_fast;
    std::vector<int> pair_index;
    double min = 0.0;
    double mean = 0.0;
    double max = 0.0;
    double spread = 0.0;

    /// Fills min/mean/max/spread from losses.
    void summarize();

    friend bool operator==(const GenerationStats&, const GenerationStats&) = default;
};

/// Which member of a pair is fast (lower loss) and which is slow.
struct Roles {
    int fast;
    int slow;
};

struct LambdaDraw {
    /// Length 1 for scalar sampling, otherwise one entry per coordinate.
    std::vector<double> lambda1;
    std::vector<double> lambda2;
};

/// Shuffles 0..N-1 and pairs consecutive entries. Throws OddPopulation.
PairingPlan pair(const Population& pop, Rng& rng);

/// Member 0 or 1 with the lower loss is fast; an exact tie goes to the lower id.
/// Throws NonFiniteLoss.
Roles classify(double loss_a, double loss_b, int id_a, int id_b);

LambdaDraw draw_lambdas(Rng& rng, const LambdaSampling& sampling, std::size_t length);

/// lambda1 * (alpha_fast - alpha_slow) + lambda2 * delta_prev_slow.
/// Throws LengthMismatch.
std::vector<double> pseudo_gradient(const Individual& slow, const Individual& fast, const LambdaDraw& lambdas);
std::vector<double> pseudo_gradient(const Individual& slow, const Individual& fast, Rng& rng,
                                    const LambdaSampling& sampling = {});

/// alpha + delta clamped gene-wise into [lo, hi - epsilon]; delta_prev becomes
/// the unclamped delta.
Individual update_slow(const Individual& slow, std::span<const double> delta,
                       const SearchSpaceScheme& scheme, double clamp_epsilon = 1e-6);

/// The same update evaluated as alpha_fast - (1 - lambda1) * (alpha_fast - alpha_slow)
/// + lambda2 * delta_prev. In floating point this lands exactly on alpha_fast when
/// lambda1 = 1, lambda2 = 0 and leaves a gene exactly in place when both vectors and
/// delta_prev agree there. delta_prev becomes the pseudo-gradient.
Individual update_slow(const Individual& slow, const Individual& fast, const LambdaDraw& lambdas,
                       const SearchSpaceScheme& scheme, double clamp_epsilon = 1e-6);

/// Random streams consumed by the generation loop.
struct SearchStreams {
    Rng pairing;
    Rng lambdas;

    friend bool operator==(const SearchStreams&, const SearchStreams&) = default;
};

SearchStreams make_streams(std::uint64_t seed);

/// Overwrites the reduction-cell genes with the midpoint encoding of cell.
void pin_reduction(ArchVector& alpha, const CellGenotype& cell, const SearchSpaceScheme& scheme);

Population initial_population(const SlowFastConfig& config, const SearchSpaceScheme& scheme, Rng& rng);

struct GenerationOutcome {
    Population population;
    WeightSet omega;
    GenerationStats stats;
};

/// One generation: pairs are processed sequentially in plan order; both members
/// inherit from the weight set as committed by all earlier pairs, are estimated,
/// classified, the weight set is committed, and the slow-learner is updated.
GenerationOutcome step_generation(const Population& pop, const Evaluator& evaluator, const WeightSet& omega,
                                  const SearchSpaceScheme& scheme, const SlowFastConfig& config,
                                  SearchStreams& streams);

struct BestRecord {
    double loss = 0.0;
    int generation = 0;
    int individual_id = 0;
    ArchVector alpha;
    Genotype genotype;

    friend bool operator==(const BestRecord&, const BestRecord&) = default;
};

/// Everything needed to continue a search; checkpoints serialize this.
struct SearchState {
    Population population;
    WeightSet omega;
    SearchStreams streams;
    std::vector<GenerationStats> history;
    std::optional<BestRecord> best;
};

SearchState start_search(const SlowFastConfig& config, const SearchSpaceScheme& scheme,
                         const Evaluator& evaluator, std::uint64_t seed);

/// Runs one generation on the state and updates the all-time best.
const GenerationStats& advance(SearchState& state, const Evaluator& evaluator,
                               const SearchSpaceScheme& scheme, const SlowFastConfig& config);

struct SearchResult {
    Genotype best_genotype;
    double best_loss = 0.0;
    std::vector<GenerationStats> history;
    Population final_population;
    WeightSet final_omega;
};

SearchResult run(const SlowFastConfig& config, const SearchSpaceScheme& scheme, const Evaluator& evaluator,
                 std::uint64_t seed);

} // namespace relnas
