#include "relnas/slow_fast.hpp"

#include "relnas/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace relnas {

void SlowFastConfig::check(const SearchSpaceScheme& scheme) const {
    if (population_size < 2 || population_size % 2 != 0) {
        throw ConfigError("population size must be even and at least 2, got " +
                          std::to_string(population_size));
    }
    if (generations < 1) {
        throw ConfigError("generations must be at least 1, got " + std::to_string(generations));
    }
    if (!(clamp_epsilon > 0.0 && clamp_epsilon < 1.0)) {
        throw ConfigError("clamp epsilon must lie in (0, 1)");
    }
    for (const auto& fixed : {lambdas.fixed_lambda1, lambdas.fixed_lambda2}) {
        if (fixed && !(*fixed >= 0.0 && *fixed <= 1.0)) {
            throw ConfigError("fixed lambda values must lie in [0, 1]");
        }
    }
    if (frozen_reduction) {
        if (frozen_reduction->cell_type != CellType::Reduction) {
            throw ConfigError("frozen reduction cell must have the reduction cell type");
        }
        require_valid(*frozen_reduction, scheme.blocks_per_cell);
    }
}

void GenerationStats::summarize() {
    if (losses.empty()) {
        min = mean = max = spread = 0.0;
        return;
    }
    const auto [lo, hi] = std::minmax_element(losses.begin(), losses.end());
    min = *lo;
    max = *hi;
    mean = std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(losses.size());
    spread = max - min;
}

PairingPlan pair(const Population& pop, Rng& rng) {
    if (pop.size() % 2 != 0) {
        throw OddPopulation("population of " + std::to_string(pop.size()) + " cannot be paired");
    }
    std::vector<std::size_t> order(pop.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order);
    PairingPlan plan;
    for (std::size_t i = 0; i + 1 < order.size(); i += 2) {
        plan.pairs.emplace_back(order[i], order[i + 1]);
    }
    return plan;
}

Roles classify(double loss_a, double loss_b, int id_a, int id_b) {
    if (!std::isfinite(loss_a) || !std::isfinite(loss_b)) {
        throw NonFiniteLoss("cannot rank a pair with a non-finite loss");
    }
    bool a_fast;
    if (loss_a != loss_b) {
        a_fast = loss_a < loss_b;
    } else {
        a_fast = id_a < id_b;
    }
    return a_fast ? Roles{0, 1} : Roles{1, 0};
}

LambdaDraw draw_lambdas(Rng& rng, const LambdaSampling& sampling, std::size_t length) {
    const std::size_t n = sampling.per_coordinate ? length : 1;
    LambdaDraw draw;
    draw.lambda1.resize(n);
    draw.lambda2.resize(n);
    // Both values are always drawn so pinning one does not shift the stream.
    for (std::size_t i = 0; i < n; ++i) {
        const double l1 = rng.uniform();
        const double l2 = rng.uniform();
        draw.lambda1[i] = sampling.fixed_lambda1.value_or(l1);
        draw.lambda2[i] = sampling.fixed_lambda2.value_or(l2);
    }
    return draw;
}

std::vector<double> pseudo_gradient(const Individual& slow, const Individual& fast, const LambdaDraw& lambdas) {
    const auto n = slow.alpha.size();
    if (fast.alpha.size() != n || slow.delta_prev.size() != n) {
        throw LengthMismatch("pseudo-gradient operands have different lengths");
    }
    const bool scalar = lambdas.lambda1.size() == 1;
    if (!scalar && (lambdas.lambda1.size() != n || lambdas.lambda2.size() != n)) {
        throw LengthMismatch("per-coordinate lambdas do not match the vector length");
    }
    std::vector<double> delta(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double l1 = scalar ? lambdas.lambda1[0] : lambdas.lambda1[i];
        const double l2 = scalar ? lambdas.lambda2[0] : lambdas.lambda2[i];
        delta[i] = l1 * (fast.alpha[i] - slow.alpha[i]) + l2 * slow.delta_prev[i];
    }
    return delta;
}

std::vector<double> pseudo_gradient(const Individual& slow, const Individual& fast, Rng& rng,
                                    const LambdaSampling& sampling) {
    return pseudo_gradient(slow, fast, draw_lambdas(rng, sampling, slow.alpha.size()));
}

Individual update_slow(const Individual& slow, std::span<const double> delta, const SearchSpaceScheme& scheme,
                       double clamp_epsilon) {
    if (delta.size() != slow.alpha.size() || delta.size() != scheme.length()) {
        throw LengthMismatch("update delta has the wrong length");
    }
    Individual out = slow;
    for (std::size_t i = 0; i < delta.size(); ++i) {
        const auto iv = scheme.interval(i);
        out.alpha[i] = std::clamp(slow.alpha[i] + delta[i], iv.lo, iv.hi - clamp_epsilon);
    }
    out.delta_prev.assign(delta.begin(), delta.end());
    return out;
}

Individual update_slow(const Individual& slow, const Individual& fast, const LambdaDraw& lambdas,
                       const SearchSpaceScheme& scheme, double clamp_epsilon) {
    const auto delta = pseudo_gradient(slow, fast, lambdas);
    if (delta.size() != scheme.length()) {
        throw LengthMismatch("update operands have the wrong length");
    }
    const bool scalar = lambdas.lambda1.size() == 1;
    Individual out = slow;
    out.delta_prev = delta;
    for (std::size_t i = 0; i < delta.size(); ++i) {
        const double l1 = scalar ? lambdas.lambda1[0] : lambdas.lambda1[i];
        const double l2 = scalar ? lambdas.lambda2[0] : lambdas.lambda2[i];
        const double gap = fast.alpha[i] - slow.alpha[i];
        const double moved = fast.alpha[i] - (1.0 - l1) * gap + l2 * slow.delta_prev[i];
        const auto iv = scheme.interval(i);
        out.alpha[i] = std::clamp(moved, iv.lo, iv.hi - clamp_epsilon);
    }
    return out;
}

SearchStreams make_streams(std::uint64_t seed) {
    return {substream(seed, "pairing"), substream(seed, "lambdas")};
}

void pin_reduction(ArchVector& alpha, const CellGenotype& cell, const SearchSpaceScheme& scheme) {
    for (int b = 0; b < scheme.blocks_per_cell; ++b) {
        const auto& blk = cell.blocks[static_cast<std::size_t>(b)];
        alpha[scheme.position(CellType::Reduction, b, GeneSlot::Pre1)] = blk.pre1 + 0.5;
        alpha[scheme.position(CellType::Reduction, b, GeneSlot::Op1)] = ordinal(blk.op1) + 0.5;
        alpha[scheme.position(CellType::Reduction, b, GeneSlot::Pre2)] = blk.pre2 + 0.5;
        alpha[scheme.position(CellType::Reduction, b, GeneSlot::Op2)] = ordinal(blk.op2) + 0.5;
    }
}

Population initial_population(const SlowFastConfig& config, const SearchSpaceScheme& scheme, Rng& rng) {
    config.check(scheme);
    Population pop;
    for (int i = 0; i < config.population_size; ++i) {
        Individual ind;
        ind.id = i;
        ind.alpha = random_arch(rng, scheme);
        if (config.frozen_reduction) {
            pin_reduction(ind.alpha, *config.frozen_reduction, scheme);
        }
        ind.delta_prev.assign(scheme.length(), 0.0);
        pop.individuals.push_back(std::move(ind));
    }
    return pop;
}

GenerationOutcome step_generation(const Population& pop, const Evaluator& evaluator, const WeightSet& omega,
                                  const SearchSpaceScheme& scheme, const SlowFastConfig& config,
                                  SearchStreams& streams) {
    GenerationOutcome out{pop, omega, {}};
    const int generation = pop.generation + 1;
    const auto plan = pair(pop, streams.pairing);
    auto& stats = out.stats;
    stats.generation = generation;
    stats.losses.assign(pop.size(), 0.0);
    stats.is_fast.assign(pop.size(), false);
    stats.pair_index.assign(pop.size(), -1);

    for (std::size_t p = 0; p < plan.pairs.size(); ++p) {
        const std::size_t members[2] = {plan.pairs[p].first, plan.pairs[p].second};
        EstimationResult results[2];
        for (int j = 0; j < 2; ++j) {
            const auto& ind = pop.individuals[members[j]];
            try {
                EstimationRequest req;
                req.genotype = decode(ind.alpha, scheme);
                req.inherited = inherit(out.omega, req.genotype);
                req.epoch_index = generation - 1;
                results[j] = evaluator.estimate(req);
                if (!std::isfinite(results[j].validation_loss)) {
                    throw NonFiniteLoss("estimated loss is not finite");
                }
                bool same_keys = results[j].trained.size() == req.inherited.size();
                for (auto a = results[j].trained.begin(), b = req.inherited.begin();
                     same_keys && a != results[j].trained.end(); ++a, ++b) {
                    same_keys = a->first == b->first;
                }
                if (!same_keys) {
                    throw Error("trained weights do not have the inherited key set");
                }
            } catch (const std::exception& e) {
                throw EvaluationFailed(ind.id, e.what());
            }
        }
        const auto& a = pop.individuals[members[0]];
        const auto& b = pop.individuals[members[1]];
        const Roles roles = classify(results[0].validation_loss, results[1].validation_loss, a.id, b.id);
        const std::size_t fast = members[roles.fast];
        const std::size_t slow = members[roles.slow];

        out.omega = commit(std::move(out.omega), results[roles.fast].trained, results[roles.slow].trained);

        const auto lambdas = draw_lambdas(streams.lambdas, config.lambdas, scheme.length());
        // Pinned reduction genes agree across the pair with zero momentum, so they stay put.
        out.population.individuals[slow] =
            update_slow(pop.individuals[slow], pop.individuals[fast], lambdas, scheme, config.clamp_epsilon);

        for (int j = 0; j < 2; ++j) {
            out.population.individuals[members[j]].last_loss = results[j].validation_loss;
            stats.losses[members[j]] = results[j].validation_loss;
            stats.pair_index[members[j]] = static_cast<int>(p);
        }
        stats.is_fast[fast] = true;
    }
    out.population.generation = generation;
    stats.summarize();
    return out;
}

SearchState start_search(const SlowFastConfig& config, const SearchSpaceScheme& scheme,
                         const Evaluator& evaluator, std::uint64_t seed) {
    scheme.check();
    config.check(scheme);
    Rng pop_rng = substream(seed, "population");
    Rng omega_rng = substream(seed, "omega");
    SearchState state;
    state.population = initial_population(config, scheme, pop_rng);
    state.omega = init_weight_set(scheme, evaluator.shapes(scheme), omega_rng);
    state.streams = make_streams(seed);
    return state;
}

const GenerationStats& advance(SearchState& state, const Evaluator& evaluator, const SearchSpaceScheme& scheme,
                               const SlowFastConfig& config) {
    auto outcome = step_generation(state.population, evaluator, state.omega, scheme, config, state.streams);
    // Losses belong to the vectors as they were evaluated, i.e. before the slow update.
    for (std::size_t i = 0; i < state.population.size(); ++i) {
        const double loss = outcome.stats.losses[i];
        if (!state.best || loss < state.best->loss) {
            const auto& ind = state.population.individuals[i];
            state.best = BestRecord{loss, outcome.stats.generation, ind.id, ind.alpha, decode(ind.alpha, scheme)};
        }
    }
    state.population = std::move(outcome.population);
    state.omega = std::move(outcome.omega);
    state.history.push_back(std::move(outcome.stats));
    return state.history.back();
}

SearchResult run(const SlowFastConfig& config, const SearchSpaceScheme& scheme, const Evaluator& evaluator,
                 std::uint64_t seed) {
    SearchState state = start_search(config, scheme, evaluator, seed);
    for (int g = 0; g < config.generations; ++g) {
        advance(state, evaluator, scheme, config);
    }
    SearchResult result;
    result.best_genotype = state.best->genotype;
    result.best_loss = state.best->loss;
    result.history = std::move(state.history);
    result.final_population = std::move(state.population);
    result.final_omega = std::move(state.omega);
    return result;
}

} // namespace relnas
