#include "relnas/errors.hpp"
#include "relnas/evaluators.hpp"
#include "relnas/slow_fast.hpp"

#include <doctest.h>

#include <cmath>
#include <map>
#include <set>

using namespace relnas;

namespace {

SearchSpaceScheme scheme_with(int blocks) {
    SearchSpaceScheme s;
    s.blocks_per_cell = blocks;
    return s;
}

Individual make_individual(int id, std::vector<double> alpha, std::vector<double> delta = {}) {
    Individual ind;
    ind.id = id;
    if (delta.empty()) {
        delta.assign(alpha.size(), 0.0);
    }
    ind.alpha.values = std::move(alpha);
    ind.delta_prev = std::move(delta);
    return ind;
}

Population population_of(int n) {
    Population p;
    for (int i = 0; i < n; ++i) {
        p.individuals.push_back(make_individual(i, {0.5}));
    }
    return p;
}

class ThrowingEvaluator final : public Evaluator {
public:
    std::string_view name() const override { return "throwing"; }
    EstimationResult estimate(const EstimationRequest& req) const override {
        if (req.genotype.normal.blocks[0].op1 == OperationKind::MaxPool3) {
            throw std::runtime_error("boom");
        }
        return {0.5, req.inherited};
    }
};

} // namespace

TEST_SUITE("slow_fast") {

TEST_CASE("pairing covers every index exactly once") {
    Rng rng(1);
    const auto plan2 = pair(population_of(2), rng);
    REQUIRE(plan2.pairs.size() == 1);
    CHECK(std::set<std::size_t>{plan2.pairs[0].first, plan2.pairs[0].second} == std::set<std::size_t>{0, 1});

    for (int trial = 0; trial < 100; ++trial) {
        const auto plan = pair(population_of(20), rng);
        REQUIRE(plan.pairs.size() == 10);
        std::set<std::size_t> seen;
        for (auto [a, b] : plan.pairs) {
            seen.insert(a);
            seen.insert(b);
        }
        REQUIRE(seen.size() == 20);
    }
    Rng x(4);
    Rng y(4);
    const auto p1 = pair(population_of(4), x);
    const auto p2 = pair(population_of(4), y);
    CHECK(p1.pairs == p2.pairs);
    CHECK_THROWS_AS(pair(population_of(3), rng), OddPopulation);
}

TEST_CASE("pairing is uniform over partners") {
    Rng rng(19);
    const int plans = 10000;
    std::map<std::pair<std::size_t, std::size_t>, int> counts;
    const auto pop = population_of(20);
    for (int t = 0; t < plans; ++t) {
        for (auto [a, b] : pair(pop, rng).pairs) {
            counts[{std::min(a, b), std::max(a, b)}]++;
        }
    }
    CHECK(counts.size() == 190);
    const double p = 1.0 / 19.0;
    const double sigma = std::sqrt(plans * p * (1 - p));
    for (const auto& [key, c] : counts) {
        CHECK(std::abs(c - plans * p) <= 3.0 * sigma);
    }
}

TEST_CASE("classify picks the lower loss and breaks ties by id") {
    auto r = classify(0.5, 0.7, 0, 1);
    CHECK(r.fast == 0);
    CHECK(r.slow == 1);
    r = classify(0.7, 0.5, 0, 1);
    CHECK(r.fast == 1);
    r = classify(0.5, 0.5, 3, 7);
    CHECK(r.fast == 0);
    r = classify(0.5, 0.5, 7, 3);
    CHECK(r.fast == 1);
    CHECK_THROWS_AS(classify(std::nan(""), 0.5, 0, 1), NonFiniteLoss);
    CHECK_THROWS_AS(classify(0.5, INFINITY, 0, 1), NonFiniteLoss);
}

TEST_CASE("pseudo-gradient arithmetic") {
    const auto slow = make_individual(0, {2.0});
    const auto fast = make_individual(1, {4.0});
    CHECK(pseudo_gradient(slow, fast, LambdaDraw{{0.5}, {0.9}}) == std::vector<double>{1.0});

    const auto s2 = make_individual(0, {1.0, 2.0}, {0.6, 0.6});
    const auto f2 = make_individual(1, {1.0, 2.0});
    const auto d = pseudo_gradient(s2, f2, LambdaDraw{{0.3}, {0.5}});
    CHECK(d[0] == doctest::Approx(0.3));
    CHECK(d[1] == doctest::Approx(0.3));

    const auto s3 = make_individual(0, {1.25, 0.5, 6.0}, {0.1, 0.2, 0.3});
    const auto f3 = make_individual(1, {3.75, 1.5, 0.25});
    const auto exact = pseudo_gradient(s3, f3, LambdaDraw{{1.0}, {0.0}});
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(exact[i] == f3.alpha[i] - s3.alpha[i]);
    }
    CHECK_THROWS_AS(pseudo_gradient(make_individual(0, {1.0, 2.0}), fast, LambdaDraw{{0.5}, {0.5}}),
                    LengthMismatch);
}

TEST_CASE("lambda draws: scalar by default, per coordinate on request, pinning keeps the stream") {
    Rng a(5);
    const auto scalar = draw_lambdas(a, {}, 32);
    CHECK(scalar.lambda1.size() == 1);
    CHECK(scalar.lambda2.size() == 1);
    CHECK(scalar.lambda1[0] >= 0.0);
    CHECK(scalar.lambda1[0] < 1.0);

    LambdaSampling per;
    per.per_coordinate = true;
    Rng b(5);
    CHECK(draw_lambdas(b, per, 32).lambda1.size() == 32);

    LambdaSampling pinned;
    pinned.fixed_lambda1 = 1.0;
    Rng c(5);
    const auto p = draw_lambdas(c, pinned, 32);
    CHECK(p.lambda1[0] == 1.0);
    CHECK(p.lambda2[0] == scalar.lambda2[0]);
}

TEST_CASE("update clamps into the half-open interval and keeps the raw delta") {
    const auto s = scheme_with(1);
    auto slow = make_individual(0, {0.5, 6.5, 1.5, 0.5, 0.5, 0.5, 0.5, 0.5});
    std::vector<double> delta(8, 0.0);
    delta[1] = 2.0;
    delta[0] = -3.0;
    const auto up = update_slow(slow, delta, s, 1e-6);
    CHECK(up.alpha[1] == 7.0 - 1e-6);
    CHECK(up.alpha[0] == 0.0);
    CHECK(up.delta_prev == delta);
    CHECK(validate(up.alpha, s).empty());

    const std::vector<double> zero(8, 0.0);
    slow.delta_prev.assign(8, 0.7);
    const auto same = update_slow(slow, zero, s);
    CHECK(same.alpha == slow.alpha);
    CHECK(same.delta_prev == zero);
}

TEST_CASE("one-step absorption and zero-delta fixed point") {
    const auto s = scheme_with(4);
    Rng rng(100);
    for (int i = 0; i < 100; ++i) {
        const auto slow = make_individual(0, random_arch(rng, s).values);
        const auto fast = make_individual(1, random_arch(rng, s).values);
        const auto up = update_slow(slow, fast, LambdaDraw{{1.0}, {0.0}}, s);
        REQUIRE(up.alpha == fast.alpha);
        REQUIRE(up.delta_prev == pseudo_gradient(slow, fast, LambdaDraw{{1.0}, {0.0}}));

        const auto twin = make_individual(2, slow.alpha.values);
        const auto l = draw_lambdas(rng, {}, s.length());
        const auto dz = pseudo_gradient(slow, twin, l);
        REQUIRE(update_slow(slow, dz, s).alpha == slow.alpha);
        REQUIRE(update_slow(slow, twin, l, s).alpha == slow.alpha);
    }
}

TEST_CASE("config validation") {
    const auto s = scheme_with(4);
    SlowFastConfig c;
    CHECK_NOTHROW(c.check(s));
    c.generations = 0;
    CHECK_THROWS_AS(c.check(s), ConfigError);
    c = {};
    c.population_size = 7;
    CHECK_THROWS_AS(c.check(s), ConfigError);
    c = {};
    c.clamp_epsilon = 0.0;
    CHECK_THROWS_AS(c.check(s), ConfigError);
    c = {};
    c.lambdas.fixed_lambda1 = 1.5;
    CHECK_THROWS_AS(c.check(s), ConfigError);
}

TEST_CASE("a two-member generation with lambda1 = 1, lambda2 = 0 merges the pair") {
    const auto s = scheme_with(2);
    SlowFastConfig cfg;
    cfg.population_size = 2;
    cfg.lambdas.fixed_lambda1 = 1.0;
    cfg.lambdas.fixed_lambda2 = 0.0;
    Rng target_rng(3);
    const DistanceEvaluator ev(random_genotype(target_rng, s));
    auto state = start_search(cfg, s, ev, 11);
    advance(state, ev, s, cfg);
    CHECK(state.population.individuals[0].alpha == state.population.individuals[1].alpha);
}

TEST_CASE("generation invariants on the distance surrogate") {
    const auto s = scheme_with(4);
    SlowFastConfig cfg;
    Rng target_rng(8);
    const DistanceEvaluator ev(random_genotype(target_rng, s));
    auto state = start_search(cfg, s, ev, 99);
    for (const auto& ind : state.population.individuals) {
        CHECK(ind.delta_prev == std::vector<double>(s.length(), 0.0));
    }
    for (int g = 1; g <= 30; ++g) {
        const auto before = state.population;
        const auto& stats = advance(state, ev, s, cfg);
        REQUIRE(stats.generation == g);
        REQUIRE(state.population.generation == g);
        REQUIRE(state.population.size() == 20);
        REQUIRE(stats.losses.size() == 20);
        int fast_count = 0;
        std::map<int, int> pair_sizes;
        for (std::size_t i = 0; i < 20; ++i) {
            const auto& now = state.population.individuals[i];
            REQUIRE(now.id == static_cast<int>(i));
            REQUIRE(validate(now.alpha, s).empty());
            REQUIRE(now.last_loss == stats.losses[i]);
            pair_sizes[stats.pair_index[i]]++;
            // the logged loss belongs to the vector that was evaluated
            REQUIRE(stats.losses[i] == surrogate_distance(decode(before.individuals[i].alpha, s), ev.target()));
            if (stats.is_fast[i]) {
                ++fast_count;
                REQUIRE(now.alpha == before.individuals[i].alpha);
                REQUIRE(now.delta_prev == before.individuals[i].delta_prev);
            }
        }
        REQUIRE(fast_count == 10);
        REQUIRE(pair_sizes.size() == 10);
        for (const auto& [p, n] : pair_sizes) {
            REQUIRE(n == 2);
        }
        REQUIRE(stats.spread == stats.max - stats.min);
        REQUIRE(stats.spread >= 0.0);
        REQUIRE(state.best->loss <= stats.min);
    }
}

TEST_CASE("runs are deterministic") {
    const auto s = scheme_with(3);
    SlowFastConfig cfg;
    cfg.generations = 20;
    const OpCostEvaluator ev;
    const auto a = run(cfg, s, ev, 5);
    const auto b = run(cfg, s, ev, 5);
    CHECK(a.history == b.history);
    CHECK(a.final_population == b.final_population);
    CHECK(a.best_genotype == b.best_genotype);
    CHECK(a.history.size() == 20);
    const auto c = run(cfg, s, ev, 6);
    CHECK_FALSE(c.history == a.history);
}

TEST_CASE("frozen reduction genes never move") {
    const auto s = scheme_with(2);
    SlowFastConfig cfg;
    cfg.generations = 15;
    cfg.frozen_reduction = CellGenotype{CellType::Reduction,
                                        {{1, OperationKind::AvgPool3, 0, OperationKind::SepConv5},
                                         {2, OperationKind::Identity, 1, OperationKind::DilConv3}}};
    const OpCostEvaluator ev(true);
    const auto r = run(cfg, s, ev, 3);
    for (const auto& ind : r.final_population.individuals) {
        CHECK(decode(ind.alpha, s).reduction == *cfg.frozen_reduction);
    }
    CHECK(r.best_genotype.reduction == *cfg.frozen_reduction);
}

TEST_CASE("evaluator failures name the individual") {
    const auto s = scheme_with(1);
    SlowFastConfig cfg;
    cfg.population_size = 20;
    const ThrowingEvaluator ev;
    auto state = start_search(cfg, s, ev, 1);
    try {
        advance(state, ev, s, cfg);
        FAIL("expected EvaluationFailed");
    } catch (const EvaluationFailed& e) {
        const auto& ind = state.population.individuals[static_cast<std::size_t>(e.individual_id)];
        CHECK(decode(ind.alpha, s).normal.blocks[0].op1 == OperationKind::MaxPool3);
        CHECK(std::string(e.what()).find("boom") != std::string::npos);
    }
}

}
