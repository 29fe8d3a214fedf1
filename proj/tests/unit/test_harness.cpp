#include "relnas/checkpoint.hpp"
#include "relnas/config.hpp"
#include "relnas/driver.hpp"
#include "relnas/errors.hpp"

#include "test_util.hpp"

#include <doctest.h>

#include <fstream>
#include <sstream>

using namespace relnas;
using testutil::TempDir;

namespace {

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

RunConfig small_distance_config(std::uint64_t seed, int generations = 12) {
    RunConfig cfg;
    cfg.seed = seed;
    cfg.search.generations = generations;
    cfg.checkpoint_every = 4;
    return cfg;
}

template <typename E>
std::string error_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const E& e) {
        return e.what();
    }
    return "<no error>";
}

} // namespace

TEST_SUITE("harness") {

TEST_CASE("config parsing with sections, comments and defaults") {
    const auto cfg = parse_config("# run\nseed = 7\n\n[search]\npopulation_size = 10 ; inline\n"
                                  "generations=30\nblocks_per_cell = 2\n[evaluator]\nkind = opcost\n"
                                  "single_cell = true\n[train]\nlr = 0.05\n[data]\nclasses = 3\n",
                                  "run.cfg");
    CHECK(cfg.seed == 7u);
    CHECK(cfg.search.population_size == 10);
    CHECK(cfg.search.generations == 30);
    CHECK(cfg.scheme.blocks_per_cell == 2);
    CHECK(cfg.evaluator.kind == "opcost");
    CHECK(cfg.evaluator.single_cell);
    CHECK(cfg.train.lr0 == 0.05);
    CHECK(cfg.data.classes == 3);
    CHECK(cfg.train.batch_size == 64);
    CHECK(cfg.train.weight_decay == 3e-4);

    RunConfig defaults;
    CHECK(defaults.search.population_size == 20);
    CHECK(defaults.search.generations == 50);
    CHECK(defaults.train.lr0 == 0.1);
    CHECK(defaults.checkpoint_every == 10);

    CHECK(parse_config("evaluator = micronet\n", "short.cfg").evaluator.kind == "micronet");
}

TEST_CASE("config errors carry the line number") {
    CHECK(error_of<ConfigError>([] { parse_config("seed = 1\n[search]\npopulation = 4\n", "a.cfg"); })
              .rfind("a.cfg:3:", 0) == 0);
    CHECK(error_of<ConfigError>([] { parse_config("seed = x\n", "b.cfg"); }).rfind("b.cfg:1:", 0) == 0);
    CHECK(error_of<ConfigError>([] { parse_config("\n\n[search\n", "c.cfg"); }).rfind("c.cfg:3:", 0) == 0);
    CHECK(error_of<ConfigError>([] { parse_config("[search]\ngenerations\n", "d.cfg"); }).rfind("d.cfg:2:", 0) ==
          0);
    CHECK_THROWS_AS(load_config("/nonexistent/run.cfg"), ConfigError);

    auto odd = parse_config("[search]\npopulation_size = 5\n");
    CHECK_THROWS_AS(odd.finalize(), ConfigError);
    auto kind = parse_config("[evaluator]\nkind = oracle\n");
    CHECK_THROWS_AS(kind.finalize(), ConfigError);
    RunConfig unseeded;
    CHECK_THROWS_AS(unseeded.require_seed(), ConfigError);
}

TEST_CASE("overrides and hashing") {
    RunConfig cfg = small_distance_config(3);
    apply_override(cfg, "search.population_size=8");
    apply_override(cfg, "output_dir=elsewhere");
    CHECK(cfg.search.population_size == 8);
    CHECK_THROWS_AS(apply_override(cfg, "nonsense"), ConfigError);
    CHECK_THROWS_AS(apply_override(cfg, "search.bogus=1"), ConfigError);

    RunConfig a = small_distance_config(3);
    RunConfig b = a;
    b.output_dir = "somewhere/else";
    b.checkpoint_every = 1;
    CHECK(a.hash() == b.hash());
    b.search.population_size = 22;
    CHECK(a.hash() != b.hash());
    RunConfig c = a;
    c.seed = 4;
    CHECK(a.hash() != c.hash());
}

TEST_CASE("search writes every artifact kind and identical runs give identical logs") {
    TempDir dir("search");
    const auto cfg = small_distance_config(7);
    const auto state = run_search(cfg, dir.path() / "a");
    run_search(cfg, dir.path() / "b");
    for (const char* name : {"log.csv", "best_genotype.json", "normal.dot", "reduction.dot", "summary.json",
                             "checkpoint_g0004.ckpt", "checkpoint_g0012.ckpt"}) {
        CHECK(std::filesystem::exists(dir.path() / "a" / name));
    }
    const auto log = slurp(dir.path() / "a" / "log.csv");
    CHECK(log == slurp(dir.path() / "b" / "log.csv"));
    CHECK(log.rfind("generation,individual_id,loss,is_fast,pair_index\n", 0) == 0);
    CHECK(std::count(log.begin(), log.end(), '\n') == 1 + 12 * 20);

    const auto summary = nlohmann::json::parse(slurp(dir.path() / "a" / "summary.json"));
    CHECK(summary.at("seed") == 7);
    CHECK(summary.at("population_size") == 20);
    CHECK(summary.at("generations") == 12);
    CHECK(summary.at("best_loss") == state.best->loss);
    CHECK(summary.at("log_schema_version") == kLogSchemaVersion);
    CHECK(summary.contains("wall_time_seconds"));

    const auto best = genotype_from_json(nlohmann::json::parse(slurp(dir.path() / "a" / "best_genotype.json")));
    CHECK(best == state.best->genotype);
    CHECK(slurp(dir.path() / "a" / "normal.dot").rfind("digraph normal", 0) == 0);
}

TEST_CASE("resume continues exactly where an uninterrupted run would") {
    TempDir dir("resume");
    const auto cfg = small_distance_config(11, 20);
    const auto control = run_search(cfg, dir.path() / "control");

    SearchRunOptions stop;
    stop.stop_after = 10;
    const auto partial = run_search(cfg, dir.path() / "split", stop);
    CHECK(partial.population.generation == 10);
    CHECK_FALSE(std::filesystem::exists(dir.path() / "split" / "summary.json"));
    const auto resumed =
        resume_search(cfg, dir.path() / "split" / "checkpoint_g0010.ckpt", dir.path() / "split");
    CHECK(slurp(dir.path() / "split" / "log.csv") == slurp(dir.path() / "control" / "log.csv"));
    CHECK(resumed.population == control.population);
    CHECK(resumed.omega.fingerprint() == control.omega.fingerprint());
    CHECK(resumed.best == control.best);
}

TEST_CASE("micronet checkpoints round trip the weight set") {
    TempDir dir("ckpt");
    RunConfig cfg;
    cfg.seed = 2;
    cfg.search.population_size = 2;
    cfg.search.generations = 2;
    cfg.scheme.blocks_per_cell = 1;
    cfg.evaluator.kind = "micronet";
    cfg.data.train_size = 64;
    cfg.data.validation_size = 32;
    SearchRunOptions stop;
    stop.stop_after = 1;
    const auto state = run_search(cfg, dir.path(), stop);
    RunConfig fin = cfg;
    fin.finalize();
    const auto back = load_checkpoint(dir.path() / "checkpoint_g0001.ckpt", fin);
    CHECK(back.omega.fingerprint() == state.omega.fingerprint());
    CHECK(back.population == state.population);
    CHECK(back.streams == state.streams);
    CHECK(back.history == state.history);
}

TEST_CASE("tampered or mismatched checkpoints are rejected") {
    TempDir dir("tamper");
    auto cfg = small_distance_config(5, 8);
    run_search(cfg, dir.path());
    cfg.finalize();
    const auto path = dir.path() / "checkpoint_g0004.ckpt";
    CHECK_NOTHROW(load_checkpoint(path, cfg));

    auto text = slurp(path);
    auto j = nlohmann::json::parse(text);
    j["population"][0]["alpha"][0] = 0.123;
    const auto tampered = dir.path() / "tampered.ckpt";
    std::ofstream(tampered) << j.dump();
    CHECK_THROWS_AS(load_checkpoint(tampered, cfg), CorruptCheckpoint);

    const auto truncated = dir.path() / "truncated.ckpt";
    std::ofstream(truncated) << text.substr(0, text.size() / 2);
    CHECK_THROWS_AS(load_checkpoint(truncated, cfg), CorruptCheckpoint);

    auto other = cfg;
    other.search.population_size = 10;
    CHECK_THROWS_AS(load_checkpoint(path, other), HashMismatch);
    CHECK_THROWS_AS(resume_search(other, path, dir.path() / "x"), HashMismatch);
}

TEST_CASE("enumeration of the two-block single-cell space") {
    RunConfig cfg;
    cfg.scheme.blocks_per_cell = 2;
    cfg.evaluator.kind = "opcost";
    cfg.evaluator.single_cell = true;
    const auto e = enumerate_space(cfg);
    REQUIRE(e.rows.size() == 86436);
    CHECK(e.rows.front().loss == doctest::Approx(0.2).epsilon(1e-12));
    const auto chain = default_frozen_reduction(2);
    CHECK(e.rows.front().genotype.normal.blocks == chain.blocks);
    for (std::size_t i = 1; i < e.rows.size(); ++i) {
        REQUIRE(e.rows[i - 1].loss <= e.rows[i].loss);
        REQUIRE(e.rows[i].genotype.reduction == chain);
    }
    double prev = -1.0;
    for (const auto& [p, v] : e.thresholds) {
        CHECK(v >= prev);
        prev = v;
    }
    CHECK(e.thresholds.at(100) == e.rows.back().loss);

    RunConfig full = cfg;
    full.evaluator.single_cell = false;
    CHECK_THROWS_AS(enumerate_space(full), SpaceTooLarge);
    RunConfig micro = cfg;
    micro.evaluator.kind = "micronet";
    CHECK_THROWS_AS(enumerate_space(micro), ConfigError);

    TempDir dir("enum");
    RunConfig one = cfg;
    one.scheme.blocks_per_cell = 1;
    const auto small = enumerate_space(one);
    write_enumeration(small, dir.path());
    const auto csv = slurp(dir.path() / "enumeration.csv");
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 197);
    CHECK(std::filesystem::exists(dir.path() / "enumeration_summary.json"));
}

TEST_CASE("percentile thresholds use the ceil rank") {
    const std::vector<double> v = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    CHECK(percentile_threshold(v, 1) == 1);
    CHECK(percentile_threshold(v, 10) == 1);
    CHECK(percentile_threshold(v, 11) == 2);
    CHECK(percentile_threshold(v, 50) == 5);
    CHECK(percentile_threshold(v, 100) == 10);
}

TEST_CASE("random search uses the full budget and is reproducible") {
    RunConfig cfg;
    cfg.seed = 3;
    const auto ev = make_evaluator(cfg);
    const auto a = random_search(cfg, *ev);
    const auto b = random_search(cfg, *ev);
    CHECK(a.budget == 1000);
    CHECK(a.losses.size() == 1000);
    CHECK(a.losses == b.losses);
    CHECK(a.best_loss == *std::min_element(a.losses.begin(), a.losses.end()));
    CHECK(a.losses[static_cast<std::size_t>(a.best_index)] == a.best_loss);
}

TEST_CASE("vector files report the offending line") {
    TempDir dir("decode");
    const auto good = dir.path() / "good.txt";
    std::ofstream(good) << "# normal\n0.5, 3.5\n1.5 2.5\n# reduction\n1.2,0.1,0.9,6.9\n";
    const auto in = read_vector_file(good, std::nullopt);
    CHECK(in.scheme.blocks_per_cell == 1);
    CHECK(decode(in.vector, in.scheme).normal.blocks[0].op1 == OperationKind::SepConv3);

    const auto bad = dir.path() / "bad.txt";
    std::ofstream(bad) << "0.5, 3.5\n1.5 2.5\n1.2,0.1\n0.9,7.0\n";
    const auto msg = error_of<Error>([&] { read_vector_file(bad, std::nullopt); });
    CHECK(msg.find("bad.txt:4:") != std::string::npos);
    CHECK(msg.find("gene 7") != std::string::npos);

    const auto junk = dir.path() / "junk.txt";
    std::ofstream(junk) << "0.5\n0.5 x\n";
    CHECK(error_of<Error>([&] { read_vector_file(junk, std::nullopt); }).find("junk.txt:2:") != std::string::npos);

    CHECK_THROWS_AS(infer_scheme(7, std::nullopt), LengthMismatch);
    CHECK_THROWS_AS(infer_scheme(16, 1), LengthMismatch);
    CHECK(parse_vector("[0.5, 1.5,2.5]").values == std::vector<double>{0.5, 1.5, 2.5});
}

}
