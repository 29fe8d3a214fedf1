#include "relnas/checkpoint.hpp"
#include "relnas/config.hpp"
#include "relnas/driver.hpp"
#include "relnas/errors.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>

using namespace relnas;

namespace {

struct CommonOptions {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonOptions& o, bool config_required) {
    auto* c = cmd->add_option("--config", o.config, "Run configuration file");
    if (config_required) {
        c->required();
    }
    cmd->add_option("--seed", o.seed, "Master seed (overrides the config)");
    cmd->add_option("--out", o.out, "Output directory (overrides the config)");
    cmd->add_option("--override", o.overrides, "section.key=value, repeatable");
}

RunConfig build_config(const CommonOptions& o) {
    RunConfig cfg = o.config.empty() ? RunConfig{} : load_config(o.config);
    for (const auto& ov : o.overrides) {
        apply_override(cfg, ov);
    }
    if (o.seed) {
        cfg.seed = *o.seed;
    }
    if (!o.out.empty()) {
        cfg.output_dir = o.out;
    }
    cfg.finalize();
    return cfg;
}

void print_generation(const GenerationStats& s) {
    std::printf("generation %4d  min %.6g  mean %.6g  max %.6g  spread %.6g\n", s.generation, s.min, s.mean, s.max,
                s.spread);
    std::fflush(stdout);
}

void report_search(const RunConfig& cfg, const SearchState& state) {
    std::printf("stopped after generation %d of %d\n", state.population.generation, cfg.search.generations);
    if (state.best) {
        std::printf("best loss %.6g (generation %d, individual %d)\n", state.best->loss, state.best->generation,
                    state.best->individual_id);
        std::printf("normal:    %s\nreduction: %s\n", compact_string(state.best->genotype.normal).c_str(),
                    compact_string(state.best->genotype.reduction).c_str());
    }
    std::printf("artifacts in %s\n", cfg.output_dir.string().c_str());
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Slow-fast relative architecture search over cell genotypes"};
    app.require_subcommand(1);

    CommonOptions search_opt;
    std::optional<int> stop_after;
    bool quiet = false;
    auto* search = app.add_subcommand("search", "Run a search and write its artifacts");
    add_common(search, search_opt, true);
    search->add_option("--stop-after", stop_after, "Stop and checkpoint after this many generations");
    search->add_flag("--quiet", quiet, "No per-generation output");

    CommonOptions resume_opt;
    std::string checkpoint;
    auto* resume = app.add_subcommand("resume", "Continue a search from a checkpoint");
    add_common(resume, resume_opt, true);
    resume->add_option("--checkpoint", checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
    resume->add_option("--stop-after", stop_after, "Stop and checkpoint after this many generations");
    resume->add_flag("--quiet", quiet, "No per-generation output");

    CommonOptions enum_opt;
    auto* enumerate = app.add_subcommand("enumerate", "Score every genotype with a surrogate and rank them");
    add_common(enumerate, enum_opt, false);

    CommonOptions random_opt;
    auto* random = app.add_subcommand("random-search", "Equal-budget random search baseline");
    add_common(random, random_opt, true);

    CommonOptions decode_opt;
    std::string vector_text;
    std::string vector_file;
    std::optional<int> blocks;
    bool emit_dot = false;
    auto* decode_cmd = app.add_subcommand("decode", "Decode an architecture vector into a genotype");
    add_common(decode_cmd, decode_opt, false);
    auto* vec_opt = decode_cmd->add_option("--vector", vector_text, "Comma separated gene values");
    auto* file_opt = decode_cmd->add_option("--file", vector_file, "File with gene values");
    vec_opt->excludes(file_opt);
    decode_cmd->add_option("--blocks", blocks, "Blocks per cell (default: length / 8)");
    decode_cmd->add_flag("--dot", emit_dot, "Also print both cells as DOT");

    CLI11_PARSE(app, argc, argv);

    try {
        if (search->parsed()) {
            const RunConfig cfg = build_config(search_opt);
            SearchRunOptions run;
            run.stop_after = stop_after;
            if (!quiet) {
                run.on_generation = print_generation;
            }
            report_search(cfg, run_search(cfg, cfg.output_dir, run));
        } else if (resume->parsed()) {
            const RunConfig cfg = build_config(resume_opt);
            SearchRunOptions run;
            run.stop_after = stop_after;
            if (!quiet) {
                run.on_generation = print_generation;
            }
            report_search(cfg, resume_search(cfg, checkpoint, cfg.output_dir, run));
        } else if (enumerate->parsed()) {
            const RunConfig cfg = build_config(enum_opt);
            const auto e = enumerate_space(cfg);
            write_enumeration(e, cfg.output_dir);
            std::printf("%zu genotypes%s\n", e.rows.size(), e.single_cell ? " (normal cell only)" : "");
            std::printf("optimum %.6g: %s | %s\n", e.rows.front().loss,
                        compact_string(e.rows.front().genotype.normal).c_str(),
                        compact_string(e.rows.front().genotype.reduction).c_str());
            for (const auto& [p, v] : e.thresholds) {
                std::printf("top %6.2f%%  <= %.6g\n", p, v);
            }
        } else if (random->parsed()) {
            const RunConfig cfg = build_config(random_opt);
            const auto t0 = std::chrono::steady_clock::now();
            const auto evaluator = make_evaluator(cfg);
            const auto result = random_search(cfg, *evaluator);
            const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            write_random_search(cfg, result, cfg.output_dir, secs);
            std::printf("budget %d, best loss %.6g (sample %d)\n", result.budget, result.best_loss,
                        result.best_index);
        } else if (decode_cmd->parsed()) {
            if (vector_text.empty() && vector_file.empty()) {
                throw Error("decode needs --vector or --file");
            }
            if (!decode_opt.config.empty() && !blocks) {
                blocks = load_config(decode_opt.config).scheme.blocks_per_cell;
            }
            VectorInput input;
            if (!vector_file.empty()) {
                input = read_vector_file(vector_file, blocks);
            } else {
                input.vector = parse_vector(vector_text);
                input.scheme = infer_scheme(input.vector.size(), blocks);
                require_valid(input.vector, input.scheme);
            }
            const Genotype g = decode(input.vector, input.scheme);
            const auto json = to_json(g).dump(2);
            std::printf("%s\n", json.c_str());
            const auto normal_dot = to_dot(to_dag(g.normal));
            const auto reduction_dot = to_dot(to_dag(g.reduction));
            if (emit_dot) {
                std::printf("%s%s", normal_dot.c_str(), reduction_dot.c_str());
            }
            if (!decode_opt.out.empty()) {
                const std::filesystem::path out = decode_opt.out;
                std::filesystem::create_directories(out);
                std::ofstream(out / "genotype.json") << json << '\n';
                std::ofstream(out / "normal.dot") << normal_dot;
                std::ofstream(out / "reduction.dot") << reduction_dot;
            }
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
