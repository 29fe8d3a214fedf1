#include "relnas/driver.hpp"

#include "relnas/checkpoint.hpp"
#include "relnas/errors.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace relnas {

namespace {

RunConfig finalized(const RunConfig& config) {
    RunConfig cfg = config;
    cfg.finalize();
    return cfg;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error("cannot write " + path.string());
    }
    out << text;
    if (!out) {
        throw Error("failed writing " + path.string());
    }
}

Genotype read_genotype(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open genotype file " + path.string());
    }
    try {
        nlohmann::json j;
        in >> j;
        return genotype_from_json(j);
    } catch (const std::exception& e) {
        throw ConfigError("genotype file " + path.string() + ": " + e.what());
    }
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

class LogWriter {
public:
    LogWriter(const std::filesystem::path& path, const std::vector<GenerationStats>& history)
        : out_(path, std::ios::binary | std::ios::trunc) {
        if (!out_) {
            throw Error("cannot write " + path.string());
        }
        out_ << log_header();
        for (const auto& s : history) {
            out_ << log_rows(s);
        }
        out_.flush();
    }

    void append(const GenerationStats& s) {
        out_ << log_rows(s);
        out_.flush();
    }

private:
    std::ofstream out_;
};

SearchState continue_search(const RunConfig& cfg, SearchState state, const Evaluator& evaluator,
                            const std::filesystem::path& out_dir, const SearchRunOptions& options) {
    const auto t0 = std::chrono::steady_clock::now();
    std::filesystem::create_directories(out_dir);
    LogWriter log(out_dir / "log.csv", state.history);
    int last_checkpoint = -1;
    auto checkpoint = [&] {
        const int g = state.population.generation;
        if (g != last_checkpoint) {
            save_checkpoint(out_dir / checkpoint_name(g), cfg, state);
            last_checkpoint = g;
        }
    };
    while (state.population.generation < cfg.search.generations) {
        if (options.stop_after && state.population.generation >= *options.stop_after) {
            checkpoint();
            return state;
        }
        const auto& stats = advance(state, evaluator, cfg.scheme, cfg.search);
        log.append(stats);
        if (options.on_generation) {
            options.on_generation(stats);
        }
        if (state.population.generation % cfg.checkpoint_every == 0) {
            checkpoint();
        }
    }
    checkpoint();
    write_final_artifacts(cfg, state, out_dir, seconds_since(t0));
    return state;
}

} // namespace

std::string format_double(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

CellGenotype default_frozen_reduction(int blocks_per_cell) {
    CellGenotype cell;
    cell.cell_type = CellType::Reduction;
    for (int b = 0; b < blocks_per_cell; ++b) {
        cell.blocks.push_back({b + 1, OperationKind::SepConv3, b + 1, OperationKind::SepConv3});
    }
    return cell;
}

std::unique_ptr<Evaluator> make_evaluator(const RunConfig& config) {
    const RunConfig cfg = finalized(config);
    const std::uint64_t seed = cfg.require_seed();
    const auto& kind = cfg.evaluator.kind;
    if (kind == "distance") {
        Genotype target;
        if (!cfg.evaluator.target.empty()) {
            target = read_genotype(cfg.evaluator.target);
        } else {
            Rng rng = substream(seed, "target");
            target = random_genotype(rng, cfg.scheme);
            if (cfg.search.frozen_reduction) {
                target.reduction = *cfg.search.frozen_reduction;
            }
        }
        try {
            require_valid(target, cfg.scheme);
        } catch (const Error& e) {
            throw ConfigError(std::string("distance target: ") + e.what());
        }
        return std::make_unique<DistanceEvaluator>(std::move(target));
    }
    if (kind == "opcost") {
        return std::make_unique<OpCostEvaluator>(cfg.evaluator.single_cell);
    }
    if (kind == "tabular") {
        return std::make_unique<TabularEvaluator>(TabularEvaluator::from_file(cfg.evaluator.table));
    }
    auto data = std::make_shared<const DatasetSplit>(make_synthetic_dataset(seed, cfg.data));
    return std::make_unique<MicroNetEvaluator>(cfg.macro, cfg.train, std::move(data),
                                               substream(seed, "network_init").next(),
                                               substream(seed, "batch_shuffle").next());
}

std::string log_header() { return "generation,individual_id,loss,is_fast,pair_index\n"; }

std::string log_rows(const GenerationStats& stats) {
    std::string out;
    for (std::size_t i = 0; i < stats.losses.size(); ++i) {
        out += std::to_string(stats.generation);
        out += ',';
        out += std::to_string(i);
        out += ',';
        out += format_double(stats.losses[i]);
        out += stats.is_fast[i] ? ",1," : ",0,";
        out += std::to_string(stats.pair_index[i]);
        out += '\n';
    }
    return out;
}

SearchState run_search(const RunConfig& config, const std::filesystem::path& out_dir,
                       const SearchRunOptions& options) {
    const RunConfig cfg = finalized(config);
    const auto evaluator = make_evaluator(cfg);
    SearchState state = start_search(cfg.search, cfg.scheme, *evaluator, cfg.require_seed());
    return continue_search(cfg, std::move(state), *evaluator, out_dir, options);
}

SearchState resume_search(const RunConfig& config, const std::filesystem::path& checkpoint,
                          const std::filesystem::path& out_dir, const SearchRunOptions& options) {
    const RunConfig cfg = finalized(config);
    SearchState state = load_checkpoint(checkpoint, cfg);
    const auto evaluator = make_evaluator(cfg);
    return continue_search(cfg, std::move(state), *evaluator, out_dir, options);
}

void write_final_artifacts(const RunConfig& config, const SearchState& state, const std::filesystem::path& out_dir,
                           double wall_time_seconds) {
    if (!state.best) {
        throw Error("no generation has been evaluated");
    }
    const auto& best = *state.best;
    std::filesystem::create_directories(out_dir);
    write_text(out_dir / "best_genotype.json", to_json(best.genotype).dump(2) + "\n");
    write_text(out_dir / "normal.dot", to_dot(to_dag(best.genotype.normal)));
    write_text(out_dir / "reduction.dot", to_dot(to_dag(best.genotype.reduction)));

    char hash[17];
    std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(config.hash()));
    nlohmann::json summary = {
        {"seed", config.require_seed()},
        {"population_size", config.search.population_size},
        {"generations", config.search.generations},
        {"generations_completed", state.population.generation},
        {"blocks_per_cell", config.scheme.blocks_per_cell},
        {"evaluator", config.evaluator.kind},
        {"best_loss", best.loss},
        {"best_generation", best.generation},
        {"best_individual_id", best.individual_id},
        {"best_alpha", best.alpha.values},
        {"first_generation_spread", state.history.front().spread},
        {"final_generation_spread", state.history.back().spread},
        {"wall_time_seconds", wall_time_seconds},
        {"log_schema_version", kLogSchemaVersion},
        {"config_hash", hash},
    };
    write_text(out_dir / "summary.json", summary.dump(2) + "\n");
}

RandomSearchResult random_search(const RunConfig& config, const Evaluator& evaluator) {
    const RunConfig cfg = finalized(config);
    const std::uint64_t seed = cfg.require_seed();
    Rng omega_rng = substream(seed, "omega");
    const WeightSet omega0 = init_weight_set(cfg.scheme, evaluator.shapes(cfg.scheme), omega_rng);
    Rng rng = substream(seed, "random_search");

    RandomSearchResult result;
    result.budget = cfg.search.population_size * cfg.search.generations;
    result.losses.reserve(static_cast<std::size_t>(result.budget));
    for (int i = 0; i < result.budget; ++i) {
        ArchVector alpha = random_arch(rng, cfg.scheme);
        if (cfg.search.frozen_reduction) {
            pin_reduction(alpha, *cfg.search.frozen_reduction, cfg.scheme);
        }
        EstimationRequest req;
        req.genotype = decode(alpha, cfg.scheme);
        req.inherited = inherit(omega0, req.genotype);
        req.epoch_index = i / cfg.search.population_size;
        double loss;
        try {
            loss = evaluator.estimate(req).validation_loss;
        } catch (const std::exception& e) {
            throw EvaluationFailed(i, e.what());
        }
        if (!std::isfinite(loss)) {
            throw EvaluationFailed(i, "estimated loss is not finite");
        }
        result.losses.push_back(loss);
        if (i == 0 || loss < result.best_loss) {
            result.best_loss = loss;
            result.best_index = i;
            result.best_genotype = std::move(req.genotype);
        }
    }
    return result;
}

void write_random_search(const RunConfig& config, const RandomSearchResult& result,
                         const std::filesystem::path& out_dir, double wall_time_seconds) {
    std::filesystem::create_directories(out_dir);
    std::string csv = "sample,loss\n";
    for (std::size_t i = 0; i < result.losses.size(); ++i) {
        csv += std::to_string(i) + "," + format_double(result.losses[i]) + "\n";
    }
    write_text(out_dir / "random_search.csv", csv);
    write_text(out_dir / "random_best_genotype.json", to_json(result.best_genotype).dump(2) + "\n");
    nlohmann::json summary = {
        {"seed", config.require_seed()},
        {"budget", result.budget},
        {"evaluator", config.evaluator.kind},
        {"best_loss", result.best_loss},
        {"best_sample", result.best_index},
        {"wall_time_seconds", wall_time_seconds},
        {"log_schema_version", kLogSchemaVersion},
    };
    write_text(out_dir / "random_summary.json", summary.dump(2) + "\n");
}

double percentile_threshold(const std::vector<double>& sorted_losses, double percent) {
    if (sorted_losses.empty()) {
        throw Error("percentile of an empty table");
    }
    const double n = static_cast<double>(sorted_losses.size());
    auto rank = static_cast<std::size_t>(std::ceil(percent / 100.0 * n));
    rank = std::clamp<std::size_t>(rank, 1, sorted_losses.size());
    return sorted_losses[rank - 1];
}

Enumeration enumerate_space(const RunConfig& config, std::uint64_t cap) {
    RunConfig cfg = finalized(config);
    if (cfg.evaluator.kind == "micronet") {
        throw ConfigError("enumeration needs a surrogate evaluator, not micronet");
    }
    if (!cfg.seed) {
        cfg.seed = 0; // only a random distance target would consume it
    }
    const auto evaluator = make_evaluator(cfg);
    Enumeration e;
    e.single_cell = cfg.evaluator.single_cell;
    auto score = [&](Genotype g) {
        EstimationRequest req;
        req.inherited = empty_weights(g);
        req.genotype = std::move(g);
        const double loss = evaluator->estimate(req).validation_loss;
        e.rows.push_back({loss, std::move(req.genotype)});
    };
    if (e.single_cell) {
        const CellGenotype frozen = cfg.search.frozen_reduction.value_or(
            default_frozen_reduction(cfg.scheme.blocks_per_cell));
        e.rows.reserve(static_cast<std::size_t>(std::min(cell_space_size(cfg.scheme), cap)));
        for_each_cell(cfg.scheme, CellType::Normal, [&](const CellGenotype& c) { score(Genotype{c, frozen}); },
                      cap);
    } else {
        for_each_genotype(cfg.scheme, [&](const Genotype& g) { score(g); }, cap);
    }
    std::stable_sort(e.rows.begin(), e.rows.end(),
                     [](const EnumerationRow& a, const EnumerationRow& b) { return a.loss < b.loss; });
    std::vector<double> losses;
    losses.reserve(e.rows.size());
    for (const auto& r : e.rows) {
        losses.push_back(r.loss);
    }
    for (double p : kReportedPercentiles) {
        e.thresholds[p] = percentile_threshold(losses, p);
    }
    return e;
}

void write_enumeration(const Enumeration& e, const std::filesystem::path& out_dir) {
    std::filesystem::create_directories(out_dir);
    std::ofstream out(out_dir / "enumeration.csv", std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error("cannot write " + (out_dir / "enumeration.csv").string());
    }
    out << "rank,loss,normal,reduction\n";
    for (std::size_t i = 0; i < e.rows.size(); ++i) {
        const auto& r = e.rows[i];
        out << (i + 1) << ',' << format_double(r.loss) << ',' << compact_string(r.genotype.normal) << ','
            << compact_string(r.genotype.reduction) << '\n';
    }
    nlohmann::json thresholds = nlohmann::json::object();
    for (const auto& [p, v] : e.thresholds) {
        thresholds[format_double(p)] = v;
    }
    nlohmann::json summary = {
        {"rows", e.rows.size()},
        {"single_cell", e.single_cell},
        {"optimum_loss", e.rows.front().loss},
        {"optimum", to_json(e.rows.front().genotype)},
        {"percentile_thresholds", thresholds},
    };
    write_text(out_dir / "enumeration_summary.json", summary.dump(2) + "\n");
}

ArchVector parse_vector(std::string_view text) {
    ArchVector v;
    std::size_t pos = 0;
    while (pos < text.size()) {
        const auto start = text.find_first_not_of(" \t\r\n,[]", pos);
        if (start == std::string_view::npos) {
            break;
        }
        auto end = text.find_first_of(" \t\r\n,[]", start);
        if (end == std::string_view::npos) {
            end = text.size();
        }
        const auto token = text.substr(start, end - start);
        double value = 0.0;
        const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
        if (ec != std::errc() || ptr != token.data() + token.size()) {
            throw Error("'" + std::string(token) + "' is not a number");
        }
        v.values.push_back(value);
        pos = end;
    }
    return v;
}

SearchSpaceScheme infer_scheme(std::size_t length, std::optional<int> blocks_per_cell) {
    SearchSpaceScheme scheme;
    if (blocks_per_cell) {
        scheme.blocks_per_cell = *blocks_per_cell;
    } else {
        if (length == 0 || length % 8 != 0) {
            throw LengthMismatch("vector length " + std::to_string(length) + " is not a multiple of 8");
        }
        scheme.blocks_per_cell = static_cast<int>(length / 8);
    }
    scheme.check();
    if (length != scheme.length()) {
        throw LengthMismatch("vector has " + std::to_string(length) + " genes, expected " +
                             std::to_string(scheme.length()));
    }
    return scheme;
}

VectorInput read_vector_file(const std::filesystem::path& path, std::optional<int> blocks_per_cell) {
    std::ifstream in(path);
    if (!in) {
        throw Error("cannot open " + path.string());
    }
    VectorInput input;
    std::vector<int> line_of;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto comment = line.find('#');
        if (comment != std::string::npos) {
            line.erase(comment);
        }
        ArchVector part;
        try {
            part = parse_vector(line);
        } catch (const Error& e) {
            throw Error(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
        for (double v : part.values) {
            input.vector.values.push_back(v);
            line_of.push_back(line_no);
        }
    }
    try {
        input.scheme = infer_scheme(input.vector.size(), blocks_per_cell);
    } catch (const Error& e) {
        throw Error(path.string() + ": " + e.what());
    }
    const auto violations = validate(input.vector, input.scheme);
    if (!violations.empty()) {
        const auto& v = violations.front();
        std::ostringstream msg;
        msg << path.string() << ":" << line_of[v.position] << ": gene " << v.position << " = " << v.value
            << " lies outside [" << v.interval.lo << ", " << v.interval.hi << ")";
        throw Error(msg.str());
    }
    return input;
}

} // namespace relnas
