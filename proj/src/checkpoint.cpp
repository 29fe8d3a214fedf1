#include "relnas/checkpoint.hpp"

#include "relnas/errors.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace relnas {

namespace {

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string checksum(const nlohmann::json& body) { return hex64(fnv1a(body.dump())); }

nlohmann::json stats_to_json(const GenerationStats& s) {
    std::vector<int> fast(s.is_fast.begin(), s.is_fast.end());
    return {{"generation", s.generation}, {"losses", s.losses}, {"is_fast", fast}, {"pair_index", s.pair_index}};
}

GenerationStats stats_from_json(const nlohmann::json& j) {
    GenerationStats s;
    s.generation = j.at("generation").get<int>();
    s.losses = j.at("losses").get<std::vector<double>>();
    for (int f : j.at("is_fast").get<std::vector<int>>()) {
        s.is_fast.push_back(f != 0);
    }
    s.pair_index = j.at("pair_index").get<std::vector<int>>();
    s.summarize();
    return s;
}

} // namespace

std::string checkpoint_name(int generation) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "checkpoint_g%04d.ckpt", generation);
    return buf;
}

nlohmann::json checkpoint_to_json(const RunConfig& config, const SearchState& state) {
    nlohmann::json body;
    body["format"] = "relnas-checkpoint";
    body["format_version"] = kCheckpointFormatVersion;
    body["config_hash"] = hex64(config.hash());
    body["config"] = config.canonical();
    body["generation"] = state.population.generation;

    auto pop = nlohmann::json::array();
    for (const auto& ind : state.population.individuals) {
        pop.push_back({
            {"id", ind.id},
            {"alpha", ind.alpha.values},
            {"delta_prev", ind.delta_prev},
            {"last_loss", ind.last_loss ? nlohmann::json(*ind.last_loss) : nlohmann::json(nullptr)},
        });
    }
    body["population"] = pop;
    body["streams"] = {{"pairing", state.streams.pairing.state()}, {"lambdas", state.streams.lambdas.state()}};

    auto history = nlohmann::json::array();
    for (const auto& s : state.history) {
        history.push_back(stats_to_json(s));
    }
    body["history"] = history;
    if (state.best) {
        body["best"] = {
            {"loss", state.best->loss},
            {"generation", state.best->generation},
            {"individual_id", state.best->individual_id},
            {"alpha", state.best->alpha.values},
        };
    } else {
        body["best"] = nullptr;
    }
    body["weights"] = weights_to_json(state.omega);

    nlohmann::json envelope = body;
    envelope["checksum"] = checksum(body);
    return envelope;
}

SearchState checkpoint_from_json(const nlohmann::json& j, const RunConfig& config) {
    if (!j.is_object() || !j.contains("checksum")) {
        throw CorruptCheckpoint("checkpoint envelope lacks a checksum");
    }
    nlohmann::json body = j;
    body.erase("checksum");
    if (!j.at("checksum").is_string() || j.at("checksum").get<std::string>() != checksum(body)) {
        throw CorruptCheckpoint("checkpoint checksum does not match its contents");
    }
    SearchState state;
    try {
        if (body.at("format").get<std::string>() != "relnas-checkpoint" ||
            body.at("format_version").get<int>() != kCheckpointFormatVersion) {
            throw CorruptCheckpoint("unsupported checkpoint format");
        }
        if (body.at("config_hash").get<std::string>() != hex64(config.hash())) {
            throw HashMismatch("checkpoint was written with a different configuration");
        }
        const auto& scheme = config.scheme;
        state.population.generation = body.at("generation").get<int>();
        for (const auto& ji : body.at("population")) {
            Individual ind;
            ind.id = ji.at("id").get<int>();
            ind.alpha.values = ji.at("alpha").get<std::vector<double>>();
            ind.delta_prev = ji.at("delta_prev").get<std::vector<double>>();
            if (!ji.at("last_loss").is_null()) {
                ind.last_loss = ji.at("last_loss").get<double>();
            }
            require_valid(ind.alpha, scheme);
            if (ind.delta_prev.size() != ind.alpha.size()) {
                throw CorruptCheckpoint("momentum length does not match the architecture vector");
            }
            state.population.individuals.push_back(std::move(ind));
        }
        state.streams.pairing.restore(body.at("streams").at("pairing").get<std::string>());
        state.streams.lambdas.restore(body.at("streams").at("lambdas").get<std::string>());
        for (const auto& js : body.at("history")) {
            state.history.push_back(stats_from_json(js));
        }
        if (!body.at("best").is_null()) {
            const auto& jb = body.at("best");
            BestRecord best;
            best.loss = jb.at("loss").get<double>();
            best.generation = jb.at("generation").get<int>();
            best.individual_id = jb.at("individual_id").get<int>();
            best.alpha.values = jb.at("alpha").get<std::vector<double>>();
            best.genotype = decode(best.alpha, scheme);
            state.best = std::move(best);
        }
        state.omega = weights_from_json(body.at("weights"), scheme);
    } catch (const nlohmann::json::exception& e) {
        throw CorruptCheckpoint(std::string("malformed checkpoint: ") + e.what());
    } catch (const HashMismatch&) {
        throw;
    } catch (const CorruptCheckpoint&) {
        throw;
    } catch (const Error& e) {
        throw CorruptCheckpoint(std::string("inconsistent checkpoint: ") + e.what());
    }
    if (static_cast<int>(state.population.size()) != config.search.population_size ||
        static_cast<int>(state.history.size()) != state.population.generation) {
        throw CorruptCheckpoint("checkpoint population or history size is inconsistent");
    }
    return state;
}

void save_checkpoint(const std::filesystem::path& path, const RunConfig& config, const SearchState& state) {
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw Error("cannot write checkpoint " + tmp);
        }
        out << checkpoint_to_json(config, state).dump() << '\n';
    }
    std::filesystem::rename(tmp, path);
}

SearchState load_checkpoint(const std::filesystem::path& path, const RunConfig& config) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw CorruptCheckpoint("cannot open checkpoint " + path.string());
    }
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw CorruptCheckpoint("checkpoint " + path.string() + " is not valid JSON: " + e.what());
    }
    return checkpoint_from_json(j, config);
}

} // namespace relnas
