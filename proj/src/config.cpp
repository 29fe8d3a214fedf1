#include "relnas/config.hpp"

#include "relnas/errors.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace relnas {

namespace {

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) {
        return {};
    }
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

template <typename T>
T parse_number(std::string_view v) {
    T out{};
    const auto* end = v.data() + v.size();
    auto [ptr, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc() || ptr != end) {
        throw std::invalid_argument("'" + std::string(v) + "' is not a valid number");
    }
    return out;
}

bool parse_bool(std::string_view v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw std::invalid_argument("'" + std::string(v) + "' is not a boolean");
}

std::string format_number(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

std::string file_digest(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ConfigError("cannot read " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(ss.str())));
    return buf;
}

using Setter = std::function<void(RunConfig&, std::string_view, const std::filesystem::path&)>;

std::filesystem::path resolve(std::string_view v, const std::filesystem::path& base) {
    std::filesystem::path p{std::string(v)};
    if (p.empty() || p.is_absolute() || base.empty()) {
        return p;
    }
    return base / p;
}

const std::map<std::string, Setter, std::less<>>& setters() {
    static const std::map<std::string, Setter, std::less<>> table = {
        {"seed", [](RunConfig& c, std::string_view v, auto&) { c.seed = parse_number<std::uint64_t>(v); }},
        {"output_dir", [](RunConfig& c, std::string_view v, auto& b) { c.output_dir = resolve(v, b); }},
        {"search.population_size",
         [](RunConfig& c, std::string_view v, auto&) { c.search.population_size = parse_number<int>(v); }},
        {"search.generations",
         [](RunConfig& c, std::string_view v, auto&) { c.search.generations = parse_number<int>(v); }},
        {"search.blocks_per_cell",
         [](RunConfig& c, std::string_view v, auto&) { c.scheme.blocks_per_cell = parse_number<int>(v); }},
        {"search.clamp_epsilon",
         [](RunConfig& c, std::string_view v, auto&) { c.search.clamp_epsilon = parse_number<double>(v); }},
        {"search.per_coordinate_lambdas",
         [](RunConfig& c, std::string_view v, auto&) { c.search.lambdas.per_coordinate = parse_bool(v); }},
        {"search.lambda1",
         [](RunConfig& c, std::string_view v, auto&) { c.search.lambdas.fixed_lambda1 = parse_number<double>(v); }},
        {"search.lambda2",
         [](RunConfig& c, std::string_view v, auto&) { c.search.lambdas.fixed_lambda2 = parse_number<double>(v); }},
        {"search.checkpoint_every",
         [](RunConfig& c, std::string_view v, auto&) { c.checkpoint_every = parse_number<int>(v); }},
        {"search.frozen_reduction",
         [](RunConfig& c, std::string_view v, auto& b) { c.frozen_reduction_path = resolve(v, b); }},
        {"evaluator", [](RunConfig& c, std::string_view v, auto&) { c.evaluator.kind = std::string(v); }},
        {"evaluator.kind", [](RunConfig& c, std::string_view v, auto&) { c.evaluator.kind = std::string(v); }},
        {"evaluator.target", [](RunConfig& c, std::string_view v, auto& b) { c.evaluator.target = resolve(v, b); }},
        {"evaluator.table", [](RunConfig& c, std::string_view v, auto& b) { c.evaluator.table = resolve(v, b); }},
        {"evaluator.single_cell",
         [](RunConfig& c, std::string_view v, auto&) { c.evaluator.single_cell = parse_bool(v); }},
        {"train.lr", [](RunConfig& c, std::string_view v, auto&) { c.train.lr0 = parse_number<double>(v); }},
        {"train.batch_size",
         [](RunConfig& c, std::string_view v, auto&) { c.train.batch_size = parse_number<int>(v); }},
        {"train.weight_decay",
         [](RunConfig& c, std::string_view v, auto&) { c.train.weight_decay = parse_number<double>(v); }},
        {"train.grad_clip",
         [](RunConfig& c, std::string_view v, auto&) { c.train.grad_clip = parse_number<double>(v); }},
        {"macro.stacking", [](RunConfig& c, std::string_view v, auto&) { c.macro.stacking = parse_number<int>(v); }},
        {"macro.width", [](RunConfig& c, std::string_view v, auto&) { c.macro.width = parse_number<int>(v); }},
        {"data.classes", [](RunConfig& c, std::string_view v, auto&) { c.data.classes = parse_number<int>(v); }},
        {"data.train_size",
         [](RunConfig& c, std::string_view v, auto&) { c.data.train_size = parse_number<int>(v); }},
        {"data.validation_size",
         [](RunConfig& c, std::string_view v, auto&) { c.data.validation_size = parse_number<int>(v); }},
        {"data.separation",
         [](RunConfig& c, std::string_view v, auto&) { c.data.separation = parse_number<double>(v); }},
    };
    return table;
}

void set_key(RunConfig& config, const std::string& key, std::string_view value, const std::filesystem::path& base,
             const std::string& where) {
    std::string lookup = key;
    if (lookup.rfind("run.", 0) == 0) {
        lookup = lookup.substr(4);
    }
    const auto& table = setters();
    auto it = table.find(lookup);
    if (it == table.end()) {
        throw ConfigError(where + ": unknown key '" + key + "'");
    }
    try {
        it->second(config, value, base);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(where + ": " + key + ": " + e.what());
    } catch (const Error& e) {
        throw ConfigError(where + ": " + key + ": " + e.what());
    }
}

} // namespace

RunConfig parse_config(std::string_view text, const std::string& source, const std::filesystem::path& base_dir) {
    RunConfig config;
    std::string section;
    int line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const auto nl = text.find('\n', pos);
        const auto raw = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
        pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
        ++line_no;
        const std::string where = source + ":" + std::to_string(line_no);

        auto line = raw;
        const auto comment = line.find_first_of("#;");
        if (comment != std::string_view::npos) {
            line = line.substr(0, comment);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        if (line.front() == '[') {
            if (line.back() != ']') {
                throw ConfigError(where + ": malformed section header");
            }
            section = std::string(trim(line.substr(1, line.size() - 2)));
            if (section.empty()) {
                throw ConfigError(where + ": empty section name");
            }
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw ConfigError(where + ": expected key = value");
        }
        const auto key = std::string(trim(line.substr(0, eq)));
        const auto value = trim(line.substr(eq + 1));
        if (key.empty()) {
            throw ConfigError(where + ": missing key");
        }
        set_key(config, section.empty() ? key : section + "." + key, value, base_dir, where);
    }
    return config;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config file " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), path.string(), path.parent_path());
}

void apply_override(RunConfig& config, std::string_view assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos) {
        throw ConfigError("override '" + std::string(assignment) + "' must look like section.key=value");
    }
    set_key(config, std::string(trim(assignment.substr(0, eq))), trim(assignment.substr(eq + 1)), {},
            "override '" + std::string(assignment) + "'");
}

void RunConfig::finalize() {
    scheme.check();
    if (!frozen_reduction_path.empty()) {
        std::ifstream in(frozen_reduction_path);
        if (!in) {
            throw ConfigError("cannot open frozen reduction genotype " + frozen_reduction_path.string());
        }
        try {
            nlohmann::json j;
            in >> j;
            search.frozen_reduction = genotype_from_json(j).reduction;
        } catch (const std::exception& e) {
            throw ConfigError("frozen reduction genotype " + frozen_reduction_path.string() + ": " + e.what());
        }
    }
    try {
        search.check(scheme);
    } catch (const Error& e) {
        throw ConfigError(e.what());
    }
    if (checkpoint_every < 1) {
        throw ConfigError("checkpoint_every must be at least 1");
    }
    static const std::vector<std::string> kinds = {"distance", "opcost", "micronet", "tabular"};
    if (std::find(kinds.begin(), kinds.end(), evaluator.kind) == kinds.end()) {
        throw ConfigError("unknown evaluator kind '" + evaluator.kind + "'");
    }
    if (evaluator.kind == "tabular" && evaluator.table.empty()) {
        throw ConfigError("tabular evaluator needs evaluator.table");
    }
    train.t_max = search.generations;
    data.dim = macro.width;
    train.check();
    macro.check();
    data.check();
}

std::uint64_t RunConfig::require_seed() const {
    if (!seed) {
        throw ConfigError("a seed is required (set 'seed' in the config or pass --seed)");
    }
    return *seed;
}

std::string RunConfig::canonical() const {
    std::map<std::string, std::string> kv;
    kv["seed"] = seed ? std::to_string(*seed) : "none";
    kv["search.population_size"] = std::to_string(search.population_size);
    kv["search.generations"] = std::to_string(search.generations);
    kv["search.blocks_per_cell"] = std::to_string(scheme.blocks_per_cell);
    kv["search.clamp_epsilon"] = format_number(search.clamp_epsilon);
    kv["search.per_coordinate_lambdas"] = search.lambdas.per_coordinate ? "true" : "false";
    kv["search.lambda1"] = search.lambdas.fixed_lambda1 ? format_number(*search.lambdas.fixed_lambda1) : "random";
    kv["search.lambda2"] = search.lambdas.fixed_lambda2 ? format_number(*search.lambdas.fixed_lambda2) : "random";
    kv["search.frozen_reduction"] = search.frozen_reduction ? to_json(*search.frozen_reduction).dump() : "none";
    kv["evaluator.kind"] = evaluator.kind;
    kv["evaluator.target"] = evaluator.target.empty() ? "random" : file_digest(evaluator.target);
    kv["evaluator.table"] = evaluator.table.empty() ? "none" : file_digest(evaluator.table);
    kv["evaluator.single_cell"] = evaluator.single_cell ? "true" : "false";
    kv["train.lr"] = format_number(train.lr0);
    kv["train.batch_size"] = std::to_string(train.batch_size);
    kv["train.weight_decay"] = format_number(train.weight_decay);
    kv["train.grad_clip"] = format_number(train.grad_clip);
    kv["macro.stacking"] = std::to_string(macro.stacking);
    kv["macro.width"] = std::to_string(macro.width);
    kv["data.classes"] = std::to_string(data.classes);
    kv["data.train_size"] = std::to_string(data.train_size);
    kv["data.validation_size"] = std::to_string(data.validation_size);
    kv["data.separation"] = format_number(data.separation);
    std::string out;
    for (const auto& [k, v] : kv) {
        out += k + "=" + v + "\n";
    }
    return out;
}

std::uint64_t RunConfig::hash() const { return fnv1a(canonical()); }

} // namespace relnas
