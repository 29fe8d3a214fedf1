#include "relnas/weight_store.hpp"

#include "relnas/errors.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <numeric>

namespace relnas {

namespace {

constexpr std::string_view kAlphabet =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

int alphabet_index(char c) {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
}

std::uint64_t hash_u64(std::uint64_t h, std::uint64_t v) {
    char bytes[8];
    std::memcpy(bytes, &v, sizeof v);
    return fnv1a(std::string_view(bytes, 8), h);
}

} // namespace

std::string WeightKey::text() const {
    return std::string(cell_type_name(cell)) + "/" + std::to_string(source) + "/" +
           std::to_string(target) + "/" + std::string(op_name(op));
}

WeightKey WeightKey::parse(std::string_view text) {
    std::vector<std::string> parts;
    std::size_t start = 0;
    while (true) {
        const auto slash = text.find('/', start);
        parts.emplace_back(text.substr(start, slash - start));
        if (slash == std::string_view::npos) {
            break;
        }
        start = slash + 1;
    }
    if (parts.size() != 4) {
        throw UnknownKey("malformed weight key '" + std::string(text) + "'");
    }
    try {
        WeightKey key;
        key.cell = cell_type_from_name(parts[0]);
        std::size_t used = 0;
        key.source = std::stoi(parts[1], &used);
        if (used != parts[1].size()) throw UnknownKey("bad source");
        key.target = std::stoi(parts[2], &used);
        if (used != parts[2].size()) throw UnknownKey("bad target");
        key.op = op_from_name(parts[3]);
        return key;
    } catch (const std::exception&) {
        throw UnknownKey("malformed weight key '" + std::string(text) + "'");
    }
}

std::size_t ParamShape::numel() const {
    if (dims.empty()) {
        return 0;
    }
    return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
}

bool WeightEntry::same_values(const WeightEntry& other) const {
    if (shape != other.shape || params.size() != other.params.size()) {
        return false;
    }
    return params.empty() ||
           std::memcmp(params.data(), other.params.data(), params.size() * sizeof(double)) == 0;
}

WeightSet WeightSet::from_entries(const SearchSpaceScheme& scheme,
                                  std::map<WeightKey, WeightEntry> entries) {
    const auto keys = enumerate_keys(scheme);
    for (const auto& key : keys) {
        if (!entries.count(key)) {
            throw MissingShape("weight set lacks entry " + key.text());
        }
    }
    if (entries.size() != keys.size()) {
        for (const auto& [key, entry] : entries) {
            if (key.source < 0 || key.source >= key.target || key.target < 2 ||
                key.target > scheme.blocks_per_cell + 1) {
                throw UnknownKey("weight set has entry outside the key space: " + key.text());
            }
        }
    }
    for (const auto& [key, entry] : entries) {
        ParamShape shape{entry.shape, 0};
        if (shape.numel() != entry.params.size()) {
            throw ShapeMismatch("entry " + key.text() + " has " + std::to_string(entry.params.size()) +
                                " parameters but shape holds " + std::to_string(shape.numel()));
        }
    }
    WeightSet ws;
    ws.entries_ = std::move(entries);
    return ws;
}

const WeightEntry& WeightSet::at(const WeightKey& key) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) {
        throw UnknownKey("no weight entry for " + key.text());
    }
    return it->second;
}

std::size_t WeightSet::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [key, entry] : entries_) {
        n += entry.params.size();
    }
    return n;
}

std::uint64_t WeightSet::fingerprint() const {
    std::uint64_t h = fnv1a("weight-set");
    for (const auto& [key, entry] : entries_) {
        h = fnv1a(key.text(), h);
        for (auto d : entry.shape) {
            h = hash_u64(h, d);
        }
        for (double p : entry.params) {
            h = hash_u64(h, std::bit_cast<std::uint64_t>(p));
        }
        h = hash_u64(h, entry.version);
    }
    return h;
}

std::vector<WeightKey> enumerate_keys(const SearchSpaceScheme& scheme) {
    std::vector<WeightKey> keys;
    for (CellType cell : {CellType::Normal, CellType::Reduction}) {
        for (int target = 2; target <= scheme.blocks_per_cell + 1; ++target) {
            for (int source = 0; source < target; ++source) {
                for (auto op : kAllOperations) {
                    keys.push_back({cell, source, target, op});
                }
            }
        }
    }
    return keys;
}

std::vector<WeightKey> genotype_keys(const Genotype& g) {
    std::vector<WeightKey> keys;
    for (const auto* cell : {&g.normal, &g.reduction}) {
        for (std::size_t b = 0; b < cell->blocks.size(); ++b) {
            const int node = static_cast<int>(b) + 2;
            const auto& blk = cell->blocks[b];
            keys.push_back({cell->cell_type, blk.pre1, node, blk.op1});
            keys.push_back({cell->cell_type, blk.pre2, node, blk.op2});
        }
    }
    std::sort(keys.begin(), keys.end());
    keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
    return keys;
}

WeightSet init_weight_set(const SearchSpaceScheme& scheme, const ShapeRegistry& shapes, Rng& rng) {
    std::map<WeightKey, WeightEntry> entries;
    for (const auto& key : enumerate_keys(scheme)) {
        auto it = shapes.find(key);
        if (it == shapes.end()) {
            throw MissingShape("shape registry has no entry for " + key.text());
        }
        const auto& shape = it->second;
        WeightEntry entry;
        entry.shape = shape.dims;
        entry.params.resize(shape.numel());
        if (!entry.params.empty()) {
            if (shape.fan_in == 0) {
                throw MissingShape("shape for " + key.text() + " has zero fan-in");
            }
            const double a = std::sqrt(3.0 / static_cast<double>(shape.fan_in));
            for (auto& p : entry.params) {
                p = rng.uniform(-a, a);
            }
        }
        entries.emplace(key, std::move(entry));
    }
    WeightSet ws = WeightSet::from_entries(scheme, std::move(entries));
    return ws;
}

InheritedWeights inherit(const WeightSet& omega, const Genotype& g) {
    InheritedWeights out;
    for (const auto& key : genotype_keys(g)) {
        out.emplace(key, omega.at(key));
    }
    return out;
}

WeightSet commit(WeightSet omega, const InheritedWeights& fast, const InheritedWeights& slow) {
    auto overwrite = [&omega](const WeightKey& key, const WeightEntry& incoming) {
        auto it = omega.entries_.find(key);
        if (it == omega.entries_.end()) {
            throw UnknownKey("commit of key outside the weight set: " + key.text());
        }
        if (it->second.shape != incoming.shape || it->second.params.size() != incoming.params.size()) {
            throw ShapeMismatch("commit of " + key.text() + " changes its shape");
        }
        it->second.params = incoming.params;
        ++it->second.version;
    };
    for (const auto& [key, entry] : fast) {
        overwrite(key, entry);
    }
    for (const auto& [key, entry] : slow) {
        if (!fast.count(key)) {
            overwrite(key, entry);
        }
    }
    return omega;
}

std::string base64_encode(const std::vector<double>& values) {
    std::string bytes(values.size() * 8, '\0');
    for (std::size_t i = 0; i < values.size(); ++i) {
        auto bits = std::bit_cast<std::uint64_t>(values[i]);
        for (int b = 0; b < 8; ++b) {
            bytes[i * 8 + static_cast<std::size_t>(b)] = static_cast<char>((bits >> (8 * b)) & 0xff);
        }
    }
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    for (std::size_t i = 0; i < bytes.size(); i += 3) {
        std::uint32_t chunk = static_cast<unsigned char>(bytes[i]) << 16;
        const std::size_t n = std::min<std::size_t>(3, bytes.size() - i);
        if (n > 1) chunk |= static_cast<unsigned char>(bytes[i + 1]) << 8;
        if (n > 2) chunk |= static_cast<unsigned char>(bytes[i + 2]);
        out += kAlphabet[(chunk >> 18) & 63];
        out += kAlphabet[(chunk >> 12) & 63];
        out += n > 1 ? kAlphabet[(chunk >> 6) & 63] : '=';
        out += n > 2 ? kAlphabet[chunk & 63] : '=';
    }
    return out;
}

std::vector<double> base64_decode_doubles(std::string_view text) {
    if (text.size() % 4 != 0) {
        throw CorruptCheckpoint("base64 payload length is not a multiple of 4");
    }
    std::string bytes;
    for (std::size_t i = 0; i < text.size(); i += 4) {
        std::uint32_t chunk = 0;
        int pad = 0;
        for (int k = 0; k < 4; ++k) {
            const char c = text[i + static_cast<std::size_t>(k)];
            int v = 0;
            if (c == '=' && k >= 2 && i + 4 == text.size()) {
                ++pad;
            } else {
                v = alphabet_index(c);
                if (v < 0 || pad > 0) {
                    throw CorruptCheckpoint("invalid base64 character");
                }
            }
            chunk = (chunk << 6) | static_cast<std::uint32_t>(v);
        }
        bytes += static_cast<char>((chunk >> 16) & 0xff);
        if (pad < 2) bytes += static_cast<char>((chunk >> 8) & 0xff);
        if (pad < 1) bytes += static_cast<char>(chunk & 0xff);
    }
    if (bytes.size() % 8 != 0) {
        throw CorruptCheckpoint("base64 payload is not a whole number of doubles");
    }
    std::vector<double> values(bytes.size() / 8);
    for (std::size_t i = 0; i < values.size(); ++i) {
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b) {
            bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[i * 8 + static_cast<std::size_t>(b)]))
                    << (8 * b);
        }
        values[i] = std::bit_cast<double>(bits);
    }
    return values;
}

nlohmann::json weights_to_json(const WeightSet& omega) {
    nlohmann::json entries = nlohmann::json::object();
    for (const auto& [key, entry] : omega.entries()) {
        entries[key.text()] = {
            {"shape", entry.shape},
            {"version", entry.version},
            {"params", base64_encode(entry.params)},
        };
    }
    return {{"entries", entries}};
}

WeightSet weights_from_json(const nlohmann::json& j, const SearchSpaceScheme& scheme) {
    std::map<WeightKey, WeightEntry> entries;
    try {
        for (const auto& [text, je] : j.at("entries").items()) {
            WeightEntry entry;
            entry.shape = je.at("shape").get<std::vector<std::size_t>>();
            entry.version = je.at("version").get<std::uint64_t>();
            entry.params = base64_decode_doubles(je.at("params").get<std::string>());
            entries.emplace(WeightKey::parse(text), std::move(entry));
        }
    } catch (const nlohmann::json::exception& e) {
        throw CorruptCheckpoint(std::string("weight segment: ") + e.what());
    }
    return WeightSet::from_entries(scheme, std::move(entries));
}

} // namespace relnas
