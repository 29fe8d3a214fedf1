#include "relnas/rng.hpp"

#include "relnas/errors.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace relnas {

InvalidGene::InvalidGene(std::size_t position, double value, double lo, double hi)
    : Error("invalid gene at position " + std::to_string(position) + ": value " +
            std::to_string(value) + " outside [" + std::to_string(lo) + ", " +
            std::to_string(hi) + ")"),
      position(position), value(value), lo(lo), hi(hi) {}

EvaluationFailed::EvaluationFailed(int individual_id, const std::string& what)
    : Error("evaluation of individual " + std::to_string(individual_id) + " failed: " + what),
      individual_id(individual_id) {}

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed) {
    std::uint64_t h = seed;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

double Rng::uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) {
    double v = lo + (hi - lo) * uniform();
    return v < hi ? v : std::nextafter(hi, lo);
}

std::uint64_t Rng::below(std::uint64_t n) {
    // Rejection sampling keeps the draw exactly uniform.
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t v;
    do {
        v = engine_();
    } while (v >= limit);
    return v % n;
}

double Rng::normal() {
    double u1;
    do {
        u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::string Rng::state() const {
    std::ostringstream os;
    os << engine_;
    return os.str();
}

void Rng::restore(const std::string& state) {
    std::istringstream is(state);
    is >> engine_;
    if (is.fail()) {
        throw CorruptCheckpoint("unreadable random engine state");
    }
}

Rng substream(std::uint64_t master_seed, std::string_view label) {
    return Rng(mix64(master_seed ^ fnv1a(label)));
}

} // namespace relnas
