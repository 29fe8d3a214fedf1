#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace relnas {

/// Row-major feature matrix with integer labels.
struct Samples {
    int dim = 0;
    std::vector<double> features;
    std::vector<int> labels;
    /// Index of each row in the generating sequence; used to check disjointness.
    std::vector<std::size_t> source_index;

    std::size_t size() const { return labels.size(); }
    std::span<const double> row(std::size_t i) const {
        return {features.data() + i * static_cast<std::size_t>(dim), static_cast<std::size_t>(dim)};
    }
};

struct DatasetSplit {
    int classes = 0;
    Samples train;
    Samples validation;
};

struct DatasetConfig {
    int classes = 4;
    int dim = 16;
    int train_size = 2048;
    int validation_size = 512;
    double separation = 2.0;

    void check() const;
};

/// Class-conditional unit-covariance Gaussians. Class c has mean
/// separation * u_c for a random unit vector u_c; labels cycle through the
/// classes so every split is balanced within one example.
DatasetSplit make_synthetic_dataset(std::uint64_t seed, const DatasetConfig& config);

} // namespace relnas
