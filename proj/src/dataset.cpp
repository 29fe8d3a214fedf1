#include "relnas/dataset.hpp"

#include "relnas/errors.hpp"
#include "relnas/rng.hpp"

#include <cmath>
#include <string>

namespace relnas {

void DatasetConfig::check() const {
    if (classes < 2) {
        throw ConfigError("dataset needs at least 2 classes, got " + std::to_string(classes));
    }
    if (dim < 1 || train_size < 1 || validation_size < 1) {
        throw ConfigError("dataset dimensions and sizes must be positive");
    }
    if (!(separation >= 0.0)) {
        throw ConfigError("dataset separation must be non-negative");
    }
}

DatasetSplit make_synthetic_dataset(std::uint64_t seed, const DatasetConfig& config) {
    config.check();
    Rng rng = substream(seed, "dataset");
    const auto dim = static_cast<std::size_t>(config.dim);

    std::vector<std::vector<double>> means(static_cast<std::size_t>(config.classes));
    for (auto& mean : means) {
        mean.resize(dim);
        double norm = 0.0;
        do {
            norm = 0.0;
            for (auto& v : mean) {
                v = rng.normal();
                norm += v * v;
            }
        } while (norm == 0.0);
        norm = std::sqrt(norm);
        for (auto& v : mean) {
            v *= config.separation / norm;
        }
    }

    std::size_t next_index = 0;
    auto draw = [&](int count) {
        Samples s;
        s.dim = config.dim;
        std::vector<int> labels(static_cast<std::size_t>(count));
        for (int i = 0; i < count; ++i) {
            labels[static_cast<std::size_t>(i)] = i % config.classes;
        }
        rng.shuffle(labels);
        for (int label : labels) {
            const auto& mean = means[static_cast<std::size_t>(label)];
            for (std::size_t k = 0; k < dim; ++k) {
                s.features.push_back(mean[k] + rng.normal());
            }
            s.labels.push_back(label);
            s.source_index.push_back(next_index++);
        }
        return s;
    };

    DatasetSplit split;
    split.classes = config.classes;
    split.train = draw(config.train_size);
    split.validation = draw(config.validation_size);
    return split;
}

} // namespace relnas
