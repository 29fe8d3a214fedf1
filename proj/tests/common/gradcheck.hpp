#pragma once

#include "relnas/micronet.hpp"
#include "relnas/weight_store.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace testutil {

/// A genotype whose first seven op slots are a random permutation of all
/// operations, so every operation kind appears somewhere in the network.
inline relnas::Genotype genotype_with_all_ops(relnas::Rng& rng, const relnas::SearchSpaceScheme& scheme) {
    using namespace relnas;
    auto g = random_genotype(rng, scheme);
    std::vector<OperationKind> ops(kAllOperations.begin(), kAllOperations.end());
    rng.shuffle(ops);
    std::size_t next = 0;
    for (auto t : {CellType::Normal, CellType::Reduction}) {
        for (auto& blk : g.cell(t).blocks) {
            for (auto* op : {&blk.op1, &blk.op2}) {
                if (next < ops.size()) {
                    *op = ops[next++];
                }
            }
        }
    }
    return g;
}

struct GradCheck {
    double relative_error = 0.0;
    std::size_t parameters = 0;
    /// Coordinates whose probe at the requested step crossed a max-pool or ReLU
    /// switch and were re-probed at step / 100 and step / 10^4.
    std::size_t refined = 0;
    /// Coordinates that crossed a switch at every step; left out of the error.
    std::size_t unverified = 0;
};

/// Central differences over every scalar parameter against loss_and_gradient.
/// Error is ||analytic - numeric|| / max(||analytic||, ||numeric||). A difference
/// quotient is only used when the activation pattern at both probe points equals
/// the unperturbed one; otherwise the coordinate is retried at smaller steps.
inline GradCheck check_gradient(relnas::MicroNet& net, const relnas::Samples& data,
                                const std::vector<std::size_t>& rows, double step) {
    relnas::MicroNet::Tensors analytic;
    net.loss_and_gradient(data, rows, analytic);
    const auto base = net.activation_pattern(data, rows);
    double diff = 0.0;
    double na = 0.0;
    double nf = 0.0;
    GradCheck out;
    auto& params = net.parameters();
    for (std::size_t t = 0; t < params.size(); ++t) {
        for (std::size_t i = 0; i < params[t].size(); ++i) {
            ++out.parameters;
            const double orig = params[t][i];
            bool smooth = false;
            double numeric = 0.0;
            for (const double h : {step, step * 1e-2, step * 1e-4}) {
                params[t][i] = orig + h;
                const double up = net.mean_loss(data, rows);
                smooth = net.activation_pattern(data, rows) == base;
                params[t][i] = orig - h;
                const double down = net.mean_loss(data, rows);
                smooth = smooth && net.activation_pattern(data, rows) == base;
                params[t][i] = orig;
                if (smooth) {
                    numeric = (up - down) / (2.0 * h);
                    break;
                }
                if (h == step) {
                    ++out.refined;
                }
            }
            if (!smooth) {
                ++out.unverified;
                continue;
            }
            const double a = analytic[t][i];
            diff += (a - numeric) * (a - numeric);
            na += a * a;
            nf += numeric * numeric;
        }
    }
    const double scale = std::max({std::sqrt(na), std::sqrt(nf), 1e-300});
    out.relative_error = std::sqrt(diff) / scale;
    return out;
}

/// Gives the zero-initialized head and the biases random values so every
/// parameter receives a nonzero gradient.
inline void randomize_local(relnas::MicroNet& net, relnas::Rng& rng) {
    auto& params = net.parameters();
    for (std::size_t t = net.inherited_tensor_count(); t < params.size(); ++t) {
        for (auto& p : params[t]) {
            if (p == 0.0) {
                p = rng.uniform(-0.5, 0.5);
            }
        }
    }
}

} // namespace testutil
