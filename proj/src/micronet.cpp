#include "relnas/micronet.hpp"

#include "relnas/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

namespace relnas {

namespace {

// y_i = sum_t P[i, t] * x[i + (t - r) * dilation], zero outside the vector.
void banded_forward(const double* p, int w, int k, int dilation, const double* x, double* y) {
    const int r = (k - 1) / 2;
    for (int i = 0; i < w; ++i) {
        double s = 0.0;
        for (int t = 0; t < k; ++t) {
            const int j = i + (t - r) * dilation;
            if (j >= 0 && j < w) {
                s += p[i * k + t] * x[j];
            }
        }
        y[i] = s;
    }
}

void banded_backward(const double* p, int w, int k, int dilation, const double* x, const double* gy,
                     double* gp, double* gx) {
    const int r = (k - 1) / 2;
    for (int i = 0; i < w; ++i) {
        for (int t = 0; t < k; ++t) {
            const int j = i + (t - r) * dilation;
            if (j >= 0 && j < w) {
                gp[i * k + t] += gy[i] * x[j];
                gx[j] += gy[i] * p[i * k + t];
            }
        }
    }
}

void relu_inplace(std::vector<double>& v) {
    for (auto& x : v) {
        x = x > 0.0 ? x : 0.0;
    }
}

bool is_sep(OperationKind op) { return op == OperationKind::SepConv3 || op == OperationKind::SepConv5; }
bool is_dil(OperationKind op) { return op == OperationKind::DilConv3 || op == OperationKind::DilConv5; }

std::vector<double> uniform_tensor(Rng& rng, std::size_t n, std::size_t fan_in) {
    const double a = std::sqrt(3.0 / static_cast<double>(fan_in));
    std::vector<double> t(n);
    for (auto& v : t) {
        v = rng.uniform(-a, a);
    }
    return t;
}

} // namespace

std::vector<CellType> MacroConfig::layout() const {
    std::vector<CellType> cells;
    for (int stage = 0; stage < 3; ++stage) {
        for (int i = 0; i < stacking; ++i) {
            cells.push_back(CellType::Normal);
        }
        if (stage < 2) {
            cells.push_back(CellType::Reduction);
        }
    }
    return cells;
}

void MacroConfig::check() const {
    if (stacking < 1) {
        throw ConfigError("macro stacking must be at least 1");
    }
    if (width < 2 || width % 2 != 0) {
        throw ConfigError("macro width must be even and at least 2, got " + std::to_string(width));
    }
}

double TrainHyper::lr(int epoch) const {
    if (epoch >= t_max) {
        return 0.0;
    }
    return 0.5 * lr0 * (1.0 + std::cos(std::numbers::pi * epoch / t_max));
}

void TrainHyper::check() const {
    if (!(lr0 >= 0.0) || t_max < 1 || batch_size < 1 || !(weight_decay >= 0.0) || !(grad_clip >= 0.0)) {
        throw ConfigError("training hyperparameters out of range");
    }
}

ParamShape operation_shape(OperationKind op, int width) {
    const auto w = static_cast<std::size_t>(width);
    const auto k = static_cast<std::size_t>(kernel_size(op));
    if (is_sep(op)) {
        return {{2, w, k}, k};
    }
    if (is_dil(op)) {
        return {{w, k}, k};
    }
    return {};
}

ShapeRegistry micronet_shapes(const SearchSpaceScheme& scheme, const MacroConfig& macro) {
    ShapeRegistry reg;
    for (const auto& key : enumerate_keys(scheme)) {
        reg.emplace(key, operation_shape(key.op, macro.cell_width(key.cell)));
    }
    return reg;
}

std::size_t micronet_local_parameter_count(const SearchSpaceScheme& scheme, const MacroConfig& macro,
                                           int input_dim, int classes) {
    const auto d = static_cast<std::size_t>(macro.width);
    const auto b = static_cast<std::size_t>(scheme.blocks_per_cell);
    std::size_t n = d * static_cast<std::size_t>(input_dim) + d;
    for (auto t : macro.layout()) {
        n += d * b * static_cast<std::size_t>(macro.cell_width(t)) + d;
    }
    n += static_cast<std::size_t>(classes) * d + static_cast<std::size_t>(classes);
    return n;
}

MicroNet::MicroNet(const Genotype& genotype, const MacroConfig& macro, InheritedWeights weights,
                   int input_dim, int classes, std::uint64_t init_seed)
    : macro_(macro), input_dim_(input_dim), classes_(classes),
      blocks_(static_cast<int>(genotype.normal.blocks.size())) {
    macro_.check();
    if (input_dim < 1 || classes < 2) {
        throw ShapeMismatch("micro-network needs input_dim >= 1 and classes >= 2");
    }
    std::map<WeightKey, int> tensor_of;
    for (auto& [key, entry] : weights) {
        const auto expected = operation_shape(key.op, macro_.cell_width(key.cell));
        if (entry.shape != expected.dims || entry.params.size() != expected.numel()) {
            throw ShapeMismatch("inherited entry " + key.text() + " does not match the operation shape");
        }
        tensor_of[key] = static_cast<int>(params_.size());
        inherited_keys_.push_back(key);
        inherited_shapes_.push_back(entry.shape);
        inherited_versions_.push_back(entry.version);
        params_.push_back(std::move(entry.params));
    }
    for (const auto& key : genotype_keys(genotype)) {
        if (!tensor_of.count(key)) {
            throw ShapeMismatch("inherited weights do not cover " + key.text());
        }
    }

    Rng rng(init_seed);
    const auto d = static_cast<std::size_t>(macro_.width);
    auto add = [this](std::vector<double> t) {
        params_.push_back(std::move(t));
        return static_cast<int>(params_.size()) - 1;
    };
    stem_w_ = add(uniform_tensor(rng, d * static_cast<std::size_t>(input_dim), static_cast<std::size_t>(input_dim)));
    stem_b_ = add(std::vector<double>(d, 0.0));

    for (auto type : macro_.layout()) {
        const auto& cell = genotype.cell(type);
        CellPlan plan;
        plan.type = type;
        plan.width = macro_.cell_width(type);
        for (std::size_t b = 0; b < cell.blocks.size(); ++b) {
            const int node = static_cast<int>(b) + 2;
            const auto& blk = cell.blocks[b];
            for (auto [pre, op] : {std::pair{blk.pre1, blk.op1}, std::pair{blk.pre2, blk.op2}}) {
                const WeightKey key{type, pre, node, op};
                const int t = params_[static_cast<std::size_t>(tensor_of.at(key))].empty() ? -1 : tensor_of.at(key);
                plan.edges.push_back({pre, op, t});
            }
        }
        const auto concat = static_cast<std::size_t>(blocks_) * static_cast<std::size_t>(plan.width);
        plan.proj_w = add(uniform_tensor(rng, d * concat, concat));
        plan.proj_b = add(std::vector<double>(d, 0.0));
        cells_.push_back(std::move(plan));
    }
    // Zero head: an untrained network predicts the uniform distribution.
    head_w_ = add(std::vector<double>(static_cast<std::size_t>(classes) * d, 0.0));
    head_b_ = add(std::vector<double>(static_cast<std::size_t>(classes), 0.0));
}

std::size_t MicroNet::parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : params_) {
        n += t.size();
    }
    return n;
}

MicroNet::Tensors MicroNet::zero_like() const {
    Tensors g(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
        g[i].assign(params_[i].size(), 0.0);
    }
    return g;
}

void MicroNet::edge_forward(const EdgePlan& e, int w, const std::vector<double>& x, EdgeCache& c) const {
    const auto uw = static_cast<std::size_t>(w);
    const double* p = e.tensor >= 0 ? params_[static_cast<std::size_t>(e.tensor)].data() : nullptr;
    c.y.assign(uw, 0.0);
    switch (e.op) {
    case OperationKind::Identity:
        c.y = x;
        break;
    case OperationKind::MaxPool3:
        c.argmax.assign(uw, 0);
        for (int i = 0; i < w; ++i) {
            const int lo = std::max(0, i - 1);
            const int hi = std::min(w - 1, i + 1);
            int best = lo;
            for (int j = lo + 1; j <= hi; ++j) {
                if (x[static_cast<std::size_t>(j)] > x[static_cast<std::size_t>(best)]) {
                    best = j;
                }
            }
            c.argmax[static_cast<std::size_t>(i)] = best;
            c.y[static_cast<std::size_t>(i)] = x[static_cast<std::size_t>(best)];
        }
        break;
    case OperationKind::AvgPool3:
        for (int i = 0; i < w; ++i) {
            const int lo = std::max(0, i - 1);
            const int hi = std::min(w - 1, i + 1);
            double s = 0.0;
            for (int j = lo; j <= hi; ++j) {
                s += x[static_cast<std::size_t>(j)];
            }
            c.y[static_cast<std::size_t>(i)] = s / (hi - lo + 1);
        }
        break;
    case OperationKind::SepConv3:
    case OperationKind::SepConv5: {
        const int k = kernel_size(e.op);
        c.z1.resize(uw);
        c.z2.resize(uw);
        banded_forward(p, w, k, 1, x.data(), c.z1.data());
        c.h1 = c.z1;
        relu_inplace(c.h1);
        banded_forward(p + w * k, w, k, 1, c.h1.data(), c.z2.data());
        c.y = c.z2;
        relu_inplace(c.y);
        break;
    }
    case OperationKind::DilConv3:
    case OperationKind::DilConv5: {
        const int k = kernel_size(e.op);
        c.z1.resize(uw);
        banded_forward(p, w, k, 2, x.data(), c.z1.data());
        c.y = c.z1;
        relu_inplace(c.y);
        break;
    }
    }
}

void MicroNet::edge_backward(const EdgePlan& e, int w, const std::vector<double>& x, const EdgeCache& c,
                             const std::vector<double>& gy, Tensors& grad, std::vector<double>& gx) const {
    const auto uw = static_cast<std::size_t>(w);
    switch (e.op) {
    case OperationKind::Identity:
        for (std::size_t i = 0; i < uw; ++i) {
            gx[i] += gy[i];
        }
        break;
    case OperationKind::MaxPool3:
        for (std::size_t i = 0; i < uw; ++i) {
            gx[static_cast<std::size_t>(c.argmax[i])] += gy[i];
        }
        break;
    case OperationKind::AvgPool3:
        for (int i = 0; i < w; ++i) {
            const int lo = std::max(0, i - 1);
            const int hi = std::min(w - 1, i + 1);
            const double share = gy[static_cast<std::size_t>(i)] / (hi - lo + 1);
            for (int j = lo; j <= hi; ++j) {
                gx[static_cast<std::size_t>(j)] += share;
            }
        }
        break;
    case OperationKind::SepConv3:
    case OperationKind::SepConv5: {
        const int k = kernel_size(e.op);
        const double* p = params_[static_cast<std::size_t>(e.tensor)].data();
        double* gp = grad[static_cast<std::size_t>(e.tensor)].data();
        std::vector<double> gz2(uw), gh1(uw, 0.0);
        for (std::size_t i = 0; i < uw; ++i) {
            gz2[i] = c.z2[i] > 0.0 ? gy[i] : 0.0;
        }
        banded_backward(p + w * k, w, k, 1, c.h1.data(), gz2.data(), gp + w * k, gh1.data());
        for (std::size_t i = 0; i < uw; ++i) {
            gh1[i] = c.z1[i] > 0.0 ? gh1[i] : 0.0;
        }
        banded_backward(p, w, k, 1, x.data(), gh1.data(), gp, gx.data());
        break;
    }
    case OperationKind::DilConv3:
    case OperationKind::DilConv5: {
        const int k = kernel_size(e.op);
        const double* p = params_[static_cast<std::size_t>(e.tensor)].data();
        double* gp = grad[static_cast<std::size_t>(e.tensor)].data();
        std::vector<double> gz(uw);
        for (std::size_t i = 0; i < uw; ++i) {
            gz[i] = c.z1[i] > 0.0 ? gy[i] : 0.0;
        }
        banded_backward(p, w, k, 2, x.data(), gz.data(), gp, gx.data());
        break;
    }
    }
}

void MicroNet::cell_forward(const CellPlan& plan, const std::vector<double>& in0,
                            const std::vector<double>& in1, CellCache& cache,
                            std::vector<double>& out) const {
    const int w = plan.width;
    const auto uw = static_cast<std::size_t>(w);
    const auto nodes = static_cast<std::size_t>(blocks_) + 2;
    cache.nodes.resize(nodes);
    cache.edges.resize(plan.edges.size());
    if (plan.type == CellType::Reduction) {
        cache.nodes[0].resize(uw);
        cache.nodes[1].resize(uw);
        for (std::size_t i = 0; i < uw; ++i) {
            cache.nodes[0][i] = in0[2 * i];
            cache.nodes[1][i] = in1[2 * i];
        }
    } else {
        cache.nodes[0] = in0;
        cache.nodes[1] = in1;
    }
    for (int b = 0; b < blocks_; ++b) {
        auto& node = cache.nodes[static_cast<std::size_t>(b) + 2];
        node.assign(uw, 0.0);
        for (int j = 0; j < 2; ++j) {
            const auto idx = static_cast<std::size_t>(2 * b + j);
            const auto& e = plan.edges[idx];
            edge_forward(e, w, cache.nodes[static_cast<std::size_t>(e.source)], cache.edges[idx]);
            for (std::size_t i = 0; i < uw; ++i) {
                node[i] += cache.edges[idx].y[i];
            }
        }
    }
    cache.concat.clear();
    for (std::size_t n = 2; n < nodes; ++n) {
        cache.concat.insert(cache.concat.end(), cache.nodes[n].begin(), cache.nodes[n].end());
    }
    const auto d = static_cast<std::size_t>(macro_.width);
    const auto m = cache.concat.size();
    const auto& pw = params_[static_cast<std::size_t>(plan.proj_w)];
    const auto& pb = params_[static_cast<std::size_t>(plan.proj_b)];
    out.resize(d);
    for (std::size_t o = 0; o < d; ++o) {
        double s = pb[o];
        for (std::size_t i = 0; i < m; ++i) {
            s += pw[o * m + i] * cache.concat[i];
        }
        out[o] = s;
    }
}

void MicroNet::cell_backward(const CellPlan& plan, const CellCache& cache, const std::vector<double>& gout,
                             std::vector<double>& gin0, std::vector<double>& gin1, Tensors& grad) const {
    const int w = plan.width;
    const auto uw = static_cast<std::size_t>(w);
    const auto d = static_cast<std::size_t>(macro_.width);
    const auto m = cache.concat.size();
    const auto& pw = params_[static_cast<std::size_t>(plan.proj_w)];
    auto& gpw = grad[static_cast<std::size_t>(plan.proj_w)];
    auto& gpb = grad[static_cast<std::size_t>(plan.proj_b)];
    std::vector<double> gconcat(m, 0.0);
    for (std::size_t o = 0; o < d; ++o) {
        gpb[o] += gout[o];
        for (std::size_t i = 0; i < m; ++i) {
            gpw[o * m + i] += gout[o] * cache.concat[i];
            gconcat[i] += pw[o * m + i] * gout[o];
        }
    }
    const auto nodes = static_cast<std::size_t>(blocks_) + 2;
    std::vector<std::vector<double>> gnodes(nodes, std::vector<double>(uw, 0.0));
    for (std::size_t n = 2; n < nodes; ++n) {
        std::copy_n(gconcat.begin() + static_cast<std::ptrdiff_t>((n - 2) * uw), uw, gnodes[n].begin());
    }
    // Successors always have higher indices, so a node's gradient is complete
    // once every later node has been processed.
    for (int b = blocks_ - 1; b >= 0; --b) {
        const auto node = static_cast<std::size_t>(b) + 2;
        for (int j = 1; j >= 0; --j) {
            const auto idx = static_cast<std::size_t>(2 * b + j);
            const auto& e = plan.edges[idx];
            const auto src = static_cast<std::size_t>(e.source);
            edge_backward(e, w, cache.nodes[src], cache.edges[idx], gnodes[node], grad, gnodes[src]);
        }
    }
    if (plan.type == CellType::Reduction) {
        for (std::size_t i = 0; i < uw; ++i) {
            gin0[2 * i] += gnodes[0][i];
            gin1[2 * i] += gnodes[1][i];
        }
    } else {
        for (std::size_t i = 0; i < uw; ++i) {
            gin0[i] += gnodes[0][i];
            gin1[i] += gnodes[1][i];
        }
    }
}

void MicroNet::forward(std::span<const double> x, Trace& trace) const {
    const auto d = static_cast<std::size_t>(macro_.width);
    const auto in = static_cast<std::size_t>(input_dim_);
    if (x.size() != in) {
        throw ShapeMismatch("input has " + std::to_string(x.size()) + " features, network expects " +
                            std::to_string(in));
    }
    trace.states.resize(cells_.size() + 2);
    trace.cells.resize(cells_.size());
    const auto& sw = params_[static_cast<std::size_t>(stem_w_)];
    const auto& sb = params_[static_cast<std::size_t>(stem_b_)];
    auto& stem = trace.states[0];
    stem.resize(d);
    for (std::size_t o = 0; o < d; ++o) {
        double s = sb[o];
        for (std::size_t i = 0; i < in; ++i) {
            s += sw[o * in + i] * x[i];
        }
        stem[o] = s;
    }
    trace.states[1] = stem;
    for (std::size_t c = 0; c < cells_.size(); ++c) {
        cell_forward(cells_[c], trace.states[c], trace.states[c + 1], trace.cells[c], trace.states[c + 2]);
    }
    const auto& feat = trace.states.back();
    const auto& hw = params_[static_cast<std::size_t>(head_w_)];
    const auto& hb = params_[static_cast<std::size_t>(head_b_)];
    const auto k = static_cast<std::size_t>(classes_);
    trace.logits.resize(k);
    for (std::size_t o = 0; o < k; ++o) {
        double s = hb[o];
        for (std::size_t i = 0; i < d; ++i) {
            s += hw[o * d + i] * feat[i];
        }
        trace.logits[o] = s;
    }
}

namespace {

std::vector<double> softmax(const std::vector<double>& logits) {
    const double mx = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double z = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        p[i] = std::exp(logits[i] - mx);
        z += p[i];
    }
    for (auto& v : p) {
        v /= z;
    }
    return p;
}

double cross_entropy(const std::vector<double>& logits, int label) {
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double l : logits) {
        z += std::exp(l - mx);
    }
    return std::log(z) + mx - logits[static_cast<std::size_t>(label)];
}

} // namespace

void MicroNet::backward(std::span<const double> x, const Trace& trace, int label, Tensors& grad) const {
    const auto d = static_cast<std::size_t>(macro_.width);
    const auto k = static_cast<std::size_t>(classes_);
    auto glogits = softmax(trace.logits);
    glogits[static_cast<std::size_t>(label)] -= 1.0;

    const auto& feat = trace.states.back();
    const auto& hw = params_[static_cast<std::size_t>(head_w_)];
    auto& ghw = grad[static_cast<std::size_t>(head_w_)];
    auto& ghb = grad[static_cast<std::size_t>(head_b_)];
    std::vector<std::vector<double>> gstates(trace.states.size(), std::vector<double>(d, 0.0));
    auto& gfeat = gstates.back();
    for (std::size_t o = 0; o < k; ++o) {
        ghb[o] += glogits[o];
        for (std::size_t i = 0; i < d; ++i) {
            ghw[o * d + i] += glogits[o] * feat[i];
            gfeat[i] += hw[o * d + i] * glogits[o];
        }
    }
    for (std::size_t c = cells_.size(); c-- > 0;) {
        cell_backward(cells_[c], trace.cells[c], gstates[c + 2], gstates[c], gstates[c + 1], grad);
    }
    const auto in = static_cast<std::size_t>(input_dim_);
    auto& gsw = grad[static_cast<std::size_t>(stem_w_)];
    auto& gsb = grad[static_cast<std::size_t>(stem_b_)];
    for (std::size_t o = 0; o < d; ++o) {
        const double g = gstates[0][o] + gstates[1][o];
        gsb[o] += g;
        for (std::size_t i = 0; i < in; ++i) {
            gsw[o * in + i] += g * x[i];
        }
    }
}

std::vector<double> MicroNet::logits(std::span<const double> x) const {
    Trace trace;
    forward(x, trace);
    return trace.logits;
}

std::vector<double> MicroNet::probabilities(std::span<const double> x) const {
    return softmax(logits(x));
}

double MicroNet::mean_loss(const Samples& data, std::span<const std::size_t> rows) const {
    Trace trace;
    double total = 0.0;
    const std::size_t n = rows.empty() ? data.size() : rows.size();
    for (std::size_t r = 0; r < n; ++r) {
        const std::size_t i = rows.empty() ? r : rows[r];
        forward(data.row(i), trace);
        total += cross_entropy(trace.logits, data.labels[i]);
    }
    return total / static_cast<double>(n);
}

std::uint64_t MicroNet::activation_pattern(const Samples& data, std::span<const std::size_t> rows) const {
    Trace trace;
    std::string bits;
    for (std::size_t i : rows) {
        forward(data.row(i), trace);
        for (const auto& cell : trace.cells) {
            for (const auto& e : cell.edges) {
                for (double z : e.z1) {
                    bits.push_back(z > 0.0 ? '1' : '0');
                }
                for (double z : e.z2) {
                    bits.push_back(z > 0.0 ? '1' : '0');
                }
                for (int a : e.argmax) {
                    bits.push_back(static_cast<char>('a' + a % 16));
                }
                bits.push_back('|');
            }
        }
    }
    return fnv1a(bits);
}

double MicroNet::loss_and_gradient(const Samples& data, std::span<const std::size_t> rows,
                                   Tensors& grad) const {
    grad = zero_like();
    Trace trace;
    double total = 0.0;
    for (std::size_t i : rows) {
        forward(data.row(i), trace);
        total += cross_entropy(trace.logits, data.labels[i]);
        backward(data.row(i), trace, data.labels[i], grad);
    }
    const double scale = 1.0 / static_cast<double>(rows.size());
    for (auto& t : grad) {
        for (auto& g : t) {
            g *= scale;
        }
    }
    return total * scale;
}

void MicroNet::sgd_step(Tensors& grad, double lr, const TrainHyper& hyper) {
    if (hyper.grad_clip > 0.0) {
        double sq = 0.0;
        for (const auto& t : grad) {
            for (double g : t) {
                sq += g * g;
            }
        }
        const double norm = std::sqrt(sq);
        if (norm > hyper.grad_clip) {
            const double scale = hyper.grad_clip / norm;
            for (auto& t : grad) {
                for (auto& g : t) {
                    g *= scale;
                }
            }
        }
    }
    for (std::size_t t = 0; t < params_.size(); ++t) {
        auto& p = params_[t];
        const auto& g = grad[t];
        for (std::size_t i = 0; i < p.size(); ++i) {
            p[i] -= lr * (g[i] + hyper.weight_decay * p[i]);
        }
    }
}

double MicroNet::train_epoch(const Samples& train, const TrainHyper& hyper, int epoch_index, Rng& shuffle) {
    const double lr = hyper.lr(epoch_index);
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle.shuffle(order);
    Tensors grad;
    double total = 0.0;
    const auto batch = static_cast<std::size_t>(hyper.batch_size);
    for (std::size_t start = 0; start < order.size(); start += batch) {
        const std::size_t n = std::min(batch, order.size() - start);
        const std::span<const std::size_t> rows(order.data() + start, n);
        const double loss = loss_and_gradient(train, rows, grad);
        if (!std::isfinite(loss)) {
            throw NonFiniteLoss("training loss became non-finite at epoch " + std::to_string(epoch_index));
        }
        total += loss * static_cast<double>(n);
        if (lr > 0.0) {
            sgd_step(grad, lr, hyper);
        }
    }
    return total / static_cast<double>(order.size());
}

InheritedWeights MicroNet::trained_weights() const {
    InheritedWeights out;
    for (std::size_t i = 0; i < inherited_keys_.size(); ++i) {
        out.emplace(inherited_keys_[i], WeightEntry{inherited_shapes_[i], params_[i], inherited_versions_[i]});
    }
    return out;
}

} // namespace relnas
