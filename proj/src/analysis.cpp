// Copyright (C) 2026 The uatcv Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "uatcv/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace uatcv::analysis {

using net::LayerKind;
using net::Network;
using net::NetworkSpec;

std::vector<TermCount> count_uat_terms(const NetworkSpec& spec) {
    std::vector<TermCount> out;
    for (std::size_t k = 1; k <= spec.layers.size(); ++k) {
        const sym::CanonicalUAT form = net::expand_network(spec, k);
        out.push_back({k, form.N(), form.total_units()});
    }
    return out;
}

std::vector<RfEntry> receptive_field(const NetworkSpec& spec) {
    std::vector<RfEntry> out;
    const std::size_t axes = spec.input_shape.rank() == 4 ? 3 : 2;
    std::vector<std::size_t> rf(axes, 1), jump(axes, 1);
    auto step = [&](const std::vector<std::size_t>& k, std::size_t s) {
        for (std::size_t a = 0; a < axes; ++a) {
            rf[a] += (k[a] - 1) * jump[a];
            jump[a] *= s;
        }
    };
    for (std::size_t k = 0; k < spec.layers.size(); ++k) {
        const auto& l = spec.layers[k];
        switch (l.kind) {
            case LayerKind::Conv2d:
            case LayerKind::Conv3d: step(l.kernel, l.stride); break;
            case LayerKind::MeanPool: step(l.window, l.stride); break;
            case LayerKind::ResidualBlock:
                step(l.kernel, 1);
                step(l.kernel, 1);
                break;
            default:
                throw SpecError("layer " + std::to_string(k) + " (" + std::string(net::layer_kind_name(l.kind)) +
                                ") has no receptive field");
        }
        out.push_back({k, rf, jump});
    }
    return out;
}

// ---------------------------------------------------------------------------
// LoRA

namespace {

bool is_conv(LayerKind k) { return k == LayerKind::Conv2d || k == LayerKind::Conv3d; }

template <class Net>
auto kernel_of(Net& n, std::size_t layer, const std::string& target) -> decltype(&n.params[0].weight) {
    const auto& l = n.spec.layers.at(layer);
    auto& p = n.params.at(layer);
    if (is_conv(l.kind) && target == "weight") return &p.weight;
    if (l.kind == LayerKind::ResidualBlock && target == "weight1") return &p.weight;
    if (l.kind == LayerKind::ResidualBlock && target == "weight2") return &p.weight2;
    return nullptr;
}

Matrix* attn_matrix(ref::AttnParams& p, LayerKind kind, const std::string& target) {
    const bool attn = kind == LayerKind::Mha || kind == LayerKind::TransformerBlock;
    const bool ffn = kind == LayerKind::Ffn || kind == LayerKind::TransformerBlock;
    if (attn && target == "W_Q") return &p.w_q;
    if (attn && target == "W_K") return &p.w_k;
    if (attn && target == "W_V") return &p.w_v;
    if (attn && target == "W_O") return &p.w_o;
    if (ffn && target == "W_2") return &p.w_2;
    if (ffn && target == "W_3") return &p.w_3;
    return nullptr;
}

[[noreturn]] void no_target(const Network& n, std::size_t layer, const std::string& target) {
    throw SpecError("layer " + std::to_string(layer) + " (" +
                    std::string(net::layer_kind_name(n.spec.layers.at(layer).kind)) + ") has no matrix '" + target +
                    "'");
}

Matrix target_matrix(const Network& n, std::size_t layer, const std::string& target) {
    if (layer >= n.spec.layers.size()) throw SpecError("layer " + std::to_string(layer) + " does not exist");
    if (const Tensor* w = kernel_of(n, layer, target)) {
        const std::size_t co = w->shape().extent(0);
        return Matrix(co, w->size() / co, std::vector<double>(w->values().begin(), w->values().end()));
    }
    ref::AttnParams p = n.params[layer].attn;
    if (Matrix* m = attn_matrix(p, n.spec.layers[layer].kind, target)) return *m;
    no_target(n, layer, target);
}

void set_target(Network& n, std::size_t layer, const std::string& target, const Matrix& m) {
    auto& l = n.spec.layers[layer];
    auto& p = n.params[layer];
    if (Tensor* w = kernel_of(n, layer, target)) {
        std::vector<double> v(m.values().begin(), m.values().end());
        *w = Tensor(w->shape(), v);
        if (l.weights) l.weights = v;
        return;
    }
    if (Matrix* t = attn_matrix(p.attn, l.kind, target)) {
        *t = m;
        return;
    }
    no_target(n, layer, target);
}

void check_rank(std::size_t r, std::size_t m, std::size_t n) {
    if (r < 1) throw RankError("LoRA rank must be at least 1");
    if (r > std::min(m, n)) {
        throw RankError("LoRA rank " + std::to_string(r) + " exceeds min(" + std::to_string(m) + ", " +
                        std::to_string(n) + ")");
    }
}

}  // namespace

std::pair<std::size_t, std::size_t> lora_target_dims(const Network& n, std::size_t layer, const std::string& target) {
    const Matrix m = target_matrix(n, layer, target);
    return {m.rows(), m.cols()};
}

LoraDelta random_lora(const Network& n, std::size_t layer, const std::string& target, std::size_t rank,
                      std::uint64_t seed, double scale) {
    const auto [m, k] = lora_target_dims(n, layer, target);
    check_rank(rank, m, k);
    LoraDelta d;
    d.layer = layer;
    d.target = target;
    d.rank = rank;
    d.a = random_matrix(rank, k, derive_seed(seed, 1), -scale, scale);
    d.b = random_matrix(m, rank, derive_seed(seed, 2), -scale, scale);
    return d;
}

Network apply_lora(const Network& n, const LoraDelta& d) {
    const Matrix w = target_matrix(n, d.layer, d.target);
    check_rank(d.rank, w.rows(), w.cols());
    if (d.a.rows() != d.rank || d.b.cols() != d.rank) throw RankError("LoRA factors disagree with the stated rank");
    if (d.b.rows() != w.rows() || d.a.cols() != w.cols()) {
        throw ShapeError("LoRA factors give a " + std::to_string(d.b.rows()) + "x" + std::to_string(d.a.cols()) +
                         " update for a " + std::to_string(w.rows()) + "x" + std::to_string(w.cols()) + " matrix");
    }
    Network out = n;
    set_target(out, d.layer, d.target, add(w, matmul(d.b, d.a)));
    return out;
}

namespace {

// The lowered matrix the target enters, for a network whose target holds `m`.
std::optional<Matrix> lowered_target(const Network& n, std::size_t layer, const std::string& target, const Matrix& m,
                                     const Tensor& x) {
    Network t = n;
    set_target(t, layer, target, m);
    const auto& l = t.spec.layers[layer];
    const auto& p = t.params[layer];
    if (is_conv(l.kind) || l.kind == LayerKind::ResidualBlock) {
        const ref::ConvParams cp = net::conv_params(t.spec, layer);
        const Tensor& w = target == "weight2" ? p.weight2 : p.weight;
        const Tensor probe = zeros(t.spec.shapes[layer]);
        return cp.spatial_rank() == 3 ? lowering::lower_conv3d(probe, cp, w).weight
                                      : lowering::lower_conv2d_I_O(probe, cp, w).weight;
    }
    const Matrix xm = to_matrix(x);
    if (target == "W_2") return lowering::lower_ffn(xm, p.attn, t.spec.activation).hidden.weight;
    if (target == "W_3") return lowering::lower_ffn(xm, p.attn, t.spec.activation).output.weight;
    if (target == "W_V" || target == "W_O") return lowering::extract_mha_effective_matrix(xm, p.attn);
    return std::nullopt;
}

}  // namespace

LoraReport lora_equivalence_check(const Network& n, const LoraDelta& d, const Tensor& x) {
    const Network adapted = apply_lora(n, d);
    LoraReport r;
    const Matrix ba = matmul(d.b, d.a);
    r.rank_ba = numerical_rank(ba);

    const auto before = net::forward_trace(n, x);
    const auto after = net::forward_trace(adapted, x);
    r.upstream_unchanged = true;
    for (std::size_t k = 0; k <= d.layer; ++k) r.upstream_unchanged = r.upstream_unchanged && before[k] == after[k];
    r.layer_delta = max_abs_diff(before[d.layer + 1].values(), after[d.layer + 1].values());
    r.output_delta = max_abs_diff(before.back().values(), after.back().values());
    r.lowered_vs_direct = max_abs_diff(net::lowered_layer_output(adapted, d.layer, after[d.layer]),
                                       net::flat(after[d.layer + 1]));

    const Tensor& in = before[d.layer];
    const Matrix w = target_matrix(n, d.layer, d.target);
    const auto lw = lowered_target(n, d.layer, d.target, w, in);
    if (lw) {
        const auto lsum = lowered_target(n, d.layer, d.target, add(w, ba), in);
        const auto ldelta = lowered_target(n, d.layer, d.target, ba, in);
        r.linearity_diff = max_abs_diff(*lsum, add(*lw, *ldelta));
    }
    return r;
}

// ---------------------------------------------------------------------------
// Pruning

namespace {

// Drops indices along axis `axis` (0 or 1) of a tensor.
Tensor drop(const Tensor& t, std::size_t axis, const std::set<std::size_t>& idx) {
    std::vector<Dim> dims = t.shape().dims();
    const std::size_t outer = axis == 0 ? 1 : dims[0].extent;
    const std::size_t n = dims[axis].extent;
    const std::size_t inner = t.size() / (outer * n);
    std::vector<double> v;
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t c = 0; c < n; ++c) {
            if (idx.count(c)) continue;
            const auto src = t.values().subspan((o * n + c) * inner, inner);
            v.insert(v.end(), src.begin(), src.end());
        }
    dims[axis].extent = n - idx.size();
    return Tensor(TensorShape(dims), std::move(v));
}

Vector drop(const Vector& b, const std::set<std::size_t>& idx) {
    std::vector<double> v;
    for (std::size_t i = 0; i < b.size(); ++i)
        if (!idx.count(i)) v.push_back(b[i]);
    return Vector(std::move(v));
}

std::optional<std::size_t> consumer(const NetworkSpec& spec, std::size_t layer) {
    std::size_t j = layer + 1;
    while (j < spec.layers.size() && spec.layers[j].kind == LayerKind::MeanPool) ++j;
    if (j == spec.layers.size()) return std::nullopt;
    return j;
}

std::set<std::size_t> checked_mask(const Network& n, const PruneMask& m) {
    if (m.layer >= n.spec.layers.size()) throw SpecError("layer " + std::to_string(m.layer) + " does not exist");
    const auto& l = n.spec.layers[m.layer];
    if (!is_conv(l.kind)) throw SpecError("only convolution layers can be pruned");
    const std::set<std::size_t> idx(m.channels.begin(), m.channels.end());
    if (!idx.empty() && *idx.rbegin() >= l.out_channels) {
        throw SpecError("channel " + std::to_string(*idx.rbegin()) + " out of range for " +
                        std::to_string(l.out_channels) + " channels");
    }
    if (idx.size() >= l.out_channels) throw SpecError("pruning would remove every channel of layer " + std::to_string(m.layer));
    if (auto j = consumer(n.spec, m.layer); j && !is_conv(n.spec.layers[*j].kind)) {
        throw SpecError("layer " + std::to_string(*j) + " (" + std::string(net::layer_kind_name(n.spec.layers[*j].kind)) +
                        ") consumes the pruned channels and cannot shrink with them");
    }
    return idx;
}

double norm_of_channel(const Tensor& w, std::size_t o) {
    const std::size_t per = w.size() / w.shape().extent(0);
    double s = 0;
    for (double v : w.values().subspan(o * per, per)) s += v * v;
    return std::sqrt(s);
}

}  // namespace

std::vector<std::size_t> channels_by_magnitude(const Network& n, std::size_t layer) {
    if (layer >= n.spec.layers.size() || !is_conv(n.spec.layers[layer].kind)) {
        throw SpecError("layer " + std::to_string(layer) + " is not a convolution");
    }
    const Tensor& w = n.params[layer].weight;
    std::vector<std::size_t> order(w.shape().extent(0));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return norm_of_channel(w, a) < norm_of_channel(w, b); });
    return order;
}

PruneMask magnitude_mask(const Network& n, std::size_t layer, double threshold) {
    PruneMask m{layer, {}};
    for (std::size_t o : channels_by_magnitude(n, layer))
        if (norm_of_channel(n.params[layer].weight, o) <= threshold) m.channels.push_back(o);
    std::sort(m.channels.begin(), m.channels.end());
    return m;
}

Network prune(const Network& n, const PruneMask& m) {
    const std::set<std::size_t> idx = checked_mask(n, m);
    Network out = n;
    auto& l = out.spec.layers[m.layer];
    auto& p = out.params[m.layer];
    p.weight = drop(p.weight, 0, idx);
    if (p.bias) p.bias = drop(*p.bias, idx);
    l.out_channels -= idx.size();
    if (l.weights) l.weights = std::vector<double>(p.weight.values().begin(), p.weight.values().end());
    if (l.bias_values) l.bias_values = p.bias->raw();
    if (auto j = consumer(n.spec, m.layer)) {
        auto& lj = out.spec.layers[*j];
        auto& pj = out.params[*j];
        pj.weight = drop(pj.weight, 1, idx);
        lj.in_channels -= idx.size();
        if (lj.weights) lj.weights = std::vector<double>(pj.weight.values().begin(), pj.weight.values().end());
    }
    net::validate(out.spec);
    return out;
}

double prune_commutation_diff(const Network& n, const PruneMask& m) {
    const std::set<std::size_t> idx = checked_mask(n, m);
    const Network pruned = prune(n, m);
    const std::vector<std::size_t> chans(idx.begin(), idx.end());
    auto lowered = [](const Network& net, std::size_t k) {
        return net::lower_layer(net, k, zeros(net.spec.shapes[k])).front();
    };
    auto compare = [](const Matrix& a, const Matrix& b) {
        if (a.rows() != b.rows() || a.cols() != b.cols()) throw InternalError("pruned lowering has unexpected dimensions");
        return max_abs_diff(a, b);
    };
    double diff = compare(lowering::delete_channel_blocks(lowered(n, m.layer), {}, chans),
                          lowered(pruned, m.layer).weight);
    if (auto j = consumer(n.spec, m.layer)) {
        diff = std::max(diff, compare(lowering::delete_channel_blocks(lowered(n, *j), chans, {}),
                                      lowered(pruned, *j).weight));
    }
    return diff;
}

PruneImpact prune_impact(const Network& n, const PruneMask& m, const std::vector<Tensor>& inputs) {
    const std::set<std::size_t> idx = checked_mask(n, m);
    const Network pruned = prune(n, m);
    PruneImpact r;
    double total = 0;
    std::size_t count = 0;
    for (const auto& x : inputs) {
        const Tensor y = net::forward(n, x);
        const Tensor yp = net::forward(pruned, x);
        Tensor ref = y;
        if (!(y.shape() == yp.shape())) ref = drop(y, 0, idx);
        if (!(ref.shape() == yp.shape())) throw InternalError("pruned output shape does not line up");
        for (std::size_t i = 0; i < yp.size(); ++i) {
            const double dv = std::abs(ref.values()[i] - yp.values()[i]);
            r.max_deviation = std::max(r.max_deviation, dv);
            total += dv;
        }
        count += yp.size();
        ++r.samples;
    }
    r.mean_deviation = count ? total / static_cast<double>(count) : 0.0;
    return r;
}

}  // namespace uatcv::analysis
