// Copyright (C) 2026 The uatcv Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstdint>
#include <vector>

#include "oracles.hpp"
#include "uatcv/reference_ops.hpp"
#include "uatcv/symbolic.hpp"
#include "uatcv/tensor.hpp"

namespace testing {

// Small integer draws for shape sampling.
struct Dice {
    uatcv::SplitMix64 rng;
    explicit Dice(std::uint64_t seed) : rng(seed) {}
    std::size_t pick(std::size_t lo, std::size_t hi) { return lo + rng.next() % (hi - lo + 1); }
    double uni(double lo = -1, double hi = 1) { return rng.next_uniform(lo, hi); }
    std::vector<double> vec(std::size_t n) {
        std::vector<double> v(n);
        for (auto& e : v) e = uni();
        return v;
    }
};

inline uatcv::Tensor make(std::vector<uatcv::Dim> dims, std::vector<double> data) {
    return uatcv::Tensor(uatcv::TensorShape(std::move(dims)), std::move(data));
}

inline std::vector<double> raw(const uatcv::Tensor& t) { return {t.values().begin(), t.values().end()}; }
inline std::vector<double> raw(const uatcv::Matrix& m) { return {m.values().begin(), m.values().end()}; }
inline std::vector<double> raw(const uatcv::Vector& v) { return v.raw(); }

inline uatcv::Matrix mat(std::size_t r, std::size_t c, std::vector<double> v) { return uatcv::Matrix(r, c, std::move(v)); }

inline double maxdiff(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) return 1e300;
    double m = 0;
    for (std::size_t i = 0; i < a.size(); i++) {
        double d = a[i] > b[i] ? a[i] - b[i] : b[i] - a[i];
        m = d > m ? d : m;
    }
    return m;
}

// (C, H, W, D) storage to (C, D, H, W).
inline std::vector<double> cdhw(const std::vector<double>& v, std::size_t C, std::size_t H, std::size_t W,
                                std::size_t D) {
    std::vector<double> out(v.size());
    for (std::size_t c = 0; c < C; c++)
        for (std::size_t h = 0; h < H; h++)
            for (std::size_t w = 0; w < W; w++)
                for (std::size_t d = 0; d < D; d++) out[((c * D + d) * H + h) * W + w] = v[((c * H + h) * W + w) * D + d];
    return out;
}

inline uatcv::ref::AttnParams random_attn(Dice& dice, std::size_t d, std::size_t heads, std::size_t f) {
    uatcv::ref::AttnParams p;
    p.model_dim = d;
    p.heads = heads;
    p.w_q = mat(d, d, dice.vec(d * d));
    p.w_k = mat(d, d, dice.vec(d * d));
    p.w_v = mat(d, d, dice.vec(d * d));
    p.w_o = mat(d, d, dice.vec(d * d));
    p.w_2 = mat(d, f, dice.vec(d * f));
    p.w_3 = mat(f, d, dice.vec(f * d));
    p.b_2 = uatcv::Vector(dice.vec(f));
    p.b_3 = uatcv::Vector(dice.vec(d));
    return p;
}

inline oracle::Vec mha_of(const std::vector<double>& x, std::size_t n, const uatcv::ref::AttnParams& p) {
    return oracle::mha(x, n, p.model_dim, p.heads, raw(p.w_q), raw(p.w_k), raw(p.w_v), raw(p.w_o));
}

inline int act_code(uatcv::ref::Activation a) {
    return a == uatcv::ref::Activation::ReLU ? 0 : a == uatcv::ref::Activation::Identity ? 1 : 2;
}

inline oracle::Vec ffn_of(const std::vector<double>& x, std::size_t n, const uatcv::ref::AttnParams& p,
                          uatcv::ref::Activation a) {
    return oracle::ffn(x, n, p.model_dim, p.ffn_dim(), raw(p.w_2), raw(p.b_2), raw(p.w_3), raw(p.b_3), act_code(a));
}

// Blocks evaluated one after another from the bound primitive parameters:
// x <- x + W_{.,2} sigma(W_{.,1} x + b_{.,1}) + b_{.,2}.
inline oracle::Vec residual_seq(const uatcv::sym::Binding& b, std::size_t blocks, bool shared,
                                uatcv::ref::Activation a) {
    using uatcv::sym::layer_subscript;
    oracle::Vec x = raw(b.vectors.at("x'_i"));
    const std::size_t n = x.size();
    for (std::size_t k = 0; k < blocks; k++) {
        const std::string ws = layer_subscript(shared ? 0 : k), bs = layer_subscript(k);
        auto h = oracle::mv(raw(b.weights.at("W'_{" + ws + ",1}")), x, n, n);
        auto b1 = raw(b.vectors.at("b_{" + bs + ",1}"));
        for (std::size_t i = 0; i < n; i++) h[i] = oracle::act(act_code(a), h[i] + b1[i]);
        auto y = oracle::mv(raw(b.weights.at("W'_{" + ws + ",2}")), h, n, n);
        auto b2 = raw(b.vectors.at("b_{" + bs + ",2}"));
        for (std::size_t i = 0; i < n; i++) x[i] += y[i] + b2[i];
    }
    return x;
}

// m = MHA(x); x <- m + FFN(m), per block.
inline oracle::Vec transformer_seq(oracle::Vec x, std::size_t n, const std::vector<uatcv::ref::AttnParams>& ps,
                                   uatcv::ref::Activation a) {
    for (const auto& p : ps) {
        auto m = mha_of(x, n, p);
        auto f = ffn_of(m, n, p, a);
        for (std::size_t i = 0; i < m.size(); i++) x[i] = m[i] + f[i];
    }
    return x;
}

}  // namespace testing
