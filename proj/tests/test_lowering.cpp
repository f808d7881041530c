// Copyright (C) 2026 The uatcv Authors
// SPDX-License-Identifier: Apache-2.0
//

#include <map>

#include "doctest.h"
#include "support.hpp"
#include "uatcv/lowering.hpp"

using namespace uatcv;
using testing::Dice;
using testing::maxdiff;
using testing::raw;

namespace {

ref::ConvParams cp(std::size_t ci, std::size_t co, std::vector<std::size_t> k, std::size_t s, std::size_t p) {
    ref::ConvParams c;
    c.in_channels = ci;
    c.out_channels = co;
    c.kernel = std::move(k);
    c.stride = s;
    c.padding = p;
    return c;
}

}  // namespace

TEST_CASE("diamond small example") {
    CHECK(lowering::diamond(Matrix{{1, 2}, {3, 4}}, Vector{1, 1}) == Vector{4, 6});
    CHECK_THROWS_AS(lowering::diamond(Matrix{{1, 2}}, Vector{1, 1}), ShapeError);
}

TEST_CASE("conv2d lowering matches oracle") {
    Dice d(41);
    for (int t = 0; t < 100; t++) {
        std::size_t ci = d.pick(1, 3), co = d.pick(1, 3), s = d.pick(1, 2), pad = d.pick(0, 1);
        std::size_t kh = d.pick(1, 3), kw = d.pick(1, 3), H = d.pick(kh, 6), W = d.pick(kw, 6);
        auto xv = d.vec(ci * H * W), wv = d.vec(co * ci * kh * kw);
        auto p = cp(ci, co, {kh, kw}, s, pad);
        Tensor x = testing::make({{Axis::CI, ci}, {Axis::H, H}, {Axis::W, W}}, xv);
        auto f = ci == 1 ? lowering::lower_conv2d_1_O(x, p, Tensor(p.weight_shape(), wv))
                         : lowering::lower_conv2d_I_O(x, p, Tensor(p.weight_shape(), wv));
        std::size_t ho, wo;
        CHECK(maxdiff(raw(f.result()), oracle::conv2d(xv, ci, H, W, wv, co, kh, kw, s, pad, nullptr, ho, wo)) <= 1e-9);
        // the operator form on the raw input agrees too
        CHECK(maxdiff(raw(matvec(lowering::operator_matrix(f), Vector(xv))), raw(f.result())) <= 1e-12);
    }
}

TEST_CASE("single-channel lowering refuses several channels") {
    auto p = cp(2, 1, {1, 1}, 1, 0);
    Tensor x = zeros(TensorShape{{Axis::CI, 2}, {Axis::H, 2}, {Axis::W, 2}});
    CHECK_THROWS_AS(lowering::lower_conv2d_1_O(x, p, zeros(p.weight_shape())), ShapeError);
}

TEST_CASE("conv3d lowering matches oracle") {
    Dice d(42);
    for (int t = 0; t < 100; t++) {
        std::size_t ci = d.pick(1, 3), co = d.pick(1, 3), s = d.pick(1, 2), pad = d.pick(0, 1);
        std::size_t kh = d.pick(1, 3), kw = d.pick(1, 3), kd = d.pick(1, 3);
        std::size_t H = d.pick(kh, 5), W = d.pick(kw, 5), D = d.pick(kd, 4);
        auto xv = d.vec(ci * H * W * D), wv = d.vec(co * ci * kh * kw * kd);
        auto p = cp(ci, co, {kh, kw, kd}, s, pad);
        Tensor x = testing::make({{Axis::CI, ci}, {Axis::H, H}, {Axis::W, W}, {Axis::D, D}}, xv);
        auto f = lowering::lower_conv3d(x, p, Tensor(p.weight_shape(), wv));
        std::size_t ho, wo, dout;
        auto want = oracle::conv3d(xv, ci, H, W, D, wv, co, kh, kw, kd, s, pad, ho, wo, dout);
        CHECK(maxdiff(raw(f.result()), testing::cdhw(want, co, ho, wo, dout)) <= 1e-9);
    }
}

TEST_CASE("conv lowering structural sparsity") {
    Dice d(43);
    for (int t = 0; t < 50; t++) {
        const bool three = t % 2;
        std::size_t ci = d.pick(1, 3), co = d.pick(1, 3), s = d.pick(1, 2), pad = d.pick(0, 1);
        std::vector<std::size_t> k{d.pick(1, 3), d.pick(1, 3)};
        std::vector<Dim> dims{{Axis::CI, ci}, {Axis::H, d.pick(k[0], 5)}, {Axis::W, d.pick(k[1], 5)}};
        if (three) {
            k.push_back(d.pick(1, 3));
            dims.push_back({Axis::D, d.pick(k[2], 4)});
        }
        auto p = cp(ci, co, k, s, pad);
        TensorShape xs(dims);
        Tensor x = random_uniform(xs, d.rng.next(), -1, 1);
        // strictly positive kernel: no accidental zeros
        Tensor w = random_uniform(p.weight_shape(), d.rng.next(), 0.5, 1.0);
        auto f = three ? lowering::lower_conv3d(x, p, w) : lowering::lower_conv2d_I_O(x, p, w);
        std::size_t out_plane = 1, kvol = 1;
        for (std::size_t a = 0; a < k.size(); a++) {
            out_plane *= p.output_extent(a, xs.extent(a + 1));
            kvol *= k[a];
        }
        CHECK(count_nonzeros(f.weight) == co * out_plane * ci * kvol);
        std::map<std::size_t, std::size_t> uses;
        for (const auto& r : f.weight_map) uses[r.kernel_offset]++;
        CHECK(uses.size() == w.size());
        for (const auto& [off, n] : uses) CHECK(n == out_plane);
    }
}

TEST_CASE("conv lowering is linear in the kernel") {
    Dice d(44);
    for (int t = 0; t < 50; t++) {
        std::size_t ci = d.pick(1, 3), co = d.pick(1, 3);
        auto p = cp(ci, co, {d.pick(1, 3), d.pick(1, 3)}, d.pick(1, 2), d.pick(0, 1));
        Tensor x = random_uniform(TensorShape{{Axis::CI, ci}, {Axis::H, 5}, {Axis::W, 5}}, d.rng.next(), -1, 1);
        auto a = d.vec(p.weight_shape().size()), b = d.vec(a.size());
        double al = d.uni(), be = d.uni();
        std::vector<double> mix(a.size());
        for (std::size_t i = 0; i < a.size(); i++) mix[i] = al * a[i] + be * b[i];
        auto fa = lowering::lower_conv2d_I_O(x, p, Tensor(p.weight_shape(), a)).weight;
        auto fb = lowering::lower_conv2d_I_O(x, p, Tensor(p.weight_shape(), b)).weight;
        auto fm = lowering::lower_conv2d_I_O(x, p, Tensor(p.weight_shape(), mix)).weight;
        for (std::size_t r = 0; r < fm.rows(); r++)
            for (std::size_t c = 0; c < fm.cols(); c++) CHECK(std::abs(fm(r, c) - al * fa(r, c) - be * fb(r, c)) <= 1e-12);
    }
}

TEST_CASE("padding rows carry no source") {
    auto p = cp(1, 1, {3, 3}, 1, 1);
    Tensor x = random_uniform(TensorShape{{Axis::CI, 1}, {Axis::H, 3}, {Axis::W, 3}}, 1, -1, 1);
    auto f = lowering::lower_conv2d_1_O(x, p, random_uniform(p.weight_shape(), 2, -1, 1));
    CHECK(f.input.size() == 25);
    std::size_t pads = 0;
    for (std::size_t r = 0; r < 25; r++)
        if (!f.input_map[r].flat) {
            pads++;
            CHECK(f.input[r] == 0.0);
        }
    CHECK(pads == 16);
}

TEST_CASE("mean pool lowering") {
    Dice d(45);
    for (int t = 0; t < 100; t++) {
        std::size_t c = d.pick(1, 3), kh = d.pick(1, 3), kw = d.pick(1, 3), s = d.pick(1, 2);
        std::size_t H = d.pick(kh, 6), W = d.pick(kw, 6);
        auto xv = d.vec(c * H * W);
        auto f = lowering::lower_mean_pool(testing::make({{Axis::CI, c}, {Axis::H, H}, {Axis::W, W}}, xv), {kh, kw, s});
        std::size_t ho, wo;
        CHECK(maxdiff(raw(f.result()), oracle::mean_pool(xv, c, H, W, kh, kw, s, ho, wo)) <= 1e-12);
        for (std::size_t col = 0; col < f.weight.cols(); col++) {
            double sum = 0;
            for (std::size_t r = 0; r < f.weight.rows(); r++) sum += f.weight(r, col);
            CHECK(std::abs(sum - 1.0) <= 1e-12);
        }
    }
}

TEST_CASE("patchify lowering is a permutation") {
    Dice d(46);
    for (int t = 0; t < 50; t++) {
        std::size_t c = d.pick(1, 3), ph = d.pick(1, 3), pw = d.pick(1, 3);
        std::size_t H = ph * d.pick(1, 3), W = pw * d.pick(1, 3);
        auto xv = d.vec(c * H * W);
        auto f = lowering::lower_patchify(testing::make({{Axis::CI, c}, {Axis::H, H}, {Axis::W, W}}, xv), ph, pw);
        CHECK(raw(f.result()) == oracle::patchify(xv, c, H, W, ph, pw));
        CHECK(count_nonzeros(f.weight) == xv.size());
        for (std::size_t r = 0; r < f.weight.rows(); r++) {
            double sum = 0;
            for (std::size_t col = 0; col < f.weight.cols(); col++) sum += f.weight(r, col);
            CHECK(sum == 1.0);
        }
    }
}

TEST_CASE("ffn lowering matches oracle") {
    Dice d(47);
    for (auto a : {ref::Activation::ReLU, ref::Activation::Identity, ref::Activation::Logistic})
        for (int t = 0; t < 30; t++) {
            std::size_t dm = d.pick(1, 5), f = d.pick(1, 6), n = d.pick(1, 5);
            auto p = testing::random_attn(d, dm, 1, f);
            auto xv = d.vec(n * dm);
            auto l = lowering::lower_ffn(testing::mat(n, dm, xv), p, a);
            CHECK(maxdiff(raw(l.result()), testing::ffn_of(xv, n, p, a)) <= 1e-9);
        }
}

TEST_CASE("mha effective matrix reproduces attention at X only") {
    Dice d(48);
    for (int t = 0; t < 50; t++) {
        std::size_t heads = d.pick(1, 2), dm = heads * d.pick(1, 4), n = d.pick(2, 8);
        auto p = testing::random_attn(d, dm, heads, 1);
        auto xv = d.vec(n * dm);
        Matrix m = lowering::extract_mha_effective_matrix(testing::mat(n, dm, xv), p);
        CHECK(maxdiff(raw(matvec(m, Vector(xv))), testing::mha_of(xv, n, p)) <= 1e-9);
        auto f = lowering::lower_mha(testing::mat(n, dm, xv), p);
        CHECK(maxdiff(raw(f.result()), testing::mha_of(xv, n, p)) <= 1e-9);
        // a frozen M(X) is wrong at another input
        auto xp = xv;
        for (auto& v : xp) v += d.uni(-0.5, 0.5);
        CHECK(maxdiff(raw(matvec(m, Vector(xp))), testing::mha_of(xp, n, p)) > 1e-6);
    }
}

TEST_CASE("delete channel blocks") {
    auto p = cp(3, 2, {3, 3}, 1, 1);
    Tensor x = random_uniform(TensorShape{{Axis::CI, 3}, {Axis::H, 4}, {Axis::W, 4}}, 1, -1, 1);
    auto f = lowering::lower_conv2d_I_O(x, p, random_uniform(p.weight_shape(), 2, -1, 1));
    Matrix m = lowering::delete_channel_blocks(f, {1}, {0});
    CHECK(m.rows() == 2 * 36);
    CHECK(m.cols() == 16);
    CHECK(m(0, 0) == f.weight(0, 16));
    CHECK(m(36, 0) == f.weight(72, 16));
    CHECK_THROWS_AS(lowering::delete_channel_blocks(f, {3}, {}), ShapeError);
    CHECK_THROWS_AS(lowering::delete_channel_blocks(f, {}, {0, 1}), ShapeError);
}
