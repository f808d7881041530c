// Copyright (C) 2026 The uatcv Authors
// SPDX-License-Identifier: Apache-2.0
//

#include <cmath>
#include <limits>

#include "doctest.h"
#include "support.hpp"
#include "uatcv/tensor.hpp"

using namespace uatcv;
using testing::Dice;

TEST_CASE("zeros fills every entry") {
    Tensor z = zeros(TensorShape{{Axis::H, 2}, {Axis::W, 2}});
    CHECK(z.size() == 4);
    for (double v : z.values()) CHECK(v == 0.0);
}

TEST_CASE("zero extent is a shape error") {
    CHECK_THROWS_AS(TensorShape({{Axis::H, 0}, {Axis::W, 2}}), ShapeError);
    CHECK_THROWS_AS(TensorShape({{Axis::H, 2}, {Axis::H, 2}}), ShapeError);
}

TEST_CASE("splitmix64 known outputs") {
    SplitMix64 g(1234567);
    CHECK(g.next() == 6457827717110365317ULL);
    CHECK(g.next() == 3203168211198807973ULL);
    CHECK(g.next() == 9817491932198370423ULL);
}

TEST_CASE("random_uniform seed 7 on 3x3") {
    // computed independently from the generator definition
    const double want[] = {-0.22034050321745702, -0.9664234109436878,  0.8015213612137668,
                           0.16586058605615617,  -0.09511620997706327, -0.5011369554345133,
                           -0.0640939915542531,  -0.3438465216949942,  -0.7314834023831027};
    Tensor t = random_uniform(TensorShape{{Axis::H, 3}, {Axis::W, 3}}, 7, -1.0, 1.0);
    for (std::size_t i = 0; i < 9; i++) CHECK(t.values()[i] == want[i]);
}

TEST_CASE("random_uniform rejects empty or bad ranges") {
    TensorShape s{{Axis::H, 2}};
    CHECK_THROWS_AS(random_uniform(s, 1, 1.0, 1.0), RangeError);
    CHECK_THROWS_AS(random_uniform(s, 1, 2.0, 1.0), RangeError);
    CHECK_THROWS_AS(random_uniform(s, 1, 0.0, std::numeric_limits<double>::infinity()), RangeError);
}

TEST_CASE("random_uniform stays in range") {
    Tensor t = random_uniform(TensorShape{{Axis::Token, 1000}}, 99, 3.0, 3.5);
    for (double v : t.values()) {
        CHECK(v >= 3.0);
        CHECK(v < 3.5);
    }
}

TEST_CASE("matvec small example") {
    Vector y = matvec(Matrix{{1, 2}, {3, 4}}, Vector{1, 1});
    CHECK(y == Vector{3, 7});
    CHECK_THROWS_AS(matvec(Matrix{{1, 2}}, Vector{1, 2, 3}), ShapeError);
}

TEST_CASE("matmul and transpose match naive loops") {
    Dice d(5);
    for (int t = 0; t < 100; t++) {
        std::size_t n = d.pick(1, 6), m = d.pick(1, 6), k = d.pick(1, 6);
        auto a = d.vec(n * m), b = d.vec(m * k);
        Matrix p = matmul(testing::mat(n, m, a), testing::mat(m, k, b));
        CHECK(testing::maxdiff(testing::raw(p), oracle::mm(a, b, n, m, k)) <= 1e-12);
        Matrix tr = transpose(testing::mat(n, m, a));
        for (std::size_t i = 0; i < n; i++)
            for (std::size_t j = 0; j < m; j++) CHECK(tr(j, i) == a[i * m + j]);
    }
}

TEST_CASE("matmul is associative") {
    Dice d(11);
    for (int t = 0; t < 100; t++) {
        std::size_t n = d.pick(1, 6), m = d.pick(1, 6), k = d.pick(1, 6), l = d.pick(1, 6);
        Matrix a = testing::mat(n, m, d.vec(n * m)), b = testing::mat(m, k, d.vec(m * k)),
               c = testing::mat(k, l, d.vec(k * l));
        CHECK(max_abs_diff(matmul(matmul(a, b), c), matmul(a, matmul(b, c))) <= 1e-12);
    }
}

TEST_CASE("flatten and unflatten are inverse") {
    Dice d(3);
    for (int t = 0; t < 100; t++) {
        std::size_t c = d.pick(1, 3), h = d.pick(1, 4), w = d.pick(1, 4), dd = d.pick(1, 3);
        TensorShape s{{Axis::CI, c}, {Axis::H, h}, {Axis::W, w}, {Axis::D, dd}};
        Tensor x = random_uniform(s, d.rng.next(), -1, 1);
        std::vector<Axis> orders[] = {{Axis::CI, Axis::H, Axis::W, Axis::D},
                                      {Axis::CI, Axis::D, Axis::H, Axis::W},
                                      {Axis::D, Axis::W, Axis::H, Axis::CI}};
        for (const auto& o : orders) {
            Vector v = flatten(x, o);
            CHECK(unflatten(v, s, o) == x);
            // and the other way round
            Vector u(d.vec(s.size()));
            CHECK(flatten(unflatten(u, s, o), o) == u);
        }
    }
}

TEST_CASE("flatten order places the last axis fastest") {
    Tensor x = testing::make({{Axis::H, 2}, {Axis::W, 3}}, {0, 1, 2, 3, 4, 5});
    std::vector<Axis> wh{Axis::W, Axis::H};
    CHECK(flatten(x, wh) == Vector{0, 3, 1, 4, 2, 5});
    CHECK(flatten(x) == Vector{0, 1, 2, 3, 4, 5});
}

TEST_CASE("tensor rejects non-finite data and wrong lengths") {
    TensorShape s{{Axis::H, 2}};
    CHECK_THROWS_AS(Tensor(s, {1.0}), ShapeError);
    CHECK_THROWS_AS(Tensor(s, {1.0, std::nan("")}), RangeError);
}

TEST_CASE("element cap") {
    const std::size_t old = element_cap();
    set_element_cap(16);
    CHECK_THROWS_AS(TensorShape({{Axis::H, 5}, {Axis::W, 4}}), CapacityError);
    CHECK_NOTHROW(TensorShape({{Axis::H, 4}, {Axis::W, 4}}));
    set_element_cap(old);
}

TEST_CASE("numerical rank") {
    CHECK(numerical_rank(Matrix{{1, 2}, {2, 4}}) == 1);
    CHECK(numerical_rank(Matrix::identity(4)) == 4);
    CHECK(numerical_rank(Matrix(3, 3)) == 0);
    // outer products of random vectors
    Dice d(8);
    for (int t = 0; t < 20; t++) {
        std::size_t r = d.pick(1, 3);
        Matrix b = testing::mat(6, r, d.vec(6 * r)), a = testing::mat(r, 5, d.vec(r * 5));
        CHECK(numerical_rank(matmul(b, a)) == r);
    }
}
