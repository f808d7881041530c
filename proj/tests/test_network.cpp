// Copyright (C) 2026 The uatcv Authors
// SPDX-License-Identifier: Apache-2.0
//

#include <string>

#include "doctest.h"
#include "net_oracle.hpp"
#include "specgen.hpp"
#include "uatcv/network.hpp"

using namespace uatcv;
using namespace uatcv::net;
using testing::Dice;
using testing::maxdiff;
using testing::raw;

namespace {

const std::string kData = UATCV_DATA_DIR;
const char* const kFixtures[] = {"vgg3.json", "resblock2.json", "vit1.json"};

double canonical_vs_forward(const NetworkSpec& spec, std::uint64_t input_seed) {
    Network n = instantiate(spec);
    Tensor x = random_input(spec, input_seed);
    auto form = expand_network(spec);
    return maxdiff(raw(sym::evaluate(form, bind_network(n, x))), raw(flat(forward(n, x))));
}

}  // namespace

TEST_CASE("fixtures parse and round trip") {
    for (const char* f : kFixtures) {
        INFO(std::string(f));
        NetworkSpec s = load_spec(kData + "/" + f);
        const std::string text = emit_spec(s);
        NetworkSpec again = parse_spec(text);
        CHECK(again == s);
        CHECK(emit_spec(again) == text);
    }
}

TEST_CASE("random specs round trip") {
    Dice d(61);
    for (int t = 0; t < 200; t++) {
        const std::string text = testing::random_any(d).dump();
        INFO(text);
        NetworkSpec s = parse_spec(text);
        NetworkSpec again = parse_spec(emit_spec(s));
        CHECK(again == s);
    }
}

TEST_CASE("explicit weights survive a round trip") {
    const std::string text = R"({"input_shape":[{"axis":"C_I","extent":1},{"axis":"H","extent":2},{"axis":"W","extent":2}],
        "layers":[{"type":"conv2d","out_channels":1,"kernel":[1,1],"weights":[2],"bias":false,"activate":false}]})";
    NetworkSpec s = parse_spec(text);
    CHECK(parse_spec(emit_spec(s)) == s);
    Network n = instantiate(s);
    Tensor x = testing::make({{Axis::CI, 1}, {Axis::H, 2}, {Axis::W, 2}}, {1, 2, 3, 4});
    CHECK(raw(forward(n, x)) == std::vector<double>{2, 4, 6, 8});
}

TEST_CASE("channel mismatch names both layers") {
    const std::string text = R"({"input_shape":[{"axis":"C_I","extent":1},{"axis":"H","extent":4},{"axis":"W","extent":4}],
        "layers":[{"type":"conv2d","out_channels":2,"kernel":[3,3]},
                  {"type":"conv2d","in_channels":3,"out_channels":1,"kernel":[1,1]}]})";
    try {
        parse_spec(text);
        FAIL("expected a validation error");
    } catch (const ValidationError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("layer 0") != std::string::npos);
        CHECK(msg.find("layer 1") != std::string::npos);
        REQUIRE(e.layer());
        CHECK(*e.layer() == 1);
    }
}

TEST_CASE("malformed specs are parse errors") {
    const char* bad[] = {
        "",
        "{",
        "[]",
        R"({"input_shape":[],"layers":[]})",
        R"({"input_shape":[{"axis":"H","extent":2}],"layers":[],"extra":1})",
        R"({"input_shape":[{"axis":"Q","extent":2}],"layers":[{"type":"mha"}]})",
        R"({"input_shape":[{"axis":"C_I","extent":1},{"axis":"H","extent":4},{"axis":"W","extent":4}],
            "layers":[{"type":"conv2d","out_channels":1,"kernel":[3,3],"colour":"red"}]})",
        R"({"input_shape":[{"axis":"C_I","extent":1},{"axis":"H","extent":4},{"axis":"W","extent":4}],
            "layers":[{"type":"conv2d","out_channels":-1,"kernel":[3,3]}]})",
        R"({"input_shape":[{"axis":"C_I","extent":1},{"axis":"H","extent":4},{"axis":"W","extent":4}],
            "layers":[{"type":"teleport"}]})",
        R"({"input_shape":[{"axis":"C_I","extent":1},{"axis":"H","extent":4},{"axis":"W","extent":4}],
            "activation":"tanh","layers":[{"type":"mean_pool","window":[2,2]}]})",
        R"({"input_shape":[{"axis":"C_I","extent":1},{"axis":"H","extent":4},{"axis":"W","extent":4}],
            "layers":[{"type":"residual_block","kernel":[2,2]}]})",
        R"({"input_shape":[{"axis":"C_I","extent":0},{"axis":"H","extent":4},{"axis":"W","extent":4}],
            "layers":[{"type":"mean_pool","window":[2,2]}]})",
    };
    for (const char* t : bad) {
        INFO(std::string(t));
        bool coded = false;
        try {
            parse_spec(t);
        } catch (const ParseError&) {
            coded = true;
        } catch (const ValidationError&) {
            coded = true;
        }
        CHECK(coded);
    }
}

TEST_CASE("shape chain errors are validation errors") {
    const char* bad[] = {
        // kernel larger than the image
        R"({"input_shape":[{"axis":"C_I","extent":1},{"axis":"H","extent":2},{"axis":"W","extent":2}],
            "layers":[{"type":"conv2d","out_channels":1,"kernel":[3,3]}]})",
        // attention on an image
        R"({"input_shape":[{"axis":"C_I","extent":1},{"axis":"H","extent":4},{"axis":"W","extent":4}],
            "layers":[{"type":"mha","heads":1}]})",
        // heads do not divide the width
        R"({"input_shape":[{"axis":"token","extent":2},{"axis":"feature","extent":3}],
            "layers":[{"type":"mha","heads":2}]})",
        // patch does not divide
        R"({"input_shape":[{"axis":"C_I","extent":1},{"axis":"H","extent":3},{"axis":"W","extent":4}],
            "layers":[{"type":"patchify","patch":[2,2]}]})",
    };
    for (const char* t : bad) {
        INFO(std::string(t));
        CHECK_THROWS_AS(parse_spec(t), ValidationError);
    }
}

TEST_CASE("element cap guards lowering") {
    const std::size_t old = element_cap();
    set_element_cap(1000);
    CHECK_THROWS_AS(load_spec(kData + "/vgg3.json"), ValidationError);
    set_element_cap(old);
    CHECK_NOTHROW(load_spec(kData + "/vgg3.json"));
}

TEST_CASE("missing file is an io error") { CHECK_THROWS_AS(load_spec(kData + "/nope.json"), IoError); }

TEST_CASE("forward matches the naive walk") {
    Dice d(62);
    for (int t = 0; t < 100; t++) {
        const std::string text = testing::random_any(d).dump();
        INFO(text);
        NetworkSpec s = parse_spec(text);
        Network n = instantiate(s);
        Tensor x = random_input(s, d.rng.next());
        CHECK(maxdiff(raw(flat(forward(n, x))), testing::oracle_forward(n, raw(flat(x)))) <= 1e-9);
    }
}

TEST_CASE("lowered layers match direct layers") {
    Dice d(63);
    for (int t = 0; t < 100; t++) {
        NetworkSpec s = parse_spec(testing::random_any(d).dump());
        Network n = instantiate(s);
        auto trace = forward_trace(n, random_input(s, d.rng.next()));
        for (std::size_t k = 0; k < s.layers.size(); k++)
            CHECK(max_abs_diff(lowered_layer_output(n, k, trace[k]), flat(trace[k + 1])) <= 1e-9);
    }
}

TEST_CASE("fixtures: canonical form equals forward") {
    for (const char* f : kFixtures) {
        INFO(std::string(f));
        NetworkSpec s = load_spec(kData + "/" + f);
        for (std::uint64_t seed = 1; seed <= 5; seed++) CHECK(canonical_vs_forward(s, seed) <= 1e-9);
    }
}

TEST_CASE("canonical form equals forward on random networks") {
    Dice d(64);
    for (int t = 0; t < 60; t++) {
        const std::string text = testing::random_any(d).dump();
        INFO(text);
        CHECK(canonical_vs_forward(parse_spec(text), d.rng.next()) <= 1e-8);
    }
}

TEST_CASE("fixture expansions") {
    CHECK(sym::emit(expand_network(load_spec(kData + "/vgg3.json")), sym::Format::Text) ==
          "σ(W'_{i+2} σ(W'_{i+1} σ(W'_i x'_i + b'_i) + b'_{i+1}) + b'_{i+2})");
    CHECK(sym::emit(expand_network(load_spec(kData + "/resblock2.json")), sym::Format::Text) ==
          "x'_i + W'_{i,2} σ(W'_{i,1} x'_i + b_{i,1}) + W'_{i+1,2} σ(W'_{i+1,1} x'_i + b̂_{i+1,2}) + b̄_{i+1,2}");
}

TEST_CASE("instantiation is deterministic") {
    NetworkSpec s = load_spec(kData + "/vit1.json");
    Network a = instantiate(s), b = instantiate(s);
    Tensor x = random_input(s, 3);
    CHECK(forward(a, x) == forward(b, x));
    s.seed += 1;
    CHECK_FALSE(forward(instantiate(s), x) == forward(a, x));
}
