// Copyright (C) 2026 The uatcv Authors
// SPDX-License-Identifier: Apache-2.0
//

#include <cstring>
#include <string>

#include "doctest.h"
#include "uatcv/uatcv.h"

namespace {

const std::string kData = UATCV_DATA_DIR;

uatcv_network* load(const char* name) {
    uatcv_network* n = nullptr;
    REQUIRE(uatcv_network_load((kData + "/" + name).c_str(), &n) == UATCV_OK);
    return n;
}

std::string run(const uatcv_network* n, uatcv_command c, const uatcv_options* o, uatcv_status want = UATCV_OK) {
    char* out = nullptr;
    const uatcv_status s = uatcv_run(n, c, o, &out, nullptr);
    CHECK(s == want);
    std::string text = out ? out : "";
    uatcv_string_free(out);
    return text;
}

}  // namespace

TEST_CASE("version and names") {
    CHECK(std::string(uatcv_version()) == "0.1.0");
    CHECK(std::string(uatcv_status_name(UATCV_E_PARSE)) == "ParseError");
    CHECK(std::string(uatcv_status_name(UATCV_E_VALIDATION)) == "ValidationError");
    CHECK(std::string(uatcv_status_name(UATCV_VERIFY_FAILED)) == "VerificationFailed");
    CHECK(std::string(uatcv_status_name(static_cast<uatcv_status>(99))) == "unknown");
}

TEST_CASE("every command runs on every fixture") {
    uatcv_options o;
    uatcv_options_init(&o);
    o.trials = 3;
    for (const char* f : {"vgg3.json", "resblock2.json", "vit1.json"}) {
        INFO(std::string(f));
        uatcv_network* n = load(f);
        CHECK(uatcv_network_layer_count(n) == 2 + (std::string(f) == "vgg3.json"));
        for (auto c : {UATCV_CMD_LOWER, UATCV_CMD_VERIFY, UATCV_CMD_EXPAND, UATCV_CMD_CLASSIFY, UATCV_CMD_ANALYZE,
                       UATCV_CMD_REPORT})
            CHECK_FALSE(run(n, c, &o).empty());
        uatcv_network_free(n);
    }
}

TEST_CASE("report latex sidecar") {
    uatcv_network* n = load("vgg3.json");
    uatcv_options o;
    uatcv_options_init(&o);
    o.trials = 2;
    o.format = UATCV_FORMAT_LATEX;
    char* out = nullptr;
    char* tex = nullptr;
    REQUIRE(uatcv_run(n, UATCV_CMD_REPORT, &o, &out, &tex) == UATCV_OK);
    REQUIRE(tex);
    CHECK(std::strstr(tex, "\\sigma(\\mathbf{W}'_{i+2}") != nullptr);
    uatcv_string_free(out);
    uatcv_string_free(tex);
    uatcv_network_free(n);
}

TEST_CASE("parse errors carry codes and layers") {
    uatcv_network* n = reinterpret_cast<uatcv_network*>(1);
    const char bad[] = "{\"input_shape\":";
    CHECK(uatcv_network_parse(bad, sizeof bad - 1, &n) == UATCV_E_PARSE);
    CHECK(n == nullptr);
    CHECK(std::strlen(uatcv_last_error()) > 0);

    const std::string mismatch =
        R"({"input_shape":[{"axis":"C_I","extent":1},{"axis":"H","extent":4},{"axis":"W","extent":4}],
            "layers":[{"type":"conv2d","out_channels":2,"kernel":[3,3]},
                      {"type":"conv2d","in_channels":3,"out_channels":1,"kernel":[1,1]}]})";
    CHECK(uatcv_network_parse(mismatch.data(), mismatch.size(), &n) == UATCV_E_VALIDATION);
    CHECK(uatcv_last_error_layer() == 1);

    CHECK(uatcv_network_load((kData + "/missing.json").c_str(), &n) == UATCV_E_IO);
    CHECK(uatcv_network_parse(nullptr, 4, &n) == UATCV_E_ARGUMENT);
    CHECK(uatcv_network_parse("{}", 2, nullptr) == UATCV_E_ARGUMENT);
}

TEST_CASE("emit re-parses to the same text") {
    uatcv_network* n = load("resblock2.json");
    char* text = nullptr;
    REQUIRE(uatcv_network_emit(n, &text) == UATCV_OK);
    uatcv_network* m = nullptr;
    REQUIRE(uatcv_network_parse(text, std::strlen(text), &m) == UATCV_OK);
    char* again = nullptr;
    REQUIRE(uatcv_network_emit(m, &again) == UATCV_OK);
    CHECK(std::string(text) == again);
    uatcv_string_free(text);
    uatcv_string_free(again);
    uatcv_network_free(n);
    uatcv_network_free(m);
}

TEST_CASE("run rejects bad arguments") {
    uatcv_network* n = load("vgg3.json");
    char* out = nullptr;
    CHECK(uatcv_run(nullptr, UATCV_CMD_EXPAND, nullptr, &out, nullptr) == UATCV_E_ARGUMENT);
    CHECK(uatcv_run(n, UATCV_CMD_EXPAND, nullptr, nullptr, nullptr) == UATCV_E_ARGUMENT);
    CHECK(uatcv_run(n, static_cast<uatcv_command>(42), nullptr, &out, nullptr) == UATCV_E_ARGUMENT);
    uatcv_options o;
    uatcv_options_init(&o);
    o.prune_count = 1;
    CHECK(uatcv_run(n, UATCV_CMD_ANALYZE, &o, &out, nullptr) == UATCV_E_ARGUMENT);
    uatcv_options_init(&o);
    o.lora_layer = 0;
    o.lora_target = "weight";
    o.lora_rank = 5;
    run(n, UATCV_CMD_ANALYZE, &o, UATCV_E_RANK);
    uatcv_options_init(&o);
    o.prune_layer = 2;
    const size_t all[] = {0, 1};
    o.prune_channels = all;
    o.prune_count = 2;
    run(n, UATCV_CMD_ANALYZE, &o, UATCV_E_SPEC);
    uatcv_network_free(n);
}

TEST_CASE("verification failure keeps the output") {
    uatcv_network* n = load("resblock2.json");
    uatcv_options o;
    uatcv_options_init(&o);
    o.trials = 5;
    o.tol = 0.0;
    const std::string body = run(n, UATCV_CMD_VERIFY, &o, UATCV_VERIFY_FAILED);
    CHECK(body.find("\"passed\": false") != std::string::npos);
    uatcv_network_free(n);
}

TEST_CASE("element cap round trip") {
    const size_t old = uatcv_element_cap();
    CHECK(uatcv_set_element_cap(0) == UATCV_E_RANGE);
    CHECK(uatcv_set_element_cap(64) == UATCV_OK);
    uatcv_network* n = nullptr;
    CHECK(uatcv_network_load((kData + "/vgg3.json").c_str(), &n) == UATCV_E_VALIDATION);
    CHECK(uatcv_set_element_cap(old) == UATCV_OK);
    CHECK(uatcv_element_cap() == old);
}

TEST_CASE("same options give identical output") {
    uatcv_network* n = load("vit1.json");
    uatcv_options o;
    uatcv_options_init(&o);
    o.trials = 4;
    o.has_seed = 1;
    o.seed = 77;
    const std::string a = run(n, UATCV_CMD_REPORT, &o), b = run(n, UATCV_CMD_REPORT, &o);
    CHECK(a == b);
    o.seed = 78;
    CHECK(run(n, UATCV_CMD_REPORT, &o) != a);
    uatcv_network_free(n);
}
