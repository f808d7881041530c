// Copyright (C) 2026 The uatcv Authors
// SPDX-License-Identifier: Apache-2.0
//

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"
#include "json.hpp"

namespace fs = std::filesystem;

namespace {

const std::string kCli = UATCV_CLI_PATH;
const std::string kData = UATCV_DATA_DIR;

struct Result {
    int rc = -1;
    std::string out, err;
};

// Per-process scratch directory, removed on exit.
struct Scratch {
    fs::path dir = fs::temp_directory_path() / ("uatcv_cli_test_" + std::to_string(::getpid()));
    Scratch() { fs::create_directories(dir); }
    ~Scratch() {
        std::error_code ec;
        fs::remove_all(dir, ec);
    }
};

const fs::path& scratch() {
    static const Scratch s;
    return s.dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void write(const fs::path& p, const std::string& body) { std::ofstream(p, std::ios::binary) << body; }

// `args` is passed to the shell as is; `env` is a prefix like "UATCV_CAP=10".
Result cli(const std::string& args, const std::string& env = "") {
    const fs::path o = scratch() / "stdout", e = scratch() / "stderr";
    const std::string cmd = "env -u UATCV_CAP " + env + " '" + kCli + "' " + args + " >'" + o.string() + "' 2>'" +
                            e.string() + "'";
    const int st = std::system(cmd.c_str());
    Result r;
    r.rc = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
    r.out = slurp(o);
    r.err = slurp(e);
    return r;
}

std::string fixture(const char* name) { return "'" + kData + "/" + name + "'"; }

}  // namespace

TEST_CASE("verify a bundled spec by name") {
    auto r = cli("verify vgg3 --trials 100 --tol 1e-9");
    CHECK(r.rc == 0);
    auto j = nlohmann::json::parse(r.out);
    CHECK(j["verification"]["passed"] == true);
}

TEST_CASE("verify fixtures by path") {
    for (const char* f : {"vgg3.json", "resblock2.json", "vit1.json"}) {
        INFO(std::string(f));
        CHECK(cli("verify " + fixture(f) + " --trials 20").rc == 0);
    }
}

TEST_CASE("report is byte-identical for the same spec and seed") {
    for (const char* f : {"vgg3.json", "resblock2.json", "vit1.json"}) {
        INFO(std::string(f));
        auto a = cli("report " + fixture(f) + " --seed 5 --trials 10");
        auto b = cli("report " + fixture(f) + " --seed 5 --trials 10");
        REQUIRE(a.rc == 0);
        CHECK(a.out == b.out);
        CHECK(nlohmann::json::parse(a.out)["seed"] == 5);
        auto c = cli("report " + fixture(f) + " --seed 6 --trials 10");
        CHECK(c.out != a.out);
    }
}

TEST_CASE("report with latex writes a sidecar") {
    const fs::path out = scratch() / "rep.json";
    auto r = cli("report vgg3 --trials 3 --format latex --out '" + out.string() + "'");
    CHECK(r.rc == 0);
    CHECK(r.out.empty());
    CHECK_FALSE(slurp(out).empty());
    const std::string tex = slurp(scratch() / "rep.tex");
    CHECK(tex.find("\\sigma(\\mathbf{W}'_{i+2}\\sigma(\\mathbf{W}'_{i+1}\\sigma(\\mathbf{W}'_{i}\\mathbf{x}'_{i}"
                   "+\\mathbf{b}'_{i})+\\mathbf{b}'_{i+1})+\\mathbf{b}'_{i+2})") != std::string::npos);
}

TEST_CASE("expand output") {
    CHECK(cli("expand vgg3").out == "σ(W'_{i+2} σ(W'_{i+1} σ(W'_i x'_i + b'_i) + b'_{i+1}) + b'_{i+2})\n");
    auto r = cli("expand resblock2 --format latex");
    CHECK(r.out.find("\\hat{\\mathbf{b}}_{i+1,2}") != std::string::npos);
}

TEST_CASE("classify lists atoms") {
    auto r = cli("classify resblock2");
    CHECK(r.rc == 0);
    CHECK(r.out.find("InputDependent") != std::string::npos);
    CHECK(cli("classify vgg3").out.find("InputDependent") == std::string::npos);
}

TEST_CASE("analyze options") {
    auto r = cli("analyze vgg3 --lora-layer 1 --lora-target weight --lora-rank 2 --prune-layer 0 --prune-channels 1");
    REQUIRE(r.rc == 0);
    auto j = nlohmann::json::parse(r.out);
    CHECK(j["analysis"]["receptive_field"].is_array());
    CHECK(cli("analyze vgg3 --lora-layer 0 --lora-target weight --lora-rank 9").rc == 2);
    CHECK(cli("analyze vgg3 --prune-layer 0 --prune-channels 0,1").rc == 2);
}

TEST_CASE("exit codes") {
    const fs::path bad = scratch() / "bad.json";
    write(bad, "{\"input_shape\": [");
    auto r = cli("verify '" + bad.string() + "'");
    CHECK(r.rc == 2);
    CHECK(r.err.find("error[ParseError]") != std::string::npos);

    const fs::path mismatch = scratch() / "mismatch.json";
    write(mismatch, R"({"input_shape":[{"axis":"C_I","extent":1},{"axis":"H","extent":4},{"axis":"W","extent":4}],
        "layers":[{"type":"conv2d","out_channels":2,"kernel":[3,3]},
                  {"type":"conv2d","in_channels":3,"out_channels":1,"kernel":[1,1]}]})");
    r = cli("lower '" + mismatch.string() + "'");
    CHECK(r.rc == 2);
    CHECK(r.err.find("error[ValidationError]") != std::string::npos);
    CHECK(r.err.find("layer 0") != std::string::npos);
    CHECK(r.err.find("layer 1") != std::string::npos);

    CHECK(cli("verify '" + (scratch() / "absent.json").string() + "'").rc == 2);
    CHECK(cli("").rc == 2);
    CHECK(cli("frobnicate vgg3").rc == 2);
    CHECK(cli("verify vgg3 --format pdf").rc == 2);
    CHECK(cli("--help").rc == 0);
    CHECK(cli("--version").out.find("0.1.0") != std::string::npos);
    // tolerance zero cannot hold over many trials of floating point sums
    r = cli("verify resblock2 --trials 20 --tol 0");
    CHECK(r.rc == 3);
    CHECK_FALSE(r.out.empty());
}

TEST_CASE("element cap from environment and flag") {
    auto r = cli("verify vgg3 --trials 2", "UATCV_CAP=100");
    CHECK(r.rc == 2);
    CHECK(r.err.find("ValidationError") != std::string::npos);
    CHECK(cli("verify vgg3 --trials 2 --cap 1000000", "UATCV_CAP=100").rc == 0);
    CHECK(cli("verify vgg3 --trials 2", "UATCV_CAP=abc").rc == 2);
    CHECK(cli("verify vgg3 --trials 2 --cap 0").rc == 2);
}

TEST_CASE("mutated spec files never crash the CLI") {
    const std::string base = slurp(kData + "/vit1.json");
    unsigned long long state = 12345;
    auto next = [&] {
        state = state * 6364136223846793005ULL + 1442695040888963407ULL;
        return state >> 33;
    };
    const fs::path p = scratch() / "fuzz.json";
    for (int t = 0; t < 40; t++) {
        std::string s = base;
        for (int m = 0, k = 1 + int(next() % 4); m < k; m++) {
            const std::size_t at = next() % s.size();
            switch (next() % 3) {
                case 0: s[at] = char(next() % 128); break;
                case 1: s.erase(at, 1 + next() % 8); break;
                default: s.insert(at, 1, "{}[]\",:0-9e"[next() % 11]); break;
            }
            if (s.empty()) s = "x";
        }
        write(p, s);
        auto r = cli("expand '" + p.string() + "'");
        INFO(s);
        CHECK((r.rc == 0 || r.rc == 2));
        if (r.rc == 2) CHECK(r.err.rfind("uatcv: error[", 0) == 0);
    }
}
