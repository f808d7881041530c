// Copyright (C) 2026 The uatcv Authors
// SPDX-License-Identifier: Apache-2.0
//

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fixtures.hpp"
#include "uatcv/uatcv.h"

namespace {

// exit codes
constexpr int kOk = 0;
constexpr int kInput = 2;
constexpr int kVerify = 3;
constexpr int kInternal = 4;

int exit_code(uatcv_status s) {
    switch (s) {
        case UATCV_OK: return kOk;
        case UATCV_VERIFY_FAILED: return kVerify;
        case UATCV_E_INTERNAL: return kInternal;
        default: return kInput;
    }
}

int report_error(uatcv_status s) {
    std::cerr << "uatcv: error[" << uatcv_status_name(s) << "] " << uatcv_last_error() << "\n";
    return exit_code(s);
}

bool parse_count(const std::string& text, std::size_t& out) {
    if (text.empty() || text.find_first_not_of("0123456789") != std::string::npos) return false;
    errno = 0;
    const unsigned long long v = std::strtoull(text.c_str(), nullptr, 10);
    if (errno == ERANGE) return false;
    out = static_cast<std::size_t>(v);
    return true;
}

bool write_file(const std::string& path, const std::string& body) {
    std::ofstream f(path, std::ios::binary);
    if (!f) return false;
    f << body;
    return static_cast<bool>(f);
}

std::string sidecar_path(const std::string& out) {
    const auto slash = out.find_last_of('/');
    const auto dot = out.find_last_of('.');
    if (dot != std::string::npos && (slash == std::string::npos || dot > slash)) return out.substr(0, dot) + ".tex";
    return out + ".tex";
}

// A readable file wins; otherwise a bundled spec name ("vgg3" or "vgg3.json").
uatcv_status open_spec(const std::string& arg, uatcv_network** net) {
    if (std::ifstream(arg).good()) return uatcv_network_load(arg.c_str(), net);
    std::string name = arg;
    if (name.size() > 5 && name.compare(name.size() - 5, 5, ".json") == 0) name.resize(name.size() - 5);
    for (const auto& f : fixtures::kAll) {
        if (name == f.name) return uatcv_network_parse(f.text, std::char_traits<char>::length(f.text), net);
    }
    return uatcv_network_load(arg.c_str(), net);
}

struct Args {
    std::string spec;
    std::uint64_t seed = 0;
    std::size_t trials = 100;
    double tol = 1e-9;
    std::string format = "text";
    std::string cap;
    std::string out;
    long lora_layer = -1;
    std::string lora_target;
    std::size_t lora_rank = 1;
    long prune_layer = -1;
    std::vector<std::size_t> prune_channels;
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Lower CNN and ViT layers to matrix-vector form, expand them into UAT form, and verify."};
    app.set_version_flag("--version", uatcv_version());
    app.require_subcommand(1, 1);

    Args a;
    struct Cmd {
        const char* name;
        uatcv_command cmd;
        const char* help;
    };
    const Cmd cmds[] = {
        {"lower", UATCV_CMD_LOWER, "Lower every layer and print matrix statistics"},
        {"verify", UATCV_CMD_VERIFY, "Check lowered and expanded forms against direct evaluation"},
        {"expand", UATCV_CMD_EXPAND, "Print the expanded UAT form"},
        {"classify", UATCV_CMD_CLASSIFY, "Tabulate atoms as fixed or input-dependent"},
        {"analyze", UATCV_CMD_ANALYZE, "Term counts, receptive field, LoRA and pruning"},
        {"report", UATCV_CMD_REPORT, "Full JSON report, with a LaTeX sidecar under --format latex"},
    };
    std::vector<CLI::App*> subs;
    for (const auto& c : cmds) {
        CLI::App* s = app.add_subcommand(c.name, c.help);
        s->add_option("spec", a.spec, "Network spec file, or a bundled name: vgg3, resblock2, vit1")->required();
        s->add_option("--seed", a.seed, "Override the spec seed");
        s->add_option("--trials", a.trials, "Verification trials")->check(CLI::PositiveNumber);
        s->add_option("--tol", a.tol, "Verification tolerance")->check(CLI::NonNegativeNumber);
        s->add_option("--format", a.format, "Output format")->check(CLI::IsMember({"text", "latex"}));
        s->add_option("--cap", a.cap, "Element cap (overrides UATCV_CAP)");
        s->add_option("--out", a.out, "Write output to this path");
        if (std::string(c.name) == "analyze" || std::string(c.name) == "report") {
            s->add_option("--lora-layer", a.lora_layer, "Layer to adapt")->check(CLI::NonNegativeNumber);
            s->add_option("--lora-target", a.lora_target, "Matrix to adapt (weight, weight1, W_V, W_2, ...)");
            s->add_option("--lora-rank", a.lora_rank, "LoRA rank")->check(CLI::PositiveNumber);
            s->add_option("--prune-layer", a.prune_layer, "Convolution to prune")->check(CLI::NonNegativeNumber);
            s->add_option("--prune-channels", a.prune_channels, "Output channels to remove")->delimiter(',');
        }
        subs.push_back(s);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kInput;
    }

    std::size_t ci = 0;
    while (!subs[ci]->parsed()) ++ci;
    const Cmd& cmd = cmds[ci];
    CLI::App* sub = subs[ci];

    std::string cap_text;
    if (sub->count("--cap")) {
        cap_text = a.cap;
    } else if (const char* env = std::getenv("UATCV_CAP")) {
        cap_text = env;
    }
    if (!cap_text.empty()) {
        std::size_t cap = 0;
        if (!parse_count(cap_text, cap)) {
            std::cerr << "uatcv: error[ArgumentError] element cap '" << cap_text << "' is not a positive integer\n";
            return kInput;
        }
        if (uatcv_status s = uatcv_set_element_cap(cap); s != UATCV_OK) return report_error(s);
    }

    uatcv_network* net = nullptr;
    if (uatcv_status s = open_spec(a.spec, &net); s != UATCV_OK) return report_error(s);

    uatcv_options o;
    uatcv_options_init(&o);
    o.has_seed = sub->count("--seed") ? 1 : 0;
    o.seed = a.seed;
    o.trials = a.trials;
    o.tol = a.tol;
    o.format = a.format == "latex" ? UATCV_FORMAT_LATEX : UATCV_FORMAT_TEXT;
    o.lora_layer = a.lora_layer;
    o.lora_target = a.lora_target.empty() ? nullptr : a.lora_target.c_str();
    o.lora_rank = a.lora_rank;
    o.prune_layer = a.prune_layer;
    o.prune_channels = a.prune_channels.data();
    o.prune_count = a.prune_channels.size();

    char* body = nullptr;
    char* latex = nullptr;
    const uatcv_status s = uatcv_run(net, cmd.cmd, &o, &body, &latex);
    uatcv_network_free(net);
    if (s != UATCV_OK && s != UATCV_VERIFY_FAILED) return report_error(s);

    int rc = exit_code(s);
    if (a.out.empty()) {
        std::fputs(body, stdout);
    } else {
        if (!write_file(a.out, body)) {
            std::cerr << "uatcv: error[IoError] cannot write '" << a.out << "'\n";
            rc = kInput;
        } else if (latex && o.format == UATCV_FORMAT_LATEX && !write_file(sidecar_path(a.out), latex)) {
            std::cerr << "uatcv: error[IoError] cannot write '" << sidecar_path(a.out) << "'\n";
            rc = kInput;
        }
    }
    uatcv_string_free(body);
    uatcv_string_free(latex);
    if (s == UATCV_VERIFY_FAILED) std::cerr << "uatcv: verification failed: " << uatcv_last_error() << "\n";
    return rc;
}
