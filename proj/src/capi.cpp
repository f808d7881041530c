// Copyright (C) 2026 The uatcv Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "uatcv/uatcv.h"

#include <cstdlib>
#include <cstring>
#include <new>
#include <string>

#include "uatcv/network.hpp"
#include "uatcv/report.hpp"

struct uatcv_network {
    uatcv::net::NetworkSpec spec;
};

namespace {

thread_local std::string g_error;
thread_local long g_layer = -1;

void clear_error() {
    g_error.clear();
    g_layer = -1;
}

uatcv_status fail(uatcv_status s, const std::string& msg, long layer = -1) {
    g_error = msg;
    g_layer = layer;
    return s;
}

// Maps the active exception onto a status.
uatcv_status translate() {
    try {
        throw;
    } catch (const uatcv::LayerError& e) {
        return fail(static_cast<uatcv_status>(e.code()), e.what(), e.layer() ? static_cast<long>(*e.layer()) : -1);
    } catch (const uatcv::Error& e) {
        return fail(static_cast<uatcv_status>(e.code()), e.what());
    } catch (const std::bad_alloc&) {
        return fail(UATCV_E_CAPACITY, "out of memory");
    } catch (const std::exception& e) {
        return fail(UATCV_E_INTERNAL, e.what());
    } catch (...) {
        return fail(UATCV_E_INTERNAL, "unknown failure");
    }
}

char* dup(const std::string& s) {
    char* p = static_cast<char*>(std::malloc(s.size() + 1));
    if (!p) throw std::bad_alloc();
    std::memcpy(p, s.c_str(), s.size() + 1);
    return p;
}

}  // namespace

extern "C" {

const char* uatcv_version(void) { return uatcv::report::kVersion; }

const char* uatcv_status_name(uatcv_status s) {
    switch (s) {
        case UATCV_OK: return "ok";
        case UATCV_E_ARGUMENT: return "ArgumentError";
        case UATCV_VERIFY_FAILED: return "VerificationFailed";
        default: break;
    }
    if (s >= UATCV_E_SHAPE && s <= UATCV_E_INTERNAL) return uatcv::error_code_name(static_cast<uatcv::ErrorCode>(s));
    return "unknown";
}

const char* uatcv_last_error(void) { return g_error.c_str(); }

long uatcv_last_error_layer(void) { return g_layer; }

size_t uatcv_element_cap(void) { return uatcv::element_cap(); }

uatcv_status uatcv_set_element_cap(size_t cap) {
    clear_error();
    try {
        uatcv::set_element_cap(cap);
        return UATCV_OK;
    } catch (...) {
        return translate();
    }
}

uatcv_status uatcv_network_parse(const char* text, size_t len, uatcv_network** out) {
    clear_error();
    if (!out) return fail(UATCV_E_ARGUMENT, "null output handle");
    *out = nullptr;
    if (!text && len) return fail(UATCV_E_ARGUMENT, "null text");
    try {
        auto* n = new uatcv_network{uatcv::net::parse_spec(std::string_view(text ? text : "", len))};
        *out = n;
        return UATCV_OK;
    } catch (...) {
        return translate();
    }
}

uatcv_status uatcv_network_load(const char* path, uatcv_network** out) {
    clear_error();
    if (!out) return fail(UATCV_E_ARGUMENT, "null output handle");
    *out = nullptr;
    if (!path) return fail(UATCV_E_ARGUMENT, "null path");
    try {
        *out = new uatcv_network{uatcv::net::load_spec(path)};
        return UATCV_OK;
    } catch (...) {
        return translate();
    }
}

void uatcv_network_free(uatcv_network* net) { delete net; }

size_t uatcv_network_layer_count(const uatcv_network* net) { return net ? net->spec.layers.size() : 0; }

uatcv_status uatcv_network_emit(const uatcv_network* net, char** out) {
    clear_error();
    if (!net || !out) return fail(UATCV_E_ARGUMENT, "null argument");
    *out = nullptr;
    try {
        *out = dup(uatcv::net::emit_spec(net->spec));
        return UATCV_OK;
    } catch (...) {
        return translate();
    }
}

void uatcv_options_init(uatcv_options* opts) {
    if (!opts) return;
    *opts = uatcv_options{};
    opts->trials = 100;
    opts->tol = 1e-9;
    opts->format = UATCV_FORMAT_TEXT;
    opts->lora_layer = -1;
    opts->lora_rank = 1;
    opts->prune_layer = -1;
}

uatcv_status uatcv_run(const uatcv_network* net, uatcv_command cmd, const uatcv_options* opts, char** out,
                       char** latex) {
    clear_error();
    if (!net || !out) return fail(UATCV_E_ARGUMENT, "null argument");
    *out = nullptr;
    if (latex) *latex = nullptr;
    uatcv_options defaults;
    uatcv_options_init(&defaults);
    const uatcv_options& c = opts ? *opts : defaults;
    if (c.prune_count && !c.prune_channels) return fail(UATCV_E_ARGUMENT, "null prune channel list");
    if (c.format != UATCV_FORMAT_TEXT && c.format != UATCV_FORMAT_LATEX) return fail(UATCV_E_ARGUMENT, "bad format");

    uatcv::report::Options o;
    if (c.has_seed) o.seed = c.seed;
    o.trials = c.trials;
    o.tol = c.tol;
    o.format = c.format == UATCV_FORMAT_LATEX ? uatcv::sym::Format::Latex : uatcv::sym::Format::Text;
    if (c.lora_layer >= 0) o.lora_layer = static_cast<std::size_t>(c.lora_layer);
    if (c.lora_target) o.lora_target = c.lora_target;
    o.lora_rank = c.lora_rank;
    if (c.prune_layer >= 0) o.prune_layer = static_cast<std::size_t>(c.prune_layer);
    if (c.prune_count) o.prune_channels.assign(c.prune_channels, c.prune_channels + c.prune_count);

    try {
        namespace r = uatcv::report;
        r::Output res;
        switch (cmd) {
            case UATCV_CMD_LOWER: res = r::cmd_lower(net->spec, o); break;
            case UATCV_CMD_VERIFY: res = r::cmd_verify(net->spec, o); break;
            case UATCV_CMD_EXPAND: res = r::cmd_expand(net->spec, o); break;
            case UATCV_CMD_CLASSIFY: res = r::cmd_classify(net->spec, o); break;
            case UATCV_CMD_ANALYZE: res = r::cmd_analyze(net->spec, o); break;
            case UATCV_CMD_REPORT: res = r::cmd_report(net->spec, o); break;
            default: return fail(UATCV_E_ARGUMENT, "unknown command");
        }
        char* body = dup(res.body);
        if (latex && !res.latex.empty()) {
            try {
                *latex = dup(res.latex);
            } catch (...) {
                std::free(body);
                throw;
            }
        }
        *out = body;
        if (res.verification_failed) return fail(UATCV_VERIFY_FAILED, "verification exceeded tolerance");
        return UATCV_OK;
    } catch (...) {
        return translate();
    }
}

void uatcv_string_free(char* s) { std::free(s); }

}  // extern "C"
