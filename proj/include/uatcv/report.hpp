// Copyright (C) 2026 The uatcv Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "uatcv/network.hpp"
#include "uatcv/symbolic.hpp"

// The command layer behind the CLI. Every command is a pure function of the
// spec and options; outputs carry no timestamps.
namespace uatcv::report {

inline constexpr const char* kVersion = "0.1.0";

struct Options {
    std::optional<std::uint64_t> seed;  // overrides the spec's seed
    std::size_t trials = 100;
    double tol = 1e-9;
    sym::Format format = sym::Format::Text;
    // analyze: LoRA target (defaults to the first adaptable layer) and rank
    std::optional<std::size_t> lora_layer;
    std::string lora_target;
    std::size_t lora_rank = 1;
    // analyze: channels to prune (defaults to a min/max magnitude comparison)
    std::optional<std::size_t> prune_layer;
    std::vector<std::size_t> prune_channels;
};

struct Output {
    std::string body;   // what the command prints
    std::string latex;  // report only: LaTeX sidecar
    bool verification_failed = false;
};

Output cmd_lower(const net::NetworkSpec& spec, const Options& o);
Output cmd_verify(const net::NetworkSpec& spec, const Options& o);
Output cmd_expand(const net::NetworkSpec& spec, const Options& o);
Output cmd_classify(const net::NetworkSpec& spec, const Options& o);
Output cmd_analyze(const net::NetworkSpec& spec, const Options& o);
Output cmd_report(const net::NetworkSpec& spec, const Options& o);

}  // namespace uatcv::report
