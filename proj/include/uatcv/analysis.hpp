// Copyright (C) 2026 The uatcv Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "uatcv/network.hpp"

namespace uatcv::analysis {

// N (top-level sigma terms) and total sigma units of the expanded form of
// every prefix of the network.
struct TermCount {
    std::size_t layers = 0;
    std::size_t n = 0;
    std::size_t units = 0;
};
std::vector<TermCount> count_uat_terms(const net::NetworkSpec& spec);

// Receptive field after each layer, per spatial axis (H, W[, D]), from
//   RF_l = RF_{l-1} + (k_l - 1) * jump_{l-1},  jump_l = jump_{l-1} * s_l.
// A residual block counts as two stride-1 convolutions. SpecError for
// patchify and attention layers.
struct RfEntry {
    std::size_t layer = 0;
    std::vector<std::size_t> rf;
    std::vector<std::size_t> jump;
};
std::vector<RfEntry> receptive_field(const net::NetworkSpec& spec);

// W <- W + B A on one matrix of one layer. Targets:
//   conv2d / conv3d: "weight" (kernel reshaped to C_O x (C_I k_h k_w [k_d]))
//   residual_block:  "weight1", "weight2"
//   mha / transformer_block: "W_Q", "W_K", "W_V", "W_O"
//   ffn / transformer_block: "W_2", "W_3"
struct LoraDelta {
    std::size_t layer = 0;
    std::string target;
    std::size_t rank = 1;
    Matrix a;  // rank x n
    Matrix b;  // m x rank
};

// Rows and columns of the matrix a delta on (layer, target) must match.
std::pair<std::size_t, std::size_t> lora_target_dims(const net::Network& n, std::size_t layer,
                                                     const std::string& target);
// Uniform [-scale, scale) factors. RankError when rank exceeds min(m, n).
LoraDelta random_lora(const net::Network& n, std::size_t layer, const std::string& target, std::size_t rank,
                      std::uint64_t seed, double scale = 0.1);
// ShapeError on non-conforming factors, RankError when the rank exceeds
// min(m, n) or the factors disagree with it.
net::Network apply_lora(const net::Network& n, const LoraDelta& d);

struct LoraReport {
    std::size_t rank_ba = 0;
    // max |lower(W + BA) - lower(W) - lower(BA)| when the target enters its
    // lowered matrix linearly; empty for W_Q / W_K.
    std::optional<double> linearity_diff;
    bool upstream_unchanged = false;  // every activation before the layer identical
    double layer_delta = 0;           // max change of the targeted layer's output
    double output_delta = 0;          // max change of the network output
    double lowered_vs_direct = 0;     // adapted layer: lowered path vs direct op
};
LoraReport lora_equivalence_check(const net::Network& n, const LoraDelta& d, const Tensor& x);

// Structured pruning of whole output channels of a convolution. The
// matching input channels of the next convolution (through any mean-pool
// layers) go with them.
struct PruneMask {
    std::size_t layer = 0;
    std::vector<std::size_t> channels;
};
// Output channels whose kernel has L2 norm at most `threshold`.
PruneMask magnitude_mask(const net::Network& n, std::size_t layer, double threshold);
// Output channels sorted by kernel L2 norm, smallest first.
std::vector<std::size_t> channels_by_magnitude(const net::Network& n, std::size_t layer);
// SpecError when the mask removes every channel, names a channel out of
// range, targets a non-convolution, or the channels feed a layer that
// cannot shrink with them.
net::Network prune(const net::Network& n, const PruneMask& m);

// Max entrywise difference between the lowering of the pruned network and
// the lowering of the original with the masked channel blocks deleted, over
// the pruned layer and its consumer.
double prune_commutation_diff(const net::Network& n, const PruneMask& m);

struct PruneImpact {
    double max_deviation = 0;
    double mean_deviation = 0;
    std::size_t samples = 0;
};
// Output deviation between the pruned and original network; when the
// output still carries the pruned channels, only the surviving ones count.
PruneImpact prune_impact(const net::Network& n, const PruneMask& m, const std::vector<Tensor>& inputs);

}  // namespace uatcv::analysis
