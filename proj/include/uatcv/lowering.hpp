// Copyright (C) 2026 The uatcv Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "uatcv/reference_ops.hpp"
#include "uatcv/tensor.hpp"

// Matrix-vector lowering: each layer becomes an explicit pair (W', x') with
// diamond(W', x') = W'^T x' equal to the flattened layer output.
//
// Layout conventions:
//   * x' for convolution and pooling is the zero-padded input, channel blocks
//     stacked vertically; inside a block positions run row-major over (H, W),
//     or (D, H, W) for 3D with depth outermost.
//   * W' has one row per x' entry and one column per output entry. Output
//     columns are grouped by output channel, then the same spatial order.
//   * Token matrices (patchify, FFN, MHA) flatten row-major as (token, feature).
namespace uatcv::lowering {

struct InputSource {
    // Position in the source tensor flattened in `LoweredForm::input_order`;
    // empty for zero padding.
    std::optional<std::size_t> flat;
    // Coordinate in the source tensor's own axis order (padded coordinates
    // for padding entries may be negative, so they are not recorded).
    std::vector<std::size_t> coord;
};

struct WeightRef {
    std::size_t row;
    std::size_t col;
    // Row-major offset into the kernel tensor (or pooling window / FFN matrix).
    std::size_t kernel_offset;
};

struct LoweredForm {
    Matrix weight;  // W'
    Vector input;   // x'
    std::size_t output_len = 0;
    std::vector<InputSource> input_map;
    std::vector<WeightRef> weight_map;
    TensorShape source_shape;
    TensorShape output_shape;
    std::vector<Axis> input_order;
    std::vector<Axis> output_order;
    // Rows of W' per input channel block and columns per output channel
    // block; 0 when the form has no channel block structure.
    std::size_t input_block = 0;
    std::size_t output_block = 0;
    std::string layout;

    Vector result() const;
};

// W^T x. ShapeError when W has a row count different from x's length.
Vector diamond(const Matrix& w, const Vector& x);

// Layout orders used for flattening activations of a given shape.
std::vector<Axis> canonical_order(const TensorShape& s);

LoweredForm lower_conv2d_1_O(const Tensor& x, const ref::ConvParams& p, const Tensor& w);
LoweredForm lower_conv2d_I_O(const Tensor& x, const ref::ConvParams& p, const Tensor& w);
LoweredForm lower_conv3d(const Tensor& x, const ref::ConvParams& p, const Tensor& w);
LoweredForm lower_mean_pool(const Tensor& x, const ref::PoolParams& p);
LoweredForm lower_patchify(const Tensor& x, std::size_t patch_h, std::size_t patch_w);

struct FfnLowering {
    LoweredForm hidden;  // x' = flatten(X), W' = blockdiag(W_2)
    Vector hidden_bias;  // b_2 tiled over tokens
    LoweredForm output;  // x' = sigma(hidden.result() + hidden_bias), W' = blockdiag(W_3)
    Vector output_bias;  // b_3 tiled over tokens

    Vector result() const;
};

FfnLowering lower_ffn(const Matrix& x, const ref::AttnParams& p, ref::Activation act = ref::Activation::ReLU);

// M(X) with matvec(M(X), flatten(X)) = flatten(mha_direct(X)). The attention
// probabilities are computed once, from X.
Matrix extract_mha_effective_matrix(const Matrix& x, const ref::AttnParams& p);
// Same matrix wrapped as a lowered form (W' = M(X)^T, x' = flatten(X)).
LoweredForm lower_mha(const Matrix& x, const ref::AttnParams& p);

// The matvec operator of a lowered form acting on the unpadded source
// flattened in input_order: output_len x source size.
Matrix operator_matrix(const LoweredForm& f);

// Deletes whole channel blocks: W' rows of the listed input channels and
// columns of the listed output channels. ShapeError when the form has no
// block structure or an index is out of range.
Matrix delete_channel_blocks(const LoweredForm& f, const std::vector<std::size_t>& input_channels,
                             const std::vector<std::size_t>& output_channels);

}  // namespace uatcv::lowering
