// Copyright (C) 2026 The uatcv Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <optional>
#include <string_view>
#include <vector>

#include "uatcv/tensor.hpp"

// Direct loop implementations of every layer. These are the ground truth the
// lowered and symbolic forms are checked against.
namespace uatcv::ref {

enum class Activation { ReLU, Identity, Logistic };

std::string_view activation_name(Activation a) noexcept;
Activation parse_activation(std::string_view name);
double activate(Activation a, double v) noexcept;
Vector activate(Activation a, const Vector& v);
Matrix activate(Activation a, const Matrix& m);

struct ConvParams {
    std::size_t in_channels = 1;
    std::size_t out_channels = 1;
    // (k_h, k_w) for 2D, (k_h, k_w, k_d) for 3D.
    std::vector<std::size_t> kernel;
    std::size_t stride = 1;
    std::size_t padding = 0;
    std::optional<Vector> bias;

    std::size_t spatial_rank() const noexcept { return kernel.size(); }
    // Weight tensor shape (C_O, C_I, k_h, k_w[, k_d]).
    TensorShape weight_shape() const;
    // Output extent along spatial axis `k` for input extent `in`.
    std::size_t output_extent(std::size_t k, std::size_t in) const;
};

struct PoolParams {
    std::size_t window_h = 2;
    std::size_t window_w = 2;
    std::size_t stride = 2;
};

struct AttnParams {
    std::size_t model_dim = 0;
    std::size_t heads = 1;
    Matrix w_q, w_k, w_v, w_o;  // d x d, applied on the right of token rows
    Matrix w_2;                 // d x d_ff
    Matrix w_3;                 // d_ff x d
    Vector b_2;                 // d_ff
    Vector b_3;                 // d

    std::size_t head_dim() const noexcept { return model_dim / heads; }
    std::size_t ffn_dim() const noexcept { return w_2.cols(); }
    // ShapeError when the attention matrices are missing or non-conforming.
    void validate_attention() const;
    void validate_ffn() const;
};

// Channel-first image tensor (C, H, W) -> (C_O, H_out, W_out).
Tensor conv2d_direct(const Tensor& x, const ConvParams& p, const Tensor& w);
// (C, H, W, D) -> (C_O, H_out, W_out, D_out).
Tensor conv3d_direct(const Tensor& x, const ConvParams& p, const Tensor& w);
// Channels pooled independently; no padding.
Tensor mean_pool_direct(const Tensor& x, const PoolParams& p);

// Accepts (H, W), (H, W, C) or (C, H, W). Row k holds patch k of the
// row-major patch grid, flattened as (row, column, channel) with the channel
// fastest.
Matrix patchify(const Tensor& x, std::size_t patch_h, std::size_t patch_w);
// Inverse of patchify for the given image shape.
Tensor unpatchify(const Matrix& patches, const TensorShape& image, std::size_t patch_h, std::size_t patch_w);

// Softmax(Q K^T / sqrt(d/h)) per head, rows = queries.
std::vector<Matrix> attention_probabilities(const Matrix& x, const AttnParams& p);
Matrix mha_direct(const Matrix& x, const AttnParams& p);
// sigma(X W_2 + b_2) W_3 + b_3, row-wise.
Matrix ffn_direct(const Matrix& x, const AttnParams& p, Activation act);

}  // namespace uatcv::ref
