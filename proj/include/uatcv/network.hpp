// Copyright (C) 2026 The uatcv Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "uatcv/lowering.hpp"
#include "uatcv/reference_ops.hpp"
#include "uatcv/symbolic.hpp"
#include "uatcv/tensor.hpp"

// Network descriptions: the JSON spec file, shape inference, parameter
// instantiation, direct evaluation and the symbolic view of a whole network.
// The file format is documented in docs/spec-format.md.
namespace uatcv::net {

enum class LayerKind { Conv2d, Conv3d, MeanPool, ResidualBlock, Patchify, Mha, Ffn, TransformerBlock };

std::string_view layer_kind_name(LayerKind k) noexcept;

struct LayerSpec {
    LayerKind kind = LayerKind::Conv2d;
    std::size_t in_channels = 0;      // conv: inferred when the file omits it
    std::size_t out_channels = 0;     // conv
    std::vector<std::size_t> kernel;  // conv (2 or 3 extents), residual_block (2, odd)
    std::size_t stride = 1;           // conv, mean_pool
    std::size_t padding = 0;          // conv
    bool bias = true;                 // conv
    bool activate = true;             // conv: sigma after the layer
    std::vector<std::size_t> window;  // mean_pool
    std::vector<std::size_t> patch;   // patchify
    std::size_t heads = 1;            // mha, transformer_block
    std::size_t hidden = 0;           // ffn, transformer_block
    // conv only: explicit kernel (C_O, C_I, k...) row-major and bias values
    std::optional<std::vector<double>> weights;
    std::optional<std::vector<double>> bias_values;

    friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct NetworkSpec {
    TensorShape input_shape;
    std::uint64_t seed = 0;
    ref::Activation activation = ref::Activation::ReLU;
    std::vector<LayerSpec> layers;
    // Inferred: shapes[k] is the input of layer k, shapes.back() the output.
    std::vector<TensorShape> shapes;

    const TensorShape& output_shape() const { return shapes.back(); }

    friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

// ParseError for malformed documents, ValidationError when the shape chain
// breaks or a stage exceeds the element cap.
NetworkSpec parse_spec(std::string_view text);
// IoError when the file cannot be read.
NetworkSpec load_spec(const std::string& path);
// Re-runs shape inference in place (after an edit such as pruning).
void validate(NetworkSpec& spec);
// Canonical JSON with every field explicit.
std::string emit_spec(const NetworkSpec& spec);

// Convolution geometry of layer k; for residual blocks, either convolution.
ref::ConvParams conv_params(const NetworkSpec& spec, std::size_t k);
ref::PoolParams pool_params(const LayerSpec& l);
// Elements of the largest dense matrix any lowering of layer k builds.
std::size_t lowered_elements(const NetworkSpec& spec, std::size_t k);

struct LayerParams {
    Tensor weight;  // conv kernel; residual first kernel
    std::optional<Vector> bias;
    Tensor weight2;  // residual second kernel
    std::optional<Vector> bias2;
    ref::AttnParams attn;  // mha, ffn, transformer_block
};

struct Network {
    NetworkSpec spec;
    std::vector<LayerParams> params;
};

// Parameters drawn uniformly from [-1, 1) with seeds derived from
// (spec.seed, layer + 1, slot), unless the spec gives explicit values.
Network instantiate(const NetworkSpec& spec);
Tensor random_input(const NetworkSpec& spec, std::uint64_t seed);

// Flattening used for activations everywhere: lowering::canonical_order.
Vector flat(const Tensor& t);

Tensor forward_layer(const Network& n, std::size_t k, const Tensor& x);
// The input followed by every layer output.
std::vector<Tensor> forward_trace(const Network& n, const Tensor& x);
Tensor forward(const Network& n, const Tensor& x);

// Lowered forms of layer k at input x, in evaluation order
// (conv: one; residual: two; ffn: two; transformer: mha + two).
std::vector<lowering::LoweredForm> lower_layer(const Network& n, std::size_t k, const Tensor& x);
// The layer output rebuilt from its lowered forms, biases and activation.
Vector lowered_layer_output(const Network& n, std::size_t k, const Tensor& x);

// Symbolic view of the first `layers` layers (all when empty).
sym::ExprPtr to_symbolic(const NetworkSpec& spec, std::optional<std::size_t> layers = std::nullopt);
// Conventional atom names for pure residual or pure transformer stacks.
sym::Namer namer_for(const NetworkSpec& spec, std::optional<std::size_t> layers = std::nullopt);
sym::CanonicalUAT expand_network(const NetworkSpec& spec, std::optional<std::size_t> layers = std::nullopt);
// Binds every layer parameter as the dense operator acting on flattened
// activations, and the input x'_i.
sym::Binding bind_network(const Network& n, const Tensor& x);

}  // namespace uatcv::net
