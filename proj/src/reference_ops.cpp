// Copyright (C) 2026 The uatcv Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "uatcv/reference_ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace uatcv::ref {

std::string_view activation_name(Activation a) noexcept {
    switch (a) {
        case Activation::ReLU: return "relu";
        case Activation::Identity: return "identity";
        case Activation::Logistic: return "logistic";
    }
    return "relu";
}

Activation parse_activation(std::string_view name) {
    if (name == "relu") return Activation::ReLU;
    if (name == "identity") return Activation::Identity;
    if (name == "logistic") return Activation::Logistic;
    throw ParseError(std::nullopt, "unknown activation '" + std::string(name) + "'");
}

double activate(Activation a, double v) noexcept {
    switch (a) {
        case Activation::ReLU: return v > 0.0 ? v : 0.0;
        case Activation::Identity: return v;
        case Activation::Logistic: return 1.0 / (1.0 + std::exp(-v));
    }
    return v;
}

Vector activate(Activation a, const Vector& v) {
    Vector out = v;
    for (double& x : out.values()) x = activate(a, x);
    return out;
}

Matrix activate(Activation a, const Matrix& m) {
    Matrix out = m;
    for (double& x : out.values()) x = activate(a, x);
    return out;
}

TensorShape ConvParams::weight_shape() const {
    if (kernel.size() != 2 && kernel.size() != 3) throw ShapeError("kernel must have 2 or 3 extents");
    std::vector<Dim> dims = {{Axis::CO, out_channels}, {Axis::CI, in_channels}, {Axis::H, kernel[0]}, {Axis::W, kernel[1]}};
    if (kernel.size() == 3) dims.push_back({Axis::D, kernel[2]});
    return TensorShape(std::move(dims));
}

std::size_t ConvParams::output_extent(std::size_t k, std::size_t in) const {
    if (stride == 0) throw ShapeError("stride must be at least 1");
    const std::size_t padded = in + 2 * padding;
    if (kernel.at(k) == 0 || kernel[k] > padded) {
        throw ShapeError("kernel extent " + std::to_string(kernel[k]) + " exceeds padded input extent " +
                         std::to_string(padded));
    }
    return (padded - kernel[k]) / stride + 1;
}

namespace {

void check_conv(const Tensor& x, const ConvParams& p, const Tensor& w, std::size_t spatial) {
    const auto& xs = x.shape();
    if (p.kernel.size() != spatial) throw ShapeError("kernel rank does not match convolution rank");
    if (xs.rank() != spatial + 1 || !is_channel_axis(xs.axis(0)) || xs.axis(1) != Axis::H || xs.axis(2) != Axis::W ||
        (spatial == 3 && xs.axis(3) != Axis::D)) {
        throw ShapeError("convolution input must be channel-first (C,H,W" + std::string(spatial == 3 ? ",D" : "") +
                         "), got " + xs.to_string());
    }
    if (xs.extent(0) != p.in_channels) {
        throw ShapeError("input has " + std::to_string(xs.extent(0)) + " channels, convolution expects " +
                         std::to_string(p.in_channels));
    }
    if (w.shape() != p.weight_shape()) {
        throw ShapeError("weight shape " + w.shape().to_string() + " does not match " + p.weight_shape().to_string());
    }
    if (p.bias && p.bias->size() != p.out_channels) throw ShapeError("bias length must equal out_channels");
}

// Shared body for 2D and 3D; spatial extents padded to 3 with 1s.
Tensor conv_nd(const Tensor& x, const ConvParams& p, const Tensor& w, std::size_t spatial) {
    check_conv(x, p, w, spatial);
    const auto& xs = x.shape();
    std::size_t in[3] = {1, 1, 1}, k[3] = {1, 1, 1}, out[3] = {1, 1, 1};
    for (std::size_t a = 0; a < spatial; ++a) {
        in[a] = xs.extent(a + 1);
        k[a] = p.kernel[a];
        out[a] = p.output_extent(a, in[a]);
    }
    // Depth never pads in the 2D case.
    const std::size_t pad[3] = {p.padding, p.padding, spatial == 3 ? p.padding : 0};

    std::vector<Dim> odims = {{Axis::CO, p.out_channels}, {Axis::H, out[0]}, {Axis::W, out[1]}};
    if (spatial == 3) odims.push_back({Axis::D, out[2]});
    TensorShape oshape(std::move(odims));
    std::vector<double> y(oshape.size(), 0.0);

    auto xv = x.values();
    auto wv = w.values();
    std::size_t yi = 0;
    for (std::size_t o = 0; o < p.out_channels; ++o) {
        const double b = p.bias ? (*p.bias)[o] : 0.0;
        for (std::size_t i = 0; i < out[0]; ++i) {
            for (std::size_t j = 0; j < out[1]; ++j) {
                for (std::size_t l = 0; l < out[2]; ++l, ++yi) {
                    double acc = 0.0;
                    for (std::size_t c = 0; c < p.in_channels; ++c) {
                        for (std::size_t a = 0; a < k[0]; ++a) {
                            const long r = static_cast<long>(i * p.stride + a) - static_cast<long>(pad[0]);
                            if (r < 0 || r >= static_cast<long>(in[0])) continue;
                            for (std::size_t bb = 0; bb < k[1]; ++bb) {
                                const long s = static_cast<long>(j * p.stride + bb) - static_cast<long>(pad[1]);
                                if (s < 0 || s >= static_cast<long>(in[1])) continue;
                                for (std::size_t e = 0; e < k[2]; ++e) {
                                    const long t = static_cast<long>(l * p.stride + e) - static_cast<long>(pad[2]);
                                    if (t < 0 || t >= static_cast<long>(in[2])) continue;
                                    const std::size_t xo = ((c * in[0] + r) * in[1] + s) * in[2] + t;
                                    const std::size_t wo = (((o * p.in_channels + c) * k[0] + a) * k[1] + bb) * k[2] + e;
                                    acc += wv[wo] * xv[xo];
                                }
                            }
                        }
                    }
                    y[yi] = acc + b;
                }
            }
        }
    }
    return Tensor(std::move(oshape), std::move(y));
}

}  // namespace

Tensor conv2d_direct(const Tensor& x, const ConvParams& p, const Tensor& w) { return conv_nd(x, p, w, 2); }

Tensor conv3d_direct(const Tensor& x, const ConvParams& p, const Tensor& w) { return conv_nd(x, p, w, 3); }

Tensor mean_pool_direct(const Tensor& x, const PoolParams& p) {
    const auto& xs = x.shape();
    if (xs.rank() != 3 || !is_channel_axis(xs.axis(0)) || xs.axis(1) != Axis::H || xs.axis(2) != Axis::W) {
        throw ShapeError("mean pooling expects (C,H,W), got " + xs.to_string());
    }
    if (p.stride == 0 || p.window_h == 0 || p.window_w == 0) throw ShapeError("pooling window and stride must be positive");
    const std::size_t C = xs.extent(0), H = xs.extent(1), W = xs.extent(2);
    if (p.window_h > H || p.window_w > W) throw ShapeError("pooling window exceeds input extent");
    const std::size_t Ho = (H - p.window_h) / p.stride + 1;
    const std::size_t Wo = (W - p.window_w) / p.stride + 1;
    TensorShape oshape{{xs.axis(0), C}, {Axis::H, Ho}, {Axis::W, Wo}};
    std::vector<double> y(oshape.size());
    auto xv = x.values();
    const double inv = 1.0 / static_cast<double>(p.window_h * p.window_w);
    std::size_t yi = 0;
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t i = 0; i < Ho; ++i) {
            for (std::size_t j = 0; j < Wo; ++j) {
                double acc = 0.0;
                for (std::size_t a = 0; a < p.window_h; ++a)
                    for (std::size_t b = 0; b < p.window_w; ++b)
                        acc += xv[(c * H + i * p.stride + a) * W + j * p.stride + b];
                y[yi++] = acc * inv;
            }
        }
    }
    return Tensor(std::move(oshape), std::move(y));
}

namespace {

struct ImageLayout {
    std::size_t H, W, C;
    bool channel_first;
};

ImageLayout image_layout(const TensorShape& s) {
    if (s.rank() == 2 && s.axis(0) == Axis::H && s.axis(1) == Axis::W) return {s.extent(0), s.extent(1), 1, false};
    if (s.rank() == 3 && s.axis(0) == Axis::H && s.axis(1) == Axis::W && is_channel_axis(s.axis(2)))
        return {s.extent(0), s.extent(1), s.extent(2), false};
    if (s.rank() == 3 && is_channel_axis(s.axis(0)) && s.axis(1) == Axis::H && s.axis(2) == Axis::W)
        return {s.extent(1), s.extent(2), s.extent(0), true};
    throw ShapeError("patchify expects (H,W), (H,W,C) or (C,H,W), got " + s.to_string());
}

// Offset into the image data for pixel (r, c) channel ch.
std::size_t image_offset(const ImageLayout& l, std::size_t r, std::size_t c, std::size_t ch) {
    return l.channel_first ? (ch * l.H + r) * l.W + c : (r * l.W + c) * l.C + ch;
}

void check_patch(const ImageLayout& l, std::size_t ph, std::size_t pw) {
    if (ph == 0 || pw == 0 || l.H % ph != 0 || l.W % pw != 0) {
        throw ShapeError("patch " + std::to_string(ph) + "x" + std::to_string(pw) + " does not divide image " +
                         std::to_string(l.H) + "x" + std::to_string(l.W));
    }
}

}  // namespace

Matrix patchify(const Tensor& x, std::size_t patch_h, std::size_t patch_w) {
    const ImageLayout l = image_layout(x.shape());
    check_patch(l, patch_h, patch_w);
    const std::size_t gh = l.H / patch_h, gw = l.W / patch_w;
    Matrix out(gh * gw, patch_h * patch_w * l.C);
    auto xv = x.values();
    for (std::size_t pi = 0; pi < gh; ++pi)
        for (std::size_t pj = 0; pj < gw; ++pj) {
            std::size_t col = 0;
            for (std::size_t a = 0; a < patch_h; ++a)
                for (std::size_t b = 0; b < patch_w; ++b)
                    for (std::size_t ch = 0; ch < l.C; ++ch)
                        out(pi * gw + pj, col++) = xv[image_offset(l, pi * patch_h + a, pj * patch_w + b, ch)];
        }
    return out;
}

Tensor unpatchify(const Matrix& patches, const TensorShape& image, std::size_t patch_h, std::size_t patch_w) {
    const ImageLayout l = image_layout(image);
    check_patch(l, patch_h, patch_w);
    const std::size_t gh = l.H / patch_h, gw = l.W / patch_w;
    if (patches.rows() != gh * gw || patches.cols() != patch_h * patch_w * l.C) {
        throw ShapeError("patch matrix does not match image shape");
    }
    std::vector<double> data(image.size());
    for (std::size_t pi = 0; pi < gh; ++pi)
        for (std::size_t pj = 0; pj < gw; ++pj) {
            std::size_t col = 0;
            for (std::size_t a = 0; a < patch_h; ++a)
                for (std::size_t b = 0; b < patch_w; ++b)
                    for (std::size_t ch = 0; ch < l.C; ++ch)
                        data[image_offset(l, pi * patch_h + a, pj * patch_w + b, ch)] = patches(pi * gw + pj, col++);
        }
    return Tensor(image, std::move(data));
}

void AttnParams::validate_attention() const {
    const std::size_t d = model_dim;
    if (d == 0) throw ShapeError("model dimension must be positive");
    if (heads == 0 || d % heads != 0) throw ShapeError("head count must divide the model dimension");
    for (const Matrix* m : {&w_q, &w_k, &w_v, &w_o}) {
        if (m->rows() != d || m->cols() != d) throw ShapeError("attention projections must be d x d");
    }
}

void AttnParams::validate_ffn() const {
    const std::size_t d = model_dim;
    if (d == 0) throw ShapeError("model dimension must be positive");
    if (w_2.rows() != d || w_2.cols() == 0) throw ShapeError("W_2 must be d x d_ff");
    if (w_3.rows() != w_2.cols() || w_3.cols() != d) throw ShapeError("W_3 must be d_ff x d");
    if (b_2.size() != w_2.cols() || b_3.size() != d) throw ShapeError("FFN bias lengths must be d_ff and d");
}

std::vector<Matrix> attention_probabilities(const Matrix& x, const AttnParams& p) {
    p.validate_attention();
    if (x.cols() != p.model_dim) throw ShapeError("token width does not match model dimension");
    const std::size_t n = x.rows(), dk = p.head_dim();
    const Matrix q = matmul(x, p.w_q);
    const Matrix k = matmul(x, p.w_k);
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dk));
    std::vector<Matrix> probs;
    probs.reserve(p.heads);
    for (std::size_t h = 0; h < p.heads; ++h) {
        Matrix a(n, n);
        for (std::size_t t = 0; t < n; ++t) {
            double mx = -INFINITY;
            for (std::size_t s = 0; s < n; ++s) {
                double logit = 0.0;
                for (std::size_t e = h * dk; e < (h + 1) * dk; ++e) logit += q(t, e) * k(s, e);
                a(t, s) = logit * inv_sqrt;
                mx = std::max(mx, a(t, s));
            }
            double z = 0.0;
            for (std::size_t s = 0; s < n; ++s) {
                a(t, s) = std::exp(a(t, s) - mx);
                z += a(t, s);
            }
            for (std::size_t s = 0; s < n; ++s) a(t, s) /= z;
        }
        probs.push_back(std::move(a));
    }
    return probs;
}

Matrix mha_direct(const Matrix& x, const AttnParams& p) {
    const auto probs = attention_probabilities(x, p);
    const std::size_t n = x.rows(), d = p.model_dim, dk = p.head_dim();
    const Matrix v = matmul(x, p.w_v);
    Matrix concat(n, d);
    for (std::size_t h = 0; h < p.heads; ++h)
        for (std::size_t t = 0; t < n; ++t)
            for (std::size_t e = h * dk; e < (h + 1) * dk; ++e) {
                double acc = 0.0;
                for (std::size_t s = 0; s < n; ++s) acc += probs[h](t, s) * v(s, e);
                concat(t, e) = acc;
            }
    return matmul(concat, p.w_o);
}

Matrix ffn_direct(const Matrix& x, const AttnParams& p, Activation act) {
    p.validate_ffn();
    if (x.cols() != p.model_dim) throw ShapeError("token width does not match model dimension");
    Matrix hidden = matmul(x, p.w_2);
    for (std::size_t t = 0; t < hidden.rows(); ++t)
        for (std::size_t f = 0; f < hidden.cols(); ++f) hidden(t, f) = activate(act, hidden(t, f) + p.b_2[f]);
    Matrix out = matmul(hidden, p.w_3);
    for (std::size_t t = 0; t < out.rows(); ++t)
        for (std::size_t f = 0; f < out.cols(); ++f) out(t, f) += p.b_3[f];
    return out;
}

}  // namespace uatcv::ref
