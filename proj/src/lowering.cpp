// Copyright (C) 2026 The uatcv Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "uatcv/lowering.hpp"

#include <algorithm>
#include <array>
#include <set>

namespace uatcv::lowering {

Vector LoweredForm::result() const { return diamond(weight, input); }

Vector diamond(const Matrix& w, const Vector& x) {
    if (w.rows() != x.size()) {
        throw ShapeError("diamond: W' has " + std::to_string(w.rows()) + " rows but x' has length " +
                         std::to_string(x.size()));
    }
    return matvec(transpose(w), x);
}

std::vector<Axis> canonical_order(const TensorShape& s) {
    std::vector<Axis> order;
    for (const auto& d : s.dims()) order.push_back(d.axis);
    if (s.rank() == 4 && s.axis(3) == Axis::D) order = {s.axis(0), Axis::D, Axis::H, Axis::W};
    return order;
}

namespace {

// Extents kept in lowering order (D, H, W); 2D uses D = 1.
using Ext3 = std::array<std::size_t, 3>;

LoweredForm lower_conv(const Tensor& x, const ref::ConvParams& p, const Tensor& w, std::size_t spatial) {
    // Run the direct op's validation first so both paths reject the same inputs.
    const Tensor y = spatial == 2 ? ref::conv2d_direct(x, p, w) : ref::conv3d_direct(x, p, w);
    const auto& xs = x.shape();
    const std::size_t CI = p.in_channels, CO = p.out_channels, pad = p.padding, s = p.stride;

    Ext3 in{1, xs.extent(1), xs.extent(2)};
    Ext3 k{1, p.kernel[0], p.kernel[1]};
    Ext3 padv{0, pad, pad};
    if (spatial == 3) {
        in[0] = xs.extent(3);
        k[0] = p.kernel[2];
        padv[0] = pad;
    }
    Ext3 padded, out;
    for (int a = 0; a < 3; ++a) {
        padded[a] = in[a] + 2 * padv[a];
        out[a] = (padded[a] - k[a]) / s + 1;
    }
    const std::size_t in_plane = padded[0] * padded[1] * padded[2];
    const std::size_t out_plane = out[0] * out[1] * out[2];
    const std::size_t src_plane = in[0] * in[1] * in[2];

    LoweredForm f;
    f.source_shape = xs;
    f.output_shape = y.shape();
    f.input_order = canonical_order(xs);
    f.output_order = canonical_order(y.shape());
    f.output_len = CO * out_plane;
    f.input_block = in_plane;
    f.output_block = out_plane;
    f.layout = spatial == 3 ? "x' = zero-padded (C_I, D, H, W); y' = (C_O, D, H, W)"
                            : "x' = zero-padded (C_I, H, W); y' = (C_O, H, W)";
    f.weight = Matrix(CI * in_plane, f.output_len);
    f.input = Vector(CI * in_plane);
    f.input_map.resize(CI * in_plane);

    auto xv = x.values();
    for (std::size_t c = 0; c < CI; ++c)
        for (std::size_t pd = 0; pd < padded[0]; ++pd)
            for (std::size_t ph = 0; ph < padded[1]; ++ph)
                for (std::size_t pw = 0; pw < padded[2]; ++pw) {
                    const std::size_t row = c * in_plane + (pd * padded[1] + ph) * padded[2] + pw;
                    const bool inside = pd >= padv[0] && pd < padv[0] + in[0] && ph >= padv[1] &&
                                        ph < padv[1] + in[1] && pw >= padv[2] && pw < padv[2] + in[2];
                    if (!inside) continue;
                    const std::size_t d = pd - padv[0], h = ph - padv[1], ww = pw - padv[2];
                    InputSource& src = f.input_map[row];
                    src.flat = c * src_plane + (d * in[1] + h) * in[2] + ww;
                    if (spatial == 3) {
                        src.coord = {c, h, ww, d};
                        f.input[row] = xv[((c * in[1] + h) * in[2] + ww) * in[0] + d];
                    } else {
                        src.coord = {c, h, ww};
                        f.input[row] = xv[(c * in[1] + h) * in[2] + ww];
                    }
                }

    auto wv = w.values();
    for (std::size_t o = 0; o < CO; ++o)
        for (std::size_t od = 0; od < out[0]; ++od)
            for (std::size_t oh = 0; oh < out[1]; ++oh)
                for (std::size_t ow = 0; ow < out[2]; ++ow) {
                    const std::size_t col = o * out_plane + (od * out[1] + oh) * out[2] + ow;
                    for (std::size_t c = 0; c < CI; ++c)
                        for (std::size_t kd = 0; kd < k[0]; ++kd)
                            for (std::size_t kh = 0; kh < k[1]; ++kh)
                                for (std::size_t kw = 0; kw < k[2]; ++kw) {
                                    const std::size_t pd = od * s + kd, ph = oh * s + kh, pw = ow * s + kw;
                                    const std::size_t row = c * in_plane + (pd * padded[1] + ph) * padded[2] + pw;
                                    // Kernel tensor is (C_O, C_I, k_h, k_w[, k_d]).
                                    const std::size_t koff =
                                        (((o * CI + c) * k[1] + kh) * k[2] + kw) * k[0] + kd;
                                    f.weight(row, col) = wv[koff];
                                    f.weight_map.push_back({row, col, koff});
                                }
                }
    return f;
}

}  // namespace

LoweredForm lower_conv2d_1_O(const Tensor& x, const ref::ConvParams& p, const Tensor& w) {
    if (p.in_channels != 1) throw ShapeError("1-O lowering requires a single input channel");
    return lower_conv(x, p, w, 2);
}

LoweredForm lower_conv2d_I_O(const Tensor& x, const ref::ConvParams& p, const Tensor& w) { return lower_conv(x, p, w, 2); }

LoweredForm lower_conv3d(const Tensor& x, const ref::ConvParams& p, const Tensor& w) { return lower_conv(x, p, w, 3); }

LoweredForm lower_mean_pool(const Tensor& x, const ref::PoolParams& p) {
    const Tensor y = ref::mean_pool_direct(x, p);
    const auto& xs = x.shape();
    const std::size_t C = xs.extent(0), H = xs.extent(1), W = xs.extent(2);
    const std::size_t Ho = y.shape().extent(1), Wo = y.shape().extent(2);
    const double inv = 1.0 / static_cast<double>(p.window_h * p.window_w);

    LoweredForm f;
    f.source_shape = xs;
    f.output_shape = y.shape();
    f.input_order = canonical_order(xs);
    f.output_order = canonical_order(y.shape());
    f.output_len = y.size();
    f.input_block = H * W;
    f.output_block = Ho * Wo;
    f.layout = "x' = (C, H, W); y' = (C, H_out, W_out)";
    f.weight = Matrix(C * H * W, f.output_len);
    f.input = flatten(x);
    f.input_map.resize(C * H * W);
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t h = 0; h < H; ++h)
            for (std::size_t w = 0; w < W; ++w) {
                const std::size_t row = (c * H + h) * W + w;
                f.input_map[row] = {row, {c, h, w}};
            }
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < Ho; ++i)
            for (std::size_t j = 0; j < Wo; ++j) {
                const std::size_t col = (c * Ho + i) * Wo + j;
                for (std::size_t a = 0; a < p.window_h; ++a)
                    for (std::size_t b = 0; b < p.window_w; ++b) {
                        const std::size_t row = (c * H + i * p.stride + a) * W + j * p.stride + b;
                        f.weight(row, col) = inv;
                        f.weight_map.push_back({row, col, a * p.window_w + b});
                    }
            }
    return f;
}

LoweredForm lower_patchify(const Tensor& x, std::size_t patch_h, std::size_t patch_w) {
    const Matrix y = ref::patchify(x, patch_h, patch_w);
    const auto& xs = x.shape();
    // Patchify the index image to learn where every source element lands.
    std::vector<double> ids(xs.size());
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<double>(i);
    const Matrix where = ref::patchify(Tensor(xs, std::move(ids)), patch_h, patch_w);

    LoweredForm f;
    f.source_shape = xs;
    f.output_shape = TensorShape{{Axis::Token, y.rows()}, {Axis::Feature, y.cols()}};
    f.input_order = canonical_order(xs);
    f.output_order = {Axis::Token, Axis::Feature};
    f.output_len = y.size();
    f.layout = "x' = source row-major; y' = (token, feature)";
    f.weight = Matrix(xs.size(), f.output_len);
    f.input = flatten(x);
    f.input_map.resize(xs.size());
    const auto strides = xs.strides();
    for (std::size_t row = 0; row < xs.size(); ++row) {
        std::vector<std::size_t> coord(xs.rank());
        for (std::size_t a = 0; a < xs.rank(); ++a) coord[a] = (row / strides[a]) % xs.extent(a);
        f.input_map[row] = {row, std::move(coord)};
    }
    auto wv = where.values();
    for (std::size_t col = 0; col < wv.size(); ++col) {
        const auto row = static_cast<std::size_t>(wv[col]);
        f.weight(row, col) = 1.0;
        f.weight_map.push_back({row, col, 0});
    }
    return f;
}

namespace {

Vector tile(const Vector& v, std::size_t times) {
    Vector out(v.size() * times);
    for (std::size_t t = 0; t < times; ++t)
        for (std::size_t i = 0; i < v.size(); ++i) out[t * v.size() + i] = v[i];
    return out;
}

// Block-diagonal lowering of a row-wise map X -> X M.
LoweredForm lower_rowwise(const Matrix& x, const Matrix& m) {
    if (x.cols() != m.rows()) throw ShapeError("row-wise map: token width does not match matrix");
    const std::size_t n = x.rows(), din = m.rows(), dout = m.cols();
    LoweredForm f;
    f.source_shape = TensorShape{{Axis::Token, n}, {Axis::Feature, din}};
    f.output_shape = TensorShape{{Axis::Token, n}, {Axis::Feature, dout}};
    f.input_order = {Axis::Token, Axis::Feature};
    f.output_order = {Axis::Token, Axis::Feature};
    f.output_len = n * dout;
    f.layout = "x' = (token, feature); W' = blockdiag over tokens";
    f.weight = Matrix(n * din, n * dout);
    f.input = Vector(std::vector<double>(x.values().begin(), x.values().end()));
    f.input_map.resize(n * din);
    for (std::size_t t = 0; t < n; ++t)
        for (std::size_t e = 0; e < din; ++e) f.input_map[t * din + e] = {t * din + e, {t, e}};
    for (std::size_t t = 0; t < n; ++t)
        for (std::size_t e = 0; e < din; ++e)
            for (std::size_t g = 0; g < dout; ++g) {
                f.weight(t * din + e, t * dout + g) = m(e, g);
                f.weight_map.push_back({t * din + e, t * dout + g, e * dout + g});
            }
    return f;
}

}  // namespace

Vector FfnLowering::result() const { return add(output.result(), output_bias); }

FfnLowering lower_ffn(const Matrix& x, const ref::AttnParams& p, ref::Activation act) {
    p.validate_ffn();
    if (x.cols() != p.model_dim) throw ShapeError("token width does not match model dimension");
    const std::size_t n = x.rows();
    FfnLowering r;
    r.hidden = lower_rowwise(x, p.w_2);
    r.hidden_bias = tile(p.b_2, n);
    const Vector h = ref::activate(act, add(r.hidden.result(), r.hidden_bias));
    r.output = lower_rowwise(Matrix(n, p.ffn_dim(), h.raw()), p.w_3);
    r.output_bias = tile(p.b_3, n);
    return r;
}

Matrix extract_mha_effective_matrix(const Matrix& x, const ref::AttnParams& p) {
    const auto probs = ref::attention_probabilities(x, p);
    const std::size_t n = x.rows(), d = p.model_dim, dk = p.head_dim();
    // Per head, the d x d map (W_V restricted to the head's columns) W_O.
    std::vector<Matrix> head_maps;
    for (std::size_t h = 0; h < p.heads; ++h) {
        Matrix vo(d, d);
        for (std::size_t e = 0; e < d; ++e)
            for (std::size_t f = 0; f < d; ++f) {
                double acc = 0.0;
                for (std::size_t k = h * dk; k < (h + 1) * dk; ++k) acc += p.w_v(e, k) * p.w_o(k, f);
                vo(e, f) = acc;
            }
        head_maps.push_back(std::move(vo));
    }
    Matrix m(n * d, n * d);
    for (std::size_t t = 0; t < n; ++t)
        for (std::size_t s = 0; s < n; ++s)
            for (std::size_t h = 0; h < p.heads; ++h) {
                const double a = probs[h](t, s);
                for (std::size_t f = 0; f < d; ++f)
                    for (std::size_t e = 0; e < d; ++e) m(t * d + f, s * d + e) += a * head_maps[h](e, f);
            }
    return m;
}

LoweredForm lower_mha(const Matrix& x, const ref::AttnParams& p) {
    const Matrix m = extract_mha_effective_matrix(x, p);
    const std::size_t n = x.rows(), d = p.model_dim;
    LoweredForm f;
    f.source_shape = TensorShape{{Axis::Token, n}, {Axis::Feature, d}};
    f.output_shape = f.source_shape;
    f.input_order = {Axis::Token, Axis::Feature};
    f.output_order = f.input_order;
    f.output_len = n * d;
    f.layout = "x' = (token, feature); W' = M(X)^T, input-dependent";
    f.weight = transpose(m);
    f.input = Vector(std::vector<double>(x.values().begin(), x.values().end()));
    f.input_map.resize(n * d);
    for (std::size_t t = 0; t < n; ++t)
        for (std::size_t e = 0; e < d; ++e) f.input_map[t * d + e] = {t * d + e, {t, e}};
    return f;
}

Matrix operator_matrix(const LoweredForm& f) {
    const std::size_t n = f.source_shape.size();
    Matrix m(f.output_len, n);
    for (std::size_t row = 0; row < f.weight.rows(); ++row) {
        const auto& src = f.input_map.at(row).flat;
        if (!src) continue;
        for (std::size_t col = 0; col < f.output_len; ++col) m(col, *src) += f.weight(row, col);
    }
    return m;
}

Matrix delete_channel_blocks(const LoweredForm& f, const std::vector<std::size_t>& input_channels,
                             const std::vector<std::size_t>& output_channels) {
    if (f.input_block == 0 || f.output_block == 0) throw ShapeError("lowered form has no channel blocks");
    const std::size_t cin = f.weight.rows() / f.input_block;
    const std::size_t cout = f.weight.cols() / f.output_block;
    const std::set<std::size_t> drop_in(input_channels.begin(), input_channels.end());
    const std::set<std::size_t> drop_out(output_channels.begin(), output_channels.end());
    if ((!drop_in.empty() && *drop_in.rbegin() >= cin) || (!drop_out.empty() && *drop_out.rbegin() >= cout)) {
        throw ShapeError("channel index out of range");
    }
    if (drop_in.size() >= cin || drop_out.size() >= cout) throw ShapeError("cannot delete every channel block");
    std::vector<std::size_t> rows, cols;
    for (std::size_t r = 0; r < f.weight.rows(); ++r)
        if (!drop_in.count(r / f.input_block)) rows.push_back(r);
    for (std::size_t c = 0; c < f.weight.cols(); ++c)
        if (!drop_out.count(c / f.output_block)) cols.push_back(c);
    Matrix out(rows.size(), cols.size());
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < cols.size(); ++j) out(i, j) = f.weight(rows[i], cols[j]);
    return out;
}

}  // namespace uatcv::lowering
