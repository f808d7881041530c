// Copyright (C) 2026 The uatcv Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "uatcv/network.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "json.hpp"

namespace uatcv::net {

using json = nlohmann::ordered_json;

namespace {

constexpr std::size_t kMaxField = std::size_t{1} << 31;

struct KindInfo {
    LayerKind kind;
    const char* name;
    std::set<std::string> keys;
};

const std::vector<KindInfo>& kinds() {
    static const std::vector<KindInfo> table = {
        {LayerKind::Conv2d, "conv2d",
         {"type", "in_channels", "out_channels", "kernel", "stride", "padding", "bias", "activate", "weights",
          "bias_values"}},
        {LayerKind::Conv3d, "conv3d",
         {"type", "in_channels", "out_channels", "kernel", "stride", "padding", "bias", "activate", "weights",
          "bias_values"}},
        {LayerKind::MeanPool, "mean_pool", {"type", "window", "stride"}},
        {LayerKind::ResidualBlock, "residual_block", {"type", "kernel"}},
        {LayerKind::Patchify, "patchify", {"type", "patch"}},
        {LayerKind::Mha, "mha", {"type", "heads"}},
        {LayerKind::Ffn, "ffn", {"type", "hidden"}},
        {LayerKind::TransformerBlock, "transformer_block", {"type", "heads", "hidden"}},
    };
    return table;
}

const KindInfo& info(LayerKind k) {
    for (const auto& i : kinds())
        if (i.kind == k) return i;
    throw InternalError("unknown layer kind");
}

bool is_conv(LayerKind k) { return k == LayerKind::Conv2d || k == LayerKind::Conv3d; }

// -- reading ----------------------------------------------------------------

struct Reader {
    const json& obj;
    std::optional<std::size_t> layer;

    [[noreturn]] void fail(const std::string& why) const { throw ParseError(layer, why); }

    bool has(const char* key) const { return obj.contains(key); }

    std::size_t count(const char* key, std::size_t def, std::size_t min) const {
        if (!has(key)) return def;
        return number(obj.at(key), key, min);
    }

    std::size_t number(const json& v, const std::string& what, std::size_t min) const {
        if (!v.is_number_integer()) fail("'" + what + "' must be an integer");
        if (v.is_number_unsigned()) {
            const auto u = v.get<std::uint64_t>();
            if (u > kMaxField) fail("'" + what + "' is too large");
            if (u < min) fail("'" + what + "' must be at least " + std::to_string(min));
            return static_cast<std::size_t>(u);
        }
        const auto s = v.get<std::int64_t>();
        if (s < static_cast<std::int64_t>(min)) fail("'" + what + "' must be at least " + std::to_string(min));
        if (static_cast<std::uint64_t>(s) > kMaxField) fail("'" + what + "' is too large");
        return static_cast<std::size_t>(s);
    }

    std::vector<std::size_t> extents(const char* key, std::size_t n_min, std::size_t n_max) const {
        if (!has(key)) fail("missing '" + std::string(key) + "'");
        const json& v = obj.at(key);
        if (!v.is_array()) fail("'" + std::string(key) + "' must be an array");
        if (v.size() < n_min || v.size() > n_max) {
            fail("'" + std::string(key) + "' must have " + std::to_string(n_min) +
                 (n_min == n_max ? "" : " to " + std::to_string(n_max)) + " entries");
        }
        std::vector<std::size_t> out;
        for (const auto& e : v) out.push_back(number(e, key, 1));
        return out;
    }

    bool flag(const char* key, bool def) const {
        if (!has(key)) return def;
        if (!obj.at(key).is_boolean()) fail("'" + std::string(key) + "' must be true or false");
        return obj.at(key).get<bool>();
    }

    std::optional<std::vector<double>> reals(const char* key) const {
        if (!has(key)) return std::nullopt;
        const json& v = obj.at(key);
        if (!v.is_array()) fail("'" + std::string(key) + "' must be an array of numbers");
        if (v.size() > kMaxField) fail("'" + std::string(key) + "' is too long");
        std::vector<double> out;
        out.reserve(v.size());
        for (const auto& e : v) {
            if (!e.is_number()) fail("'" + std::string(key) + "' must be an array of numbers");
            const double d = e.get<double>();
            if (!std::isfinite(d)) fail("'" + std::string(key) + "' holds a non-finite value");
            out.push_back(d);
        }
        return out;
    }
};

LayerSpec read_layer(const json& j, std::size_t index) {
    Reader r{j, index};
    if (!j.is_object()) r.fail("layer must be an object");
    if (!j.contains("type")) r.fail("missing 'type'");
    if (!j.at("type").is_string()) r.fail("'type' must be a string");
    const std::string type = j.at("type").get<std::string>();
    const KindInfo* ki = nullptr;
    for (const auto& i : kinds())
        if (type == i.name) ki = &i;
    if (!ki) r.fail("unknown layer type '" + type + "'");
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (!ki->keys.count(key)) r.fail("unknown field '" + key + "' for " + type);
    }

    LayerSpec l;
    l.kind = ki->kind;
    switch (l.kind) {
        case LayerKind::Conv2d:
        case LayerKind::Conv3d: {
            const std::size_t rank = l.kind == LayerKind::Conv2d ? 2 : 3;
            l.in_channels = r.count("in_channels", 0, 1);
            if (!r.has("out_channels")) r.fail("missing 'out_channels'");
            l.out_channels = r.count("out_channels", 0, 1);
            l.kernel = r.extents("kernel", rank, rank);
            l.stride = r.count("stride", 1, 1);
            l.padding = r.count("padding", 0, 0);
            l.bias = r.flag("bias", true);
            l.activate = r.flag("activate", true);
            l.weights = r.reals("weights");
            l.bias_values = r.reals("bias_values");
            if (l.bias_values && !l.bias) r.fail("'bias_values' given for a layer without bias");
            break;
        }
        case LayerKind::MeanPool:
            l.window = r.extents("window", 2, 2);
            l.stride = r.count("stride", l.window[0], 1);
            break;
        case LayerKind::ResidualBlock:
            l.kernel = r.has("kernel") ? r.extents("kernel", 2, 2) : std::vector<std::size_t>{3, 3};
            if (l.kernel[0] % 2 == 0 || l.kernel[1] % 2 == 0) r.fail("residual kernel extents must be odd");
            if (l.kernel[0] != l.kernel[1]) r.fail("residual kernel must be square");
            break;
        case LayerKind::Patchify:
            l.patch = r.extents("patch", 2, 2);
            break;
        case LayerKind::Mha:
            l.heads = r.count("heads", 1, 1);
            break;
        case LayerKind::Ffn:
            if (!r.has("hidden")) r.fail("missing 'hidden'");
            l.hidden = r.count("hidden", 0, 1);
            break;
        case LayerKind::TransformerBlock:
            l.heads = r.count("heads", 1, 1);
            if (!r.has("hidden")) r.fail("missing 'hidden'");
            l.hidden = r.count("hidden", 0, 1);
            break;
    }
    return l;
}

// -- shape inference --------------------------------------------------------

std::size_t mul_sat(std::size_t a, std::size_t b) {
    if (a != 0 && b > std::numeric_limits<std::size_t>::max() / a) return std::numeric_limits<std::size_t>::max();
    return a * b;
}

[[noreturn]] void invalid(std::size_t k, const std::string& why) { throw ValidationError(k, why); }

std::string prev(std::size_t k) { return k == 0 ? "the input" : "layer " + std::to_string(k - 1); }

void require_image(const TensorShape& s, std::size_t k, std::size_t spatial, const char* what) {
    const bool ok = s.rank() == spatial + 1 && is_channel_axis(s.axis(0)) && s.axis(1) == Axis::H &&
                    s.axis(2) == Axis::W && (spatial == 2 || s.axis(3) == Axis::D);
    if (!ok) {
        invalid(k, std::string(what) + " needs a " + (spatial == 2 ? "(C, H, W)" : "(C, H, W, D)") +
                       " input but " + prev(k) + " produces " + s.to_string());
    }
}

void require_tokens(const TensorShape& s, std::size_t k, const char* what) {
    if (s.rank() != 2 || s.axis(0) != Axis::Token || s.axis(1) != Axis::Feature) {
        invalid(k, std::string(what) + " needs a (token, feature) input but " + prev(k) + " produces " + s.to_string());
    }
}

// The FFN hidden activation must fit under the cap as well.
void check_hidden(const TensorShape& s, std::size_t hidden) {
    TensorShape h({{Axis::Token, s.extent(0)}, {Axis::Feature, hidden}});
    (void)h;
}

TensorShape infer(const NetworkSpec& spec, std::size_t k, LayerSpec& l) {
    const TensorShape& s = spec.shapes[k];
    switch (l.kind) {
        case LayerKind::Conv2d:
        case LayerKind::Conv3d: {
            const std::size_t spatial = l.kernel.size();
            require_image(s, k, spatial, info(l.kind).name);
            const std::size_t c = s.extent(0);
            if (l.in_channels != 0 && l.in_channels != c) {
                invalid(k, "expects " + std::to_string(l.in_channels) + " input channels but " + prev(k) +
                               " produces " + std::to_string(c));
            }
            l.in_channels = c;
            ref::ConvParams p = conv_params(spec, k);
            p.in_channels = c;
            std::vector<Dim> out{{Axis::CO, l.out_channels}};
            const Axis names[] = {Axis::H, Axis::W, Axis::D};
            for (std::size_t a = 0; a < spatial; ++a) {
                const std::size_t in = s.extent(a + 1);
                if (l.padding > in) invalid(k, "padding exceeds the input extent");
                if (l.kernel[a] > in + 2 * l.padding) {
                    invalid(k, "kernel extent " + std::to_string(l.kernel[a]) + " exceeds padded input extent " +
                                   std::to_string(in + 2 * l.padding));
                }
                out.push_back({names[a], p.output_extent(a, in)});
            }
            const std::size_t wsize = mul_sat(mul_sat(l.out_channels, c), mul_sat(l.kernel[0], mul_sat(l.kernel[1], spatial == 3 ? l.kernel[2] : 1)));
            if (l.weights && l.weights->size() != wsize) {
                invalid(k, "'weights' has " + std::to_string(l.weights->size()) + " values, expected " +
                               std::to_string(wsize));
            }
            if (l.bias_values && l.bias_values->size() != l.out_channels) {
                invalid(k, "'bias_values' has " + std::to_string(l.bias_values->size()) + " values, expected " +
                               std::to_string(l.out_channels));
            }
            return TensorShape(out);
        }
        case LayerKind::MeanPool: {
            require_image(s, k, 2, "mean_pool");
            if (l.window[0] > s.extent(1) || l.window[1] > s.extent(2)) invalid(k, "pooling window exceeds the input");
            return TensorShape({{s.axis(0), s.extent(0)},
                                {Axis::H, (s.extent(1) - l.window[0]) / l.stride + 1},
                                {Axis::W, (s.extent(2) - l.window[1]) / l.stride + 1}});
        }
        case LayerKind::ResidualBlock:
            require_image(s, k, 2, "residual_block");
            if (l.kernel[0] > 2 * s.extent(1) + 1 || l.kernel[1] > 2 * s.extent(2) + 1) {
                invalid(k, "residual kernel exceeds the padded input");
            }
            return s;
        case LayerKind::Patchify: {
            std::size_t h = 0, w = 0, c = 1;
            if (s.rank() == 2 && s.axis(0) == Axis::H && s.axis(1) == Axis::W) {
                h = s.extent(0), w = s.extent(1);
            } else if (s.rank() == 3 && s.axis(0) == Axis::H && s.axis(1) == Axis::W && is_channel_axis(s.axis(2))) {
                h = s.extent(0), w = s.extent(1), c = s.extent(2);
            } else if (s.rank() == 3 && is_channel_axis(s.axis(0)) && s.axis(1) == Axis::H && s.axis(2) == Axis::W) {
                c = s.extent(0), h = s.extent(1), w = s.extent(2);
            } else {
                invalid(k, "patchify needs an (H, W), (H, W, C) or (C, H, W) input but " + prev(k) + " produces " +
                               s.to_string());
            }
            if (h % l.patch[0] != 0 || w % l.patch[1] != 0) invalid(k, "patch size does not divide the image");
            return TensorShape({{Axis::Token, (h / l.patch[0]) * (w / l.patch[1])},
                                {Axis::Feature, l.patch[0] * l.patch[1] * c}});
        }
        case LayerKind::Mha:
        case LayerKind::TransformerBlock:
            require_tokens(s, k, info(l.kind).name);
            if (s.extent(1) % l.heads != 0) {
                invalid(k, std::to_string(l.heads) + " heads do not divide feature width " + std::to_string(s.extent(1)));
            }
            if (l.kind == LayerKind::TransformerBlock) check_hidden(s, l.hidden);
            return s;
        case LayerKind::Ffn:
            require_tokens(s, k, "ffn");
            check_hidden(s, l.hidden);
            return s;
    }
    throw InternalError("unhandled layer kind");
}

}  // namespace

std::string_view layer_kind_name(LayerKind k) noexcept {
    for (const auto& i : kinds())
        if (i.kind == k) return i.name;
    return "?";
}

ref::ConvParams conv_params(const NetworkSpec& spec, std::size_t k) {
    const LayerSpec& l = spec.layers.at(k);
    ref::ConvParams p;
    if (is_conv(l.kind)) {
        p.in_channels = l.in_channels;
        p.out_channels = l.out_channels;
        p.kernel = l.kernel;
        p.stride = l.stride;
        p.padding = l.padding;
    } else if (l.kind == LayerKind::ResidualBlock) {
        const std::size_t c = spec.shapes.at(k).extent(0);
        p.in_channels = p.out_channels = c;
        p.kernel = l.kernel;
        p.stride = 1;
        p.padding = (l.kernel[0] - 1) / 2;
        if (l.kernel[0] != l.kernel[1]) throw SpecError("residual blocks need a square kernel");
    } else {
        throw SpecError("layer " + std::to_string(k) + " is not a convolution");
    }
    return p;
}

ref::PoolParams pool_params(const LayerSpec& l) {
    if (l.kind != LayerKind::MeanPool) throw SpecError("not a pooling layer");
    return {l.window[0], l.window[1], l.stride};
}

std::size_t lowered_elements(const NetworkSpec& spec, std::size_t k) {
    const LayerSpec& l = spec.layers.at(k);
    const TensorShape& in = spec.shapes.at(k);
    const TensorShape& out = spec.shapes.at(k + 1);
    const std::size_t dense = mul_sat(in.size(), out.size());
    switch (l.kind) {
        case LayerKind::Conv2d:
        case LayerKind::Conv3d:
        case LayerKind::ResidualBlock: {
            const std::size_t pad = l.kind == LayerKind::ResidualBlock ? (l.kernel[0] - 1) / 2 : l.padding;
            std::size_t padded = in.extent(0);
            for (std::size_t a = 1; a < in.rank(); ++a) padded = mul_sat(padded, in.extent(a) + 2 * pad);
            return std::max(dense, mul_sat(padded, out.size()));
        }
        case LayerKind::Ffn:
        case LayerKind::TransformerBlock: {
            const std::size_t wide = mul_sat(in.extent(0), l.hidden);
            return std::max(mul_sat(in.size(), in.size()), mul_sat(wide, in.size()));
        }
        default: return dense;
    }
}

void validate(NetworkSpec& spec) {
    if (spec.layers.empty()) throw ValidationError(std::nullopt, "a network needs at least one layer");
    spec.shapes.assign(1, spec.input_shape);
    for (std::size_t k = 0; k < spec.layers.size(); ++k) {
        try {
            spec.shapes.push_back(infer(spec, k, spec.layers[k]));
        } catch (const CapacityError& e) {
            invalid(k, std::string("output exceeds the element cap: ") + e.what());
        } catch (const ShapeError& e) {
            invalid(k, e.what());
        }
        if (lowered_elements(spec, k) > element_cap()) {
            invalid(k, "lowered operator of " + std::to_string(lowered_elements(spec, k)) +
                           " elements exceeds the element cap of " + std::to_string(element_cap()));
        }
    }
}

NetworkSpec parse_spec(std::string_view text) {
    json doc;
    try {
        doc = json::parse(text.begin(), text.end());
    } catch (const json::exception& e) {
        throw ParseError(std::nullopt, std::string("malformed JSON: ") + e.what());
    }
    Reader top{doc, std::nullopt};
    if (!doc.is_object()) top.fail("top level must be an object");
    for (const auto& [key, value] : doc.items()) {
        (void)value;
        if (key != "input_shape" && key != "seed" && key != "activation" && key != "layers") {
            top.fail("unknown top-level field '" + key + "'");
        }
    }

    NetworkSpec spec;
    if (!doc.contains("input_shape")) top.fail("missing 'input_shape'");
    const json& shape = doc.at("input_shape");
    if (!shape.is_array() || shape.empty()) top.fail("'input_shape' must be a non-empty array");
    std::vector<Dim> dims;
    for (const auto& d : shape) {
        if (!d.is_object() || !d.contains("axis") || !d.contains("extent") || d.size() != 2) {
            top.fail("'input_shape' entries must be {\"axis\", \"extent\"} objects");
        }
        if (!d.at("axis").is_string()) top.fail("'axis' must be a string");
        Axis a;
        try {
            a = parse_axis(d.at("axis").get<std::string>());
        } catch (const ParseError& e) {
            top.fail(e.reason());
        }
        dims.push_back({a, top.number(d.at("extent"), "extent", 1)});
    }
    try {
        spec.input_shape = TensorShape(dims);
    } catch (const ShapeError& e) {
        throw ValidationError(std::nullopt, std::string("input_shape: ") + e.what());
    } catch (const CapacityError& e) {
        throw ValidationError(std::nullopt, std::string("input_shape: ") + e.what());
    }

    if (doc.contains("seed")) {
        const json& s = doc.at("seed");
        if (!s.is_number_integer() || (!s.is_number_unsigned() && s.get<std::int64_t>() < 0)) {
            top.fail("'seed' must be a non-negative integer");
        }
        spec.seed = s.get<std::uint64_t>();
    }
    if (doc.contains("activation")) {
        if (!doc.at("activation").is_string()) top.fail("'activation' must be a string");
        try {
            spec.activation = ref::parse_activation(doc.at("activation").get<std::string>());
        } catch (const Error& e) {
            top.fail(e.what());
        }
    }
    if (!doc.contains("layers")) top.fail("missing 'layers'");
    const json& layers = doc.at("layers");
    if (!layers.is_array()) top.fail("'layers' must be an array");
    for (std::size_t k = 0; k < layers.size(); ++k) spec.layers.push_back(read_layer(layers[k], k));
    validate(spec);
    return spec;
}

NetworkSpec load_spec(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_spec(ss.str());
}

std::string emit_spec(const NetworkSpec& spec) {
    json doc;
    json shape = json::array();
    for (const auto& d : spec.input_shape.dims()) shape.push_back({{"axis", axis_name(d.axis)}, {"extent", d.extent}});
    doc["input_shape"] = shape;
    doc["seed"] = spec.seed;
    doc["activation"] = ref::activation_name(spec.activation);
    json layers = json::array();
    for (const auto& l : spec.layers) {
        json j;
        j["type"] = layer_kind_name(l.kind);
        switch (l.kind) {
            case LayerKind::Conv2d:
            case LayerKind::Conv3d:
                j["in_channels"] = l.in_channels;
                j["out_channels"] = l.out_channels;
                j["kernel"] = l.kernel;
                j["stride"] = l.stride;
                j["padding"] = l.padding;
                j["bias"] = l.bias;
                j["activate"] = l.activate;
                if (l.weights) j["weights"] = *l.weights;
                if (l.bias_values) j["bias_values"] = *l.bias_values;
                break;
            case LayerKind::MeanPool:
                j["window"] = l.window;
                j["stride"] = l.stride;
                break;
            case LayerKind::ResidualBlock: j["kernel"] = l.kernel; break;
            case LayerKind::Patchify: j["patch"] = l.patch; break;
            case LayerKind::Mha: j["heads"] = l.heads; break;
            case LayerKind::Ffn: j["hidden"] = l.hidden; break;
            case LayerKind::TransformerBlock:
                j["heads"] = l.heads;
                j["hidden"] = l.hidden;
                break;
        }
        layers.push_back(j);
    }
    doc["layers"] = layers;
    return doc.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Parameters and direct evaluation

Network instantiate(const NetworkSpec& spec) {
    Network n;
    n.spec = spec;
    for (std::size_t k = 0; k < spec.layers.size(); ++k) {
        const LayerSpec& l = spec.layers[k];
        auto seed = [&](std::uint64_t slot) { return derive_seed(spec.seed, k + 1, slot); };
        LayerParams p;
        switch (l.kind) {
            case LayerKind::Conv2d:
            case LayerKind::Conv3d: {
                const TensorShape ws = conv_params(spec, k).weight_shape();
                p.weight = l.weights ? Tensor(ws, *l.weights) : random_uniform(ws, seed(1), -1.0, 1.0);
                if (l.bias) {
                    p.bias = l.bias_values ? Vector(*l.bias_values) : random_vector(l.out_channels, seed(2), -1.0, 1.0);
                }
                break;
            }
            case LayerKind::ResidualBlock: {
                const ref::ConvParams cp = conv_params(spec, k);
                p.weight = random_uniform(cp.weight_shape(), seed(1), -1.0, 1.0);
                p.bias = random_vector(cp.out_channels, seed(2), -1.0, 1.0);
                p.weight2 = random_uniform(cp.weight_shape(), seed(3), -1.0, 1.0);
                p.bias2 = random_vector(cp.out_channels, seed(4), -1.0, 1.0);
                break;
            }
            case LayerKind::Mha:
            case LayerKind::Ffn:
            case LayerKind::TransformerBlock: {
                const std::size_t d = spec.shapes[k].extent(1);
                ref::AttnParams& a = p.attn;
                a.model_dim = d;
                a.heads = l.heads;
                if (l.kind != LayerKind::Ffn) {
                    a.w_q = random_matrix(d, d, seed(1), -1.0, 1.0);
                    a.w_k = random_matrix(d, d, seed(2), -1.0, 1.0);
                    a.w_v = random_matrix(d, d, seed(3), -1.0, 1.0);
                    a.w_o = random_matrix(d, d, seed(4), -1.0, 1.0);
                }
                if (l.kind != LayerKind::Mha) {
                    a.w_2 = random_matrix(d, l.hidden, seed(5), -1.0, 1.0);
                    a.w_3 = random_matrix(l.hidden, d, seed(6), -1.0, 1.0);
                    a.b_2 = random_vector(l.hidden, seed(7), -1.0, 1.0);
                    a.b_3 = random_vector(d, seed(8), -1.0, 1.0);
                }
                break;
            }
            case LayerKind::MeanPool:
            case LayerKind::Patchify: break;
        }
        n.params.push_back(std::move(p));
    }
    return n;
}

Tensor random_input(const NetworkSpec& spec, std::uint64_t seed) {
    return random_uniform(spec.input_shape, seed, -1.0, 1.0);
}

Vector flat(const Tensor& t) {
    const auto order = lowering::canonical_order(t.shape());
    return flatten(t, order);
}

namespace {

Tensor with_bias_act(const Tensor& y, const std::optional<Vector>& bias, std::optional<ref::Activation> act) {
    std::vector<double> v(y.values().begin(), y.values().end());
    const std::size_t plane = y.size() / y.shape().extent(0);
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (bias) v[i] += (*bias)[i / plane];
        if (act) v[i] = ref::activate(*act, v[i]);
    }
    return Tensor(y.shape(), std::move(v));
}

Tensor conv(const Tensor& x, const ref::ConvParams& p, const Tensor& w) {
    return p.spatial_rank() == 3 ? ref::conv3d_direct(x, p, w) : ref::conv2d_direct(x, p, w);
}

Tensor tokens(const Matrix& m) { return to_tensor(m, Axis::Token, Axis::Feature); }

}  // namespace

Tensor forward_layer(const Network& n, std::size_t k, const Tensor& x) {
    const NetworkSpec& spec = n.spec;
    const LayerSpec& l = spec.layers.at(k);
    const LayerParams& p = n.params.at(k);
    if (!(x.shape() == spec.shapes.at(k))) {
        throw ShapeError("layer " + std::to_string(k) + " expects " + spec.shapes[k].to_string() + ", got " +
                         x.shape().to_string());
    }
    const ref::Activation act = spec.activation;
    switch (l.kind) {
        case LayerKind::Conv2d:
        case LayerKind::Conv3d: {
            const Tensor y = conv(x, conv_params(spec, k), p.weight);
            return with_bias_act(y, p.bias, l.activate ? std::optional(act) : std::nullopt);
        }
        case LayerKind::MeanPool: return ref::mean_pool_direct(x, pool_params(l));
        case LayerKind::ResidualBlock: {
            const ref::ConvParams cp = conv_params(spec, k);
            const Tensor h = with_bias_act(conv(x, cp, p.weight), p.bias, act);
            const Tensor y = with_bias_act(conv(h, cp, p.weight2), p.bias2, std::nullopt);
            std::vector<double> v(y.values().begin(), y.values().end());
            for (std::size_t i = 0; i < v.size(); ++i) v[i] += x.values()[i];
            return Tensor(x.shape(), std::move(v));
        }
        case LayerKind::Patchify: return tokens(ref::patchify(x, l.patch[0], l.patch[1]));
        case LayerKind::Mha: return tokens(ref::mha_direct(to_matrix(x), p.attn));
        case LayerKind::Ffn: return tokens(ref::ffn_direct(to_matrix(x), p.attn, act));
        case LayerKind::TransformerBlock: {
            const Matrix m = ref::mha_direct(to_matrix(x), p.attn);
            return tokens(add(m, ref::ffn_direct(m, p.attn, act)));
        }
    }
    throw InternalError("unhandled layer kind");
}

std::vector<Tensor> forward_trace(const Network& n, const Tensor& x) {
    std::vector<Tensor> out{x};
    for (std::size_t k = 0; k < n.spec.layers.size(); ++k) out.push_back(forward_layer(n, k, out.back()));
    return out;
}

Tensor forward(const Network& n, const Tensor& x) { return forward_trace(n, x).back(); }

// ---------------------------------------------------------------------------
// Lowering

namespace {

lowering::LoweredForm lower_conv_any(const Tensor& x, const ref::ConvParams& p, const Tensor& w) {
    if (p.spatial_rank() == 3) return lowering::lower_conv3d(x, p, w);
    if (p.in_channels == 1) return lowering::lower_conv2d_1_O(x, p, w);
    return lowering::lower_conv2d_I_O(x, p, w);
}

Vector tile_blocks(const Vector& per_block, std::size_t block) {
    Vector out(per_block.size() * block);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = per_block[i / block];
    return out;
}

Vector tile_rows(const Vector& v, std::size_t times) {
    Vector out(v.size() * times);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = v[i % v.size()];
    return out;
}

}  // namespace

std::vector<lowering::LoweredForm> lower_layer(const Network& n, std::size_t k, const Tensor& x) {
    const NetworkSpec& spec = n.spec;
    const LayerSpec& l = spec.layers.at(k);
    const LayerParams& p = n.params.at(k);
    switch (l.kind) {
        case LayerKind::Conv2d:
        case LayerKind::Conv3d: return {lower_conv_any(x, conv_params(spec, k), p.weight)};
        case LayerKind::MeanPool: return {lowering::lower_mean_pool(x, pool_params(l))};
        case LayerKind::ResidualBlock: {
            const ref::ConvParams cp = conv_params(spec, k);
            const Tensor h = with_bias_act(conv(x, cp, p.weight), p.bias, spec.activation);
            return {lower_conv_any(x, cp, p.weight), lower_conv_any(h, cp, p.weight2)};
        }
        case LayerKind::Patchify: return {lowering::lower_patchify(x, l.patch[0], l.patch[1])};
        case LayerKind::Mha: return {lowering::lower_mha(to_matrix(x), p.attn)};
        case LayerKind::Ffn: {
            auto f = lowering::lower_ffn(to_matrix(x), p.attn, spec.activation);
            return {f.hidden, f.output};
        }
        case LayerKind::TransformerBlock: {
            const Matrix m = ref::mha_direct(to_matrix(x), p.attn);
            auto f = lowering::lower_ffn(m, p.attn, spec.activation);
            return {lowering::lower_mha(to_matrix(x), p.attn), f.hidden, f.output};
        }
    }
    throw InternalError("unhandled layer kind");
}

Vector lowered_layer_output(const Network& n, std::size_t k, const Tensor& x) {
    const NetworkSpec& spec = n.spec;
    const LayerSpec& l = spec.layers.at(k);
    const LayerParams& p = n.params.at(k);
    const auto forms = lower_layer(n, k, x);
    const ref::Activation act = spec.activation;
    switch (l.kind) {
        case LayerKind::Conv2d:
        case LayerKind::Conv3d: {
            Vector y = forms[0].result();
            if (p.bias) y = add(y, tile_blocks(*p.bias, forms[0].output_block));
            return l.activate ? ref::activate(act, y) : y;
        }
        case LayerKind::MeanPool:
        case LayerKind::Patchify:
        case LayerKind::Mha: return forms[0].result();
        case LayerKind::ResidualBlock: {
            // forms[1] already carries the hidden activation as its x'.
            Vector y = add(forms[1].result(), tile_blocks(*p.bias2, forms[1].output_block));
            return add(y, flat(x));
        }
        case LayerKind::Ffn: {
            const std::size_t t = x.shape().extent(0);
            return add(forms[1].result(), tile_rows(p.attn.b_3, t));
        }
        case LayerKind::TransformerBlock: {
            const std::size_t t = x.shape().extent(0);
            const Vector m = forms[0].result();
            return add(m, add(forms[2].result(), tile_rows(p.attn.b_3, t)));
        }
    }
    throw InternalError("unhandled layer kind");
}

// ---------------------------------------------------------------------------
// Symbolic view

namespace {

std::size_t prefix(const NetworkSpec& spec, std::optional<std::size_t> layers) {
    const std::size_t n = layers.value_or(spec.layers.size());
    if (n < 1 || n > spec.layers.size()) throw SpecError("layer prefix out of range");
    return n;
}

sym::Symbol sym_of(const char* letter, const std::string& sub, bool prime = true) { return {letter, sub, prime}; }

}  // namespace

sym::ExprPtr to_symbolic(const NetworkSpec& spec, std::optional<std::size_t> layers) {
    using sym::Expr;
    const std::size_t count = prefix(spec, layers);
    sym::ExprPtr x = Expr::input(sym::input_symbol(), spec.input_shape.size());
    for (std::size_t k = 0; k < count; ++k) {
        const LayerSpec& l = spec.layers[k];
        const std::string sub = sym::layer_subscript(k);
        const std::size_t in = spec.shapes[k].size(), out = spec.shapes[k + 1].size();
        switch (l.kind) {
            case LayerKind::Conv2d:
            case LayerKind::Conv3d: {
                sym::ExprPtr y = Expr::apply(Expr::weight(sym_of("W", sub), out, in), x);
                if (l.bias) y = Expr::add({y, Expr::bias(sym_of("b", sub), out)});
                x = l.activate ? Expr::activate(spec.activation, y) : y;
                break;
            }
            case LayerKind::MeanPool: x = Expr::apply(Expr::weight(sym_of("A", sub), out, in), x); break;
            case LayerKind::Patchify: x = Expr::apply(Expr::weight(sym_of("P", sub), out, in), x); break;
            case LayerKind::ResidualBlock:
                x = sym::build_residual_block(x, k, in, sym::WeightSharing::Distinct, spec.activation);
                break;
            case LayerKind::Mha: {
                const std::size_t t = spec.shapes[k].extent(0), d = spec.shapes[k].extent(1);
                x = Expr::apply(Expr::attention(sym_of("W", sub + ",1"), t, d, l.heads, x), x);
                break;
            }
            case LayerKind::Ffn: {
                const std::size_t t = spec.shapes[k].extent(0), h = t * l.hidden;
                auto hidden = Expr::activate(
                    spec.activation,
                    Expr::add({Expr::apply(Expr::weight(sym_of("W", sub + ",2"), h, in), x), Expr::bias(sym_of("b", sub + ",2"), h)}));
                x = Expr::add({Expr::apply(Expr::weight(sym_of("W", sub + ",3"), out, h), hidden),
                               Expr::bias(sym_of("b", sub + ",3"), out)});
                break;
            }
            case LayerKind::TransformerBlock: {
                sym::TransformerDims d{spec.shapes[k].extent(0), spec.shapes[k].extent(1), l.heads, l.hidden};
                x = sym::build_transformer_block(x, k, d, spec.activation);
                break;
            }
        }
    }
    return x;
}

sym::Namer namer_for(const NetworkSpec& spec, std::optional<std::size_t> layers) {
    const std::size_t count = prefix(spec, layers);
    bool residual = true, transformer = true;
    for (std::size_t k = 0; k < count; ++k) {
        residual = residual && spec.layers[k].kind == LayerKind::ResidualBlock;
        transformer = transformer && spec.layers[k].kind == LayerKind::TransformerBlock;
    }
    if (residual) return sym::residual_namer(count);
    if (transformer) return sym::transformer_namer(count);
    return sym::default_name;
}

sym::CanonicalUAT expand_network(const NetworkSpec& spec, std::optional<std::size_t> layers) {
    return sym::expand(to_symbolic(spec, layers), namer_for(spec, layers));
}

sym::Binding bind_network(const Network& n, const Tensor& x) {
    const NetworkSpec& spec = n.spec;
    sym::Binding b;
    if (!(x.shape() == spec.input_shape)) throw ShapeError("input does not match the network input shape");
    b.vectors[sym::input_symbol().key()] = flat(x);
    for (std::size_t k = 0; k < spec.layers.size(); ++k) {
        const LayerSpec& l = spec.layers[k];
        const LayerParams& p = n.params[k];
        const std::string sub = sym::layer_subscript(k);
        const Tensor probe = zeros(spec.shapes[k]);
        switch (l.kind) {
            case LayerKind::Conv2d:
            case LayerKind::Conv3d: {
                const auto f = lower_conv_any(probe, conv_params(spec, k), p.weight);
                b.weights[sym_of("W", sub).key()] = lowering::operator_matrix(f);
                if (p.bias) b.vectors[sym_of("b", sub).key()] = tile_blocks(*p.bias, f.output_block);
                break;
            }
            case LayerKind::MeanPool:
                b.weights[sym_of("A", sub).key()] =
                    lowering::operator_matrix(lowering::lower_mean_pool(probe, pool_params(l)));
                break;
            case LayerKind::Patchify:
                b.weights[sym_of("P", sub).key()] =
                    lowering::operator_matrix(lowering::lower_patchify(probe, l.patch[0], l.patch[1]));
                break;
            case LayerKind::ResidualBlock: {
                const ref::ConvParams cp = conv_params(spec, k);
                const auto f1 = lower_conv_any(probe, cp, p.weight);
                const auto f2 = lower_conv_any(probe, cp, p.weight2);
                b.weights[sym_of("W", sub + ",1").key()] = lowering::operator_matrix(f1);
                b.weights[sym_of("W", sub + ",2").key()] = lowering::operator_matrix(f2);
                b.vectors[sym_of("b", sub + ",1", false).key()] = tile_blocks(*p.bias, f1.output_block);
                b.vectors[sym_of("b", sub + ",2", false).key()] = tile_blocks(*p.bias2, f2.output_block);
                break;
            }
            case LayerKind::Mha: b.attention[sym_of("W", sub + ",1").key()] = p.attn; break;
            case LayerKind::Ffn:
            case LayerKind::TransformerBlock: {
                const std::size_t t = spec.shapes[k].extent(0);
                sym::Binding tmp;
                ref::AttnParams a = p.attn;
                if (l.kind == LayerKind::Ffn) {
                    // bind_transformer_block validates the projections too
                    const std::size_t d = a.model_dim;
                    a.w_q = a.w_k = a.w_v = a.w_o = Matrix(d, d);
                }
                sym::bind_transformer_block(tmp, k, a, t);
                for (auto& [key, m] : tmp.weights) b.weights[key] = std::move(m);
                for (auto& [key, v] : tmp.vectors) b.vectors[key] = std::move(v);
                if (l.kind == LayerKind::TransformerBlock)
                    for (auto& [key, ap] : tmp.attention) b.attention[key] = std::move(ap);
                break;
            }
        }
    }
    return b;
}

}  // namespace uatcv::net
