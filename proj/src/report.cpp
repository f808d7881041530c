// Copyright (C) 2026 The uatcv Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "uatcv/report.hpp"

#include <algorithm>
#include <map>
#include <sstream>

#include "json.hpp"
#include "uatcv/analysis.hpp"

namespace uatcv::report {

using json = nlohmann::ordered_json;
using net::LayerKind;
using net::Network;
using net::NetworkSpec;

namespace {

NetworkSpec seeded(const NetworkSpec& spec, const Options& o) {
    NetworkSpec s = spec;
    if (o.seed) s.seed = *o.seed;
    return s;
}

Tensor sample_input(const NetworkSpec& spec, std::uint64_t stream) {
    return net::random_input(spec, derive_seed(spec.seed, 0, stream));
}

json form_stats(const lowering::LoweredForm& f) {
    json j;
    j["rows"] = f.weight.rows();
    j["cols"] = f.weight.cols();
    j["nonzeros"] = count_nonzeros(f.weight);
    j["output_len"] = f.output_len;
    j["layout"] = f.layout;
    if (f.weight_map.empty()) {
        j["kernel_elements"] = nullptr;
        j["uses_per_element"] = nullptr;
    } else {
        std::map<std::size_t, std::size_t> uses;
        for (const auto& w : f.weight_map) ++uses[w.kernel_offset];
        std::size_t lo = SIZE_MAX, hi = 0;
        for (const auto& [off, n] : uses) {
            (void)off;
            lo = std::min(lo, n);
            hi = std::max(hi, n);
        }
        j["kernel_elements"] = uses.size();
        j["uses_per_element"] = {{"min", lo}, {"max", hi}};
    }
    return j;
}

json lowering_json(const NetworkSpec& spec) {
    const Network n = net::instantiate(spec);
    const auto trace = net::forward_trace(n, sample_input(spec, 1));
    json layers = json::array();
    for (std::size_t k = 0; k < spec.layers.size(); ++k) {
        json j;
        j["layer"] = k;
        j["type"] = net::layer_kind_name(spec.layers[k].kind);
        j["input_shape"] = spec.shapes[k].to_string();
        j["output_shape"] = spec.shapes[k + 1].to_string();
        json forms = json::array();
        for (const auto& f : net::lower_layer(n, k, trace[k])) forms.push_back(form_stats(f));
        j["forms"] = forms;
        j["max_abs_diff"] = max_abs_diff(net::lowered_layer_output(n, k, trace[k]), net::flat(trace[k + 1]));
        layers.push_back(j);
    }
    return layers;
}

json verification_json(const NetworkSpec& spec, const Options& o, bool& failed) {
    if (o.trials == 0) throw SpecError("at least one trial is required");
    if (!(o.tol >= 0)) throw RangeError("tolerance must be non-negative");
    const sym::CanonicalUAT form = net::expand_network(spec);
    std::vector<double> layer_diff(spec.layers.size(), 0.0);
    double canonical = 0.0;
    for (std::size_t t = 0; t < o.trials; ++t) {
        NetworkSpec st = spec;
        st.seed = derive_seed(spec.seed, t + 1, 1);
        const Network n = net::instantiate(st);
        const Tensor x = net::random_input(st, derive_seed(spec.seed, t + 1, 2));
        const auto trace = net::forward_trace(n, x);
        for (std::size_t k = 0; k < spec.layers.size(); ++k) {
            const double d = max_abs_diff(net::lowered_layer_output(n, k, trace[k]), net::flat(trace[k + 1]));
            layer_diff[k] = std::max(layer_diff[k], d);
        }
        const Vector g = sym::evaluate(form, net::bind_network(n, x));
        canonical = std::max(canonical, max_abs_diff(g, net::flat(trace.back())));
    }
    json layers = json::array();
    bool ok = true;
    for (std::size_t k = 0; k < spec.layers.size(); ++k) {
        const bool pass = layer_diff[k] <= o.tol;
        ok = ok && pass;
        layers.push_back({{"layer", k},
                          {"type", net::layer_kind_name(spec.layers[k].kind)},
                          {"max_abs_diff", layer_diff[k]},
                          {"passed", pass}});
    }
    const bool cpass = canonical <= o.tol;
    ok = ok && cpass;
    failed = !ok;
    json j;
    j["trials"] = o.trials;
    j["tol"] = o.tol;
    j["layers"] = layers;
    j["canonical"] = {{"max_abs_diff", canonical}, {"passed", cpass}};
    j["passed"] = ok;
    return j;
}

json expansion_json(const NetworkSpec& spec) {
    const sym::ExprPtr e = net::to_symbolic(spec);
    const sym::CanonicalUAT form = sym::expand(e, net::namer_for(spec));
    json j;
    j["expression"] = {{"text", sym::emit(e, sym::Format::Text)}, {"latex", sym::emit(e, sym::Format::Latex)}};
    j["canonical"] = {{"text", sym::emit(form, sym::Format::Text)}, {"latex", sym::emit(form, sym::Format::Latex)}};
    j["N"] = form.N();
    j["units"] = form.total_units();
    return j;
}

struct AtomRow {
    std::string role, text, latex, kind, dependence;
    std::size_t rows = 0, cols = 0;
    bool merged = false, varies = false;
    std::vector<std::string> sources;
};

std::vector<AtomRow> classification_rows(const NetworkSpec& spec) {
    const sym::CanonicalUAT form = net::expand_network(spec);
    const Network n = net::instantiate(spec);
    const sym::Binding b1 = net::bind_network(n, sample_input(spec, 1));
    const sym::Binding b2 = net::bind_network(n, sample_input(spec, 2));
    std::vector<AtomRow> rows;
    for (const auto& c : sym::classify_params(form)) {
        const auto& a = c.atom;
        AtomRow r;
        r.role = c.role;
        r.text = sym::render(a.symbol, a.decoration(), sym::Format::Text);
        r.latex = sym::render(a.symbol, a.decoration(), sym::Format::Latex);
        r.kind = a.kind == sym::AtomKind::Weight ? "weight" : "bias";
        r.dependence = sym::dependence_name(a.dependence);
        r.rows = a.rows;
        r.cols = a.cols;
        r.merged = a.merged;
        r.sources = a.sources;
        r.varies = max_abs_diff(sym::evaluate_atom(a, b1), sym::evaluate_atom(a, b2)) != 0.0;
        rows.push_back(std::move(r));
    }
    return rows;
}

json classification_json(const std::vector<AtomRow>& rows) {
    json out = json::array();
    for (const auto& r : rows) {
        out.push_back({{"role", r.role},
                       {"atom", r.text},
                       {"latex", r.latex},
                       {"kind", r.kind},
                       {"rows", r.rows},
                       {"cols", r.cols},
                       {"merged", r.merged},
                       {"dependence", r.dependence},
                       {"varies_with_input", r.varies},
                       {"sources", r.sources}});
    }
    return out;
}

std::string latex_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '_' || c == '&' || c == '%' || c == '#') out += '\\';
        out += c;
    }
    return out;
}

std::string classification_table(const std::vector<AtomRow>& rows, sym::Format f) {
    std::ostringstream ss;
    if (f == sym::Format::Latex) {
        ss << "\\begin{tabular}{llllr}\n"
           << "atom & kind & dependence & role & dims \\\\\n\\hline\n";
        for (const auto& r : rows) {
            ss << "$" << r.latex << "$ & " << r.kind << " & " << r.dependence << " & " << latex_escape(r.role)
               << " & $" << r.rows << "\\times " << r.cols << "$ \\\\\n";
        }
        ss << "\\end{tabular}\n";
        return ss.str();
    }
    auto pad = [](const std::string& s, std::size_t w) {
        // combining marks take no column
        std::size_t cols = 0;
        for (std::size_t i = 0; i < s.size(); ++i) {
            const auto c = static_cast<unsigned char>(s[i]);
            if ((c & 0xC0) == 0x80) continue;
            if (c == 0xCC && i + 1 < s.size()) {
                const auto d = static_cast<unsigned char>(s[i + 1]);
                if (d >= 0x80 && d <= 0xAF) continue;
            }
            ++cols;
        }
        return s + std::string(cols < w ? w - cols : 1, ' ');
    };
    ss << pad("atom", 16) << pad("kind", 8) << pad("dependence", 16) << pad("dims", 12) << "role\n";
    for (const auto& r : rows) {
        ss << pad(r.text, 16) << pad(r.kind, 8) << pad(r.dependence, 16)
           << pad(std::to_string(r.rows) + "x" + std::to_string(r.cols), 12) << r.role << "\n";
    }
    return ss.str();
}

std::optional<std::pair<std::size_t, std::string>> default_lora_target(const NetworkSpec& spec) {
    for (std::size_t k = 0; k < spec.layers.size(); ++k) {
        switch (spec.layers[k].kind) {
            case LayerKind::Conv2d:
            case LayerKind::Conv3d: return std::pair{k, std::string("weight")};
            case LayerKind::ResidualBlock: return std::pair{k, std::string("weight1")};
            case LayerKind::Mha:
            case LayerKind::TransformerBlock: return std::pair{k, std::string("W_V")};
            case LayerKind::Ffn: return std::pair{k, std::string("W_2")};
            default: break;
        }
    }
    return std::nullopt;
}

json lora_json(const NetworkSpec& spec, const Options& o) {
    std::optional<std::pair<std::size_t, std::string>> target;
    if (o.lora_layer || !o.lora_target.empty()) {
        if (!o.lora_layer || o.lora_target.empty()) throw SpecError("LoRA needs both a layer and a target");
        target = std::pair{*o.lora_layer, o.lora_target};
    } else {
        target = default_lora_target(spec);
    }
    if (!target) return {{"skipped", "no adaptable layer"}};
    const Network n = net::instantiate(spec);
    const Tensor x = sample_input(spec, 1);
    const analysis::LoraDelta d =
        analysis::random_lora(n, target->first, target->second, o.lora_rank, derive_seed(spec.seed, 0, 7));
    const analysis::LoraReport r = analysis::lora_equivalence_check(n, d, x);
    analysis::LoraDelta zero = d;
    zero.b = Matrix(d.b.rows(), d.b.cols());
    const analysis::LoraReport rz = analysis::lora_equivalence_check(n, zero, x);
    json j;
    j["layer"] = d.layer;
    j["target"] = d.target;
    j["rank"] = d.rank;
    j["rank_ba"] = r.rank_ba;
    j["linearity_diff"] = r.linearity_diff ? json(*r.linearity_diff) : json(nullptr);
    j["upstream_unchanged"] = r.upstream_unchanged;
    j["layer_delta"] = r.layer_delta;
    j["output_delta"] = r.output_delta;
    j["lowered_vs_direct"] = r.lowered_vs_direct;
    j["zero_delta_output_delta"] = rz.output_delta;
    return j;
}

json impact_json(const analysis::PruneImpact& p) {
    return {{"max_deviation", p.max_deviation}, {"mean_deviation", p.mean_deviation}, {"samples", p.samples}};
}

json prune_json(const NetworkSpec& spec, const Options& o) {
    const Network n = net::instantiate(spec);
    std::vector<Tensor> inputs;
    for (std::size_t s = 0; s < 50; ++s) inputs.push_back(sample_input(spec, 100 + s));
    if (o.prune_layer) {
        const analysis::PruneMask m{*o.prune_layer, o.prune_channels};
        json j;
        j["layer"] = m.layer;
        j["channels"] = m.channels;
        j["commutation_diff"] = analysis::prune_commutation_diff(n, m);
        j["impact"] = impact_json(analysis::prune_impact(n, m, inputs));
        return j;
    }
    for (std::size_t k = 0; k < spec.layers.size(); ++k) {
        const auto& l = spec.layers[k];
        if ((l.kind != LayerKind::Conv2d && l.kind != LayerKind::Conv3d) || l.out_channels < 2) continue;
        const auto order = analysis::channels_by_magnitude(n, k);
        const analysis::PruneMask lo{k, {order.front()}}, hi{k, {order.back()}};
        try {
            json j;
            j["layer"] = k;
            j["min_magnitude_channel"] = order.front();
            j["max_magnitude_channel"] = order.back();
            j["commutation_diff"] = std::max(analysis::prune_commutation_diff(n, lo), analysis::prune_commutation_diff(n, hi));
            const auto ilo = analysis::prune_impact(n, lo, inputs);
            const auto ihi = analysis::prune_impact(n, hi, inputs);
            j["impact_min_magnitude"] = impact_json(ilo);
            j["impact_max_magnitude"] = impact_json(ihi);
            j["max_magnitude_hurts_more"] = ihi.max_deviation >= ilo.max_deviation;
            return j;
        } catch (const SpecError&) {
            continue;
        }
    }
    return {{"skipped", "no prunable convolution"}};
}

json analysis_json(const NetworkSpec& spec, const Options& o) {
    json j;
    {
        json terms = json::array();
        for (const auto& t : analysis::count_uat_terms(spec))
            terms.push_back({{"layers", t.layers}, {"N", t.n}, {"units", t.units}});
        j["uat_terms"] = terms;
    }
    try {
        json rf = json::array();
        for (const auto& e : analysis::receptive_field(spec))
            rf.push_back({{"layer", e.layer}, {"rf", e.rf}, {"jump", e.jump}});
        j["receptive_field"] = rf;
    } catch (const SpecError& e) {
        j["receptive_field"] = {{"skipped", e.what()}};
    }
    j["lora"] = lora_json(spec, o);
    j["pruning"] = prune_json(spec, o);
    return j;
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

json header(const NetworkSpec& spec, const char* command) {
    json j;
    j["tool"] = "uatcv";
    j["version"] = kVersion;
    j["command"] = command;
    j["seed"] = spec.seed;
    return j;
}

}  // namespace

Output cmd_lower(const NetworkSpec& spec0, const Options& o) {
    const NetworkSpec spec = seeded(spec0, o);
    json j = header(spec, "lower");
    j["layers"] = lowering_json(spec);
    return {dump(j), {}, false};
}

Output cmd_verify(const NetworkSpec& spec0, const Options& o) {
    const NetworkSpec spec = seeded(spec0, o);
    bool failed = false;
    json j = header(spec, "verify");
    j["verification"] = verification_json(spec, o, failed);
    return {dump(j), {}, failed};
}

Output cmd_expand(const NetworkSpec& spec0, const Options& o) {
    const NetworkSpec spec = seeded(spec0, o);
    return {sym::emit(net::expand_network(spec), o.format) + "\n", {}, false};
}

Output cmd_classify(const NetworkSpec& spec0, const Options& o) {
    const NetworkSpec spec = seeded(spec0, o);
    return {classification_table(classification_rows(spec), o.format), {}, false};
}

Output cmd_analyze(const NetworkSpec& spec0, const Options& o) {
    const NetworkSpec spec = seeded(spec0, o);
    json j = header(spec, "analyze");
    j["analysis"] = analysis_json(spec, o);
    return {dump(j), {}, false};
}

Output cmd_report(const NetworkSpec& spec0, const Options& o) {
    const NetworkSpec spec = seeded(spec0, o);
    bool failed = false;
    const auto rows = classification_rows(spec);
    json j = header(spec, "report");
    j["spec"] = json::parse(net::emit_spec(spec));
    j["lowering"] = lowering_json(spec);
    j["verification"] = verification_json(spec, o, failed);
    j["expansion"] = expansion_json(spec);
    j["classification"] = classification_json(rows);
    j["analysis"] = analysis_json(spec, o);

    std::ostringstream tex;
    tex << "% uatcv " << kVersion << " report, seed " << spec.seed << "\n"
        << "\\begin{equation}\n"
        << "G(\\mathbf{x}'_{i}) = " << j["expansion"]["canonical"]["latex"].get<std::string>() << "\n"
        << "\\end{equation}\n\n"
        << classification_table(rows, sym::Format::Latex);
    return {dump(j), tex.str(), failed};
}

}  // namespace uatcv::report
