// Copyright (C) 2026 The uatcv Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "uatcv/symbolic.hpp"

#include <algorithm>
#include <set>
#include <unordered_map>

#include "uatcv/lowering.hpp"

namespace uatcv::sym {

const char* dependence_name(Dependence d) noexcept {
    return d == Dependence::Fixed ? "Fixed" : "InputDependent";
}

std::string Symbol::key() const { return render(*this, Decoration::None, Format::Text); }

Decoration ParamAtom::decoration() const noexcept {
    if (!merged) return Decoration::None;
    return dependence == Dependence::InputDependent ? Decoration::Hat : Decoration::Bar;
}

// ---------------------------------------------------------------------------
// Construction

namespace {

std::shared_ptr<Expr> node() { return std::make_shared<Expr>(); }

void require(bool ok, const std::string& what) {
    if (!ok) throw ShapeError(what);
}

std::string dims(const ExprPtr& e) { return std::to_string(e->rows()) + "x" + std::to_string(e->cols()); }

}  // namespace

// Expr has no public setters; the factories below are its only writers.
struct ExprBuilder {
    static std::shared_ptr<Expr> make(Op op, std::size_t rows, std::size_t cols, bool matrix) {
        auto e = node();
        e->op_ = op;
        e->rows_ = rows;
        e->cols_ = cols;
        e->matrix_ = matrix;
        return e;
    }
    static void set_symbol(Expr& e, Symbol s) { e.symbol_ = std::move(s); }
    static void set_kind(Expr& e, AtomKind k) { e.kind_ = k; }
    static void set_act(Expr& e, ref::Activation a) { e.act_ = a; }
    static void set_children(Expr& e, std::vector<ExprPtr> c) { e.children_ = std::move(c); }
    static void set_attention(Expr& e, std::size_t tokens, std::size_t heads) {
        e.tokens_ = tokens;
        e.heads_ = heads;
    }
};

ExprPtr Expr::input(Symbol s, std::size_t n) {
    require(n > 0, "input size must be positive");
    auto e = ExprBuilder::make(Op::Input, n, 1, false);
    ExprBuilder::set_symbol(*e, std::move(s));
    return e;
}

ExprPtr Expr::weight(Symbol s, std::size_t rows, std::size_t cols) {
    require(rows > 0 && cols > 0, "weight dimensions must be positive");
    auto e = ExprBuilder::make(Op::Param, rows, cols, true);
    ExprBuilder::set_symbol(*e, std::move(s));
    ExprBuilder::set_kind(*e, AtomKind::Weight);
    return e;
}

ExprPtr Expr::bias(Symbol s, std::size_t n) {
    require(n > 0, "bias size must be positive");
    auto e = ExprBuilder::make(Op::Param, n, 1, false);
    ExprBuilder::set_symbol(*e, std::move(s));
    ExprBuilder::set_kind(*e, AtomKind::Bias);
    return e;
}

ExprPtr Expr::attention(Symbol s, std::size_t tokens, std::size_t dim, std::size_t heads, ExprPtr arg) {
    require(tokens > 0 && dim > 0, "attention dimensions must be positive");
    require(heads > 0 && dim % heads == 0, "head count must divide the model dimension");
    require(arg && !arg->is_matrix() && arg->rows() == tokens * dim, "attention argument must be a token vector");
    auto e = ExprBuilder::make(Op::Attention, tokens * dim, tokens * dim, true);
    ExprBuilder::set_symbol(*e, std::move(s));
    ExprBuilder::set_attention(*e, tokens, heads);
    ExprBuilder::set_children(*e, {std::move(arg)});
    return e;
}

ExprPtr Expr::identity(std::size_t n) {
    require(n > 0, "identity size must be positive");
    return ExprBuilder::make(Op::Identity, n, n, true);
}

ExprPtr Expr::product(std::vector<ExprPtr> factors) {
    require(!factors.empty(), "empty product");
    std::vector<ExprPtr> flat;
    for (auto& f : factors) {
        require(f && f->is_matrix(), "product factors must be matrices");
        if (f->op() == Op::Product) {
            flat.insert(flat.end(), f->children().begin(), f->children().end());
        } else {
            flat.push_back(f);
        }
    }
    for (std::size_t k = 1; k < flat.size(); ++k) {
        require(flat[k - 1]->cols() == flat[k]->rows(),
                "product: " + dims(flat[k - 1]) + " times " + dims(flat[k]) + " does not conform");
    }
    const std::size_t rows = flat.front()->rows(), cols = flat.back()->cols();
    std::vector<ExprPtr> kept;
    for (auto& f : flat)
        if (f->op() != Op::Identity) kept.push_back(f);
    if (kept.empty()) return identity(rows);
    if (kept.size() == 1) return kept.front();
    auto e = ExprBuilder::make(Op::Product, rows, cols, true);
    ExprBuilder::set_children(*e, std::move(kept));
    return e;
}

ExprPtr Expr::mat_sum(std::vector<ExprPtr> terms) {
    require(!terms.empty(), "empty matrix sum");
    for (auto& t : terms) {
        require(t && t->is_matrix(), "matrix sum terms must be matrices");
        require(t->rows() == terms[0]->rows() && t->cols() == terms[0]->cols(), "matrix sum: dimensions differ");
    }
    if (terms.size() == 1) return terms.front();
    auto e = ExprBuilder::make(Op::MatSum, terms[0]->rows(), terms[0]->cols(), true);
    ExprBuilder::set_children(*e, std::move(terms));
    return e;
}

ExprPtr Expr::hconcat(std::vector<ExprPtr> blocks) {
    require(!blocks.empty(), "empty concatenation");
    std::size_t cols = 0;
    for (auto& b : blocks) {
        require(b && b->is_matrix(), "concatenated blocks must be matrices");
        require(b->rows() == blocks[0]->rows(), "concatenation: row counts differ");
        cols += b->cols();
    }
    if (blocks.size() == 1) return blocks.front();
    auto e = ExprBuilder::make(Op::HConcat, blocks[0]->rows(), cols, true);
    ExprBuilder::set_children(*e, std::move(blocks));
    return e;
}

ExprPtr Expr::apply(ExprPtr m, ExprPtr v) {
    require(m && m->is_matrix(), "apply: first operand must be a matrix");
    require(v && !v->is_matrix(), "apply: second operand must be a vector");
    require(m->cols() == v->rows(), "apply: " + dims(m) + " matrix against vector of length " + std::to_string(v->rows()));
    if (m->op() == Op::Identity) return v;
    auto e = ExprBuilder::make(Op::Apply, m->rows(), 1, false);
    ExprBuilder::set_children(*e, {std::move(m), std::move(v)});
    return e;
}

ExprPtr Expr::add(std::vector<ExprPtr> terms) {
    require(!terms.empty(), "empty sum");
    std::vector<ExprPtr> flat;
    for (auto& t : terms) {
        require(t && !t->is_matrix(), "sum terms must be vectors");
        require(t->rows() == terms[0]->rows(), "sum: vector lengths differ");
        if (t->op() == Op::Add) {
            flat.insert(flat.end(), t->children().begin(), t->children().end());
        } else {
            flat.push_back(t);
        }
    }
    if (flat.size() == 1) return flat.front();
    auto e = ExprBuilder::make(Op::Add, flat[0]->rows(), 1, false);
    ExprBuilder::set_children(*e, std::move(flat));
    return e;
}

ExprPtr Expr::activate(ref::Activation act, ExprPtr v) {
    require(v && !v->is_matrix(), "activation argument must be a vector");
    auto e = ExprBuilder::make(Op::Activate, v->rows(), 1, false);
    ExprBuilder::set_act(*e, act);
    ExprBuilder::set_children(*e, {std::move(v)});
    return e;
}

bool contains_input(const ExprPtr& e) {
    if (e->op() == Op::Input) return true;
    return std::any_of(e->children().begin(), e->children().end(), [](const ExprPtr& c) { return contains_input(c); });
}

namespace {

void collect_leaves(const ExprPtr& e, std::set<std::string>& out) {
    if (e->op() == Op::Input || e->op() == Op::Param || e->op() == Op::Attention) out.insert(e->symbol().key());
    for (const auto& c : e->children()) collect_leaves(c, out);
}

}  // namespace

std::vector<std::string> leaf_names(const ExprPtr& e) {
    std::set<std::string> s;
    collect_leaves(e, s);
    return {s.begin(), s.end()};
}

std::size_t CanonicalUAT::total_units() const noexcept {
    std::size_t n = 0;
    std::function<void(const SigmaTerm&)> count = [&](const SigmaTerm& t) {
        ++n;
        for (const auto& h : t.hidden) count(h);
    };
    for (const auto& t : sigma_terms) count(t);
    return n;
}

// ---------------------------------------------------------------------------
// Expansion

std::string Role::to_string() const {
    static const char* const kNames[] = {"linear", "outer", "inner", "bias", "constant"};
    std::string s;
    for (std::size_t k = 0; k < path.size(); ++k) {
        s += (k == 0 ? "sigma[" : ".hidden[") + std::to_string(path[k]) + "]";
    }
    if (!s.empty()) s += ".";
    return s + kNames[static_cast<int>(kind)];
}

static std::string path_string(const std::vector<std::size_t>& path) {
    std::string s;
    for (std::size_t k = 0; k < path.size(); ++k) s += (k ? "." : "") + std::to_string(path[k]);
    return s;
}

Symbol default_name(const Role& role, AtomKind kind) {
    (void)kind;
    const std::string p = path_string(role.path);
    switch (role.kind) {
        case Role::Kind::Linear: return {"W", "0", false};
        case Role::Kind::Outer: return {"W", p + ",2", false};
        case Role::Kind::Inner: return {"W", p + ",1", false};
        case Role::Kind::Bias: return {"b", p + ",1", false};
        case Role::Kind::Constant: return {"b", "0", false};
    }
    return {"W", p, false};
}

namespace {

struct Sig {
    ExprPtr outer;  // null: identity
    ExprPtr inner;  // null: no linear part
    ExprPtr bias;   // null: none
    std::vector<Sig> hidden;
    ref::Activation act = ref::Activation::ReLU;
    ExprPtr node;  // the original sigma(...) node

    ExprPtr materialize() const { return outer ? Expr::apply(outer, node) : node; }
};

struct Normal {
    std::vector<ExprPtr> linear;  // matrices L_k, each contributing L_k x
    std::vector<Sig> sigmas;
    std::vector<ExprPtr> consts;  // vectors

    void append(Normal&& o) {
        linear.insert(linear.end(), o.linear.begin(), o.linear.end());
        sigmas.insert(sigmas.end(), std::make_move_iterator(o.sigmas.begin()), std::make_move_iterator(o.sigmas.end()));
        consts.insert(consts.end(), o.consts.begin(), o.consts.end());
    }
};

class Expander {
public:
    explicit Expander(const Namer& namer) : namer_(namer) {}

    CanonicalUAT run(const ExprPtr& root) {
        if (!root || root->is_matrix()) throw SpecError("only vector-valued expressions expand");
        Normal nf = go(root);
        if (!input_) throw SpecError("expression does not read an input");
        CanonicalUAT form;
        form.input = input_;
        form.output_size = root->rows();
        if (!nf.linear.empty()) form.linear = atom(Expr::mat_sum(nf.linear), {Role::Kind::Linear, {}});
        for (std::size_t j = 0; j < nf.sigmas.size(); ++j) form.sigma_terms.push_back(finish(nf.sigmas[j], {j + 1}));
        if (!nf.consts.empty()) form.constant = atom(Expr::add(nf.consts), {Role::Kind::Constant, {}});
        return form;
    }

private:
    Normal go(const ExprPtr& e) {
        Normal nf;
        switch (e->op()) {
            case Op::Input:
                if (input_ && input_->symbol() != e->symbol()) throw SpecError("expression reads more than one input");
                input_ = e;
                nf.linear.push_back(Expr::identity(e->rows()));
                break;
            case Op::Param:
                nf.consts.push_back(e);
                break;
            case Op::Add:
                for (const auto& c : e->children()) nf.append(go(c));
                break;
            case Op::Apply: {
                const ExprPtr& m = e->children()[0];
                Normal inner = go(e->children()[1]);
                for (auto& l : inner.linear) nf.linear.push_back(Expr::product({m, l}));
                for (auto& s : inner.sigmas) {
                    s.outer = s.outer ? Expr::product({m, s.outer}) : m;
                    nf.sigmas.push_back(std::move(s));
                }
                for (auto& c : inner.consts) nf.consts.push_back(Expr::apply(m, c));
                break;
            }
            case Op::Activate:
                nf.sigmas.push_back(sigma(e));
                break;
            default:
                throw SpecError("matrix-valued node in vector position");
        }
        return nf;
    }

    Sig sigma(const ExprPtr& e) {
        Normal arg = go(e->children()[0]);
        Sig s;
        s.act = e->activation();
        s.node = e;
        if (!arg.linear.empty()) {
            // Direct input term: everything else is bias, input-dependent when
            // it reads x through a sigma term.
            s.inner = Expr::mat_sum(arg.linear);
            std::vector<ExprPtr> parts;
            for (const auto& h : arg.sigmas) parts.push_back(h.materialize());
            parts.insert(parts.end(), arg.consts.begin(), arg.consts.end());
            if (!parts.empty()) s.bias = Expr::add(parts);
        } else if (!arg.sigmas.empty()) {
            // No direct input term: the sigma terms form the hidden layer.
            std::vector<ExprPtr> blocks;
            for (auto& h : arg.sigmas) {
                blocks.push_back(h.outer ? h.outer : Expr::identity(h.node->rows()));
                h.outer = nullptr;
                s.hidden.push_back(std::move(h));
            }
            s.inner = Expr::hconcat(blocks);
            if (!arg.consts.empty()) s.bias = Expr::add(arg.consts);
        } else {
            s.bias = Expr::add(arg.consts);
        }
        return s;
    }

    SigmaTerm finish(const Sig& s, const std::vector<std::size_t>& path) {
        SigmaTerm t;
        t.activation = s.act;
        if (s.outer) t.outer = atom(s.outer, {Role::Kind::Outer, path});
        if (s.inner) t.inner = atom(s.inner, {Role::Kind::Inner, path});
        if (s.bias) t.bias = atom(s.bias, {Role::Kind::Bias, path});
        for (std::size_t k = 0; k < s.hidden.size(); ++k) {
            auto sub = path;
            sub.push_back(k + 1);
            t.hidden.push_back(finish(s.hidden[k], sub));
        }
        return t;
    }

    ParamAtom atom(const ExprPtr& value, const Role& role) {
        ParamAtom a;
        a.kind = value->is_matrix() ? AtomKind::Weight : AtomKind::Bias;
        a.rows = value->rows();
        a.cols = value->cols();
        a.value = value;
        a.sources = leaf_names(value);
        if (value->op() == Op::Param) {
            a.symbol = value->symbol();
        } else if (value->op() == Op::Identity) {
            a.symbol = {"I", "", false};
            a.identity = true;
        } else {
            a.merged = true;
            a.symbol = namer_(role, a.kind);
            a.dependence = contains_input(value) ? Dependence::InputDependent : Dependence::Fixed;
        }
        return a;
    }

    const Namer& namer_;
    ExprPtr input_;
};

}  // namespace

CanonicalUAT expand(const ExprPtr& root, const Namer& namer) { return Expander(namer).run(root); }

std::vector<ClassifiedAtom> classify_params(const CanonicalUAT& form) {
    std::vector<ClassifiedAtom> out;
    auto push = [&](const std::optional<ParamAtom>& a, const Role& r) {
        if (a && !a->identity) out.push_back({r.to_string(), *a});
    };
    std::function<void(const SigmaTerm&, const std::vector<std::size_t>&)> walk =
        [&](const SigmaTerm& t, const std::vector<std::size_t>& path) {
            push(t.outer, {Role::Kind::Outer, path});
            push(t.inner, {Role::Kind::Inner, path});
            for (std::size_t k = 0; k < t.hidden.size(); ++k) {
                auto sub = path;
                sub.push_back(k + 1);
                walk(t.hidden[k], sub);
            }
            push(t.bias, {Role::Kind::Bias, path});
        };
    push(form.linear, {Role::Kind::Linear, {}});
    for (std::size_t j = 0; j < form.sigma_terms.size(); ++j) walk(form.sigma_terms[j], {j + 1});
    push(form.constant, {Role::Kind::Constant, {}});
    return out;
}

// ---------------------------------------------------------------------------
// Rendering

std::string render(const Symbol& s, Decoration d, Format f) {
    std::string out;
    if (f == Format::Text) {
        out = s.letter;
        if (d == Decoration::Hat) out += "\xCC\x82";  // combining circumflex
        if (d == Decoration::Bar) out += "\xCC\x84";  // combining macron
        if (s.prime) out += "'";
        if (s.subscript.size() == 1) {
            out += "_" + s.subscript;
        } else if (!s.subscript.empty()) {
            out += "_{" + s.subscript + "}";
        }
        return out;
    }
    const std::string body = "\\mathbf{" + s.letter + "}";
    switch (d) {
        case Decoration::None: out = body; break;
        case Decoration::Hat: out = "\\hat{" + body + "}"; break;
        case Decoration::Bar: out = "\\overline{" + body + "}"; break;
    }
    if (s.prime) out += "'";
    if (!s.subscript.empty()) out += "_{" + s.subscript + "}";
    return out;
}

namespace {

struct Style {
    Format f;
    const char* plus() const { return f == Format::Text ? " + " : "+"; }
    const char* juxtapose() const { return f == Format::Text ? " " : ""; }
    const char* sigma() const { return f == Format::Text ? "σ" : "\\sigma"; }
};

std::string emit_expr(const ExprPtr& e, const Style& st) {
    auto join = [&](const char* sep) {
        std::string s;
        for (std::size_t k = 0; k < e->children().size(); ++k) {
            if (k) s += sep;
            s += emit_expr(e->children()[k], st);
        }
        return s;
    };
    switch (e->op()) {
        case Op::Input:
        case Op::Param:
        case Op::Attention: return render(e->symbol(), Decoration::None, st.f);
        case Op::Identity: return st.f == Format::Text ? "I" : "\\mathbf{I}";
        case Op::Product: return join("");
        case Op::MatSum: return "(" + join(st.plus()) + ")";
        case Op::HConcat: return "[" + join(", ") + "]";
        case Op::Apply: {
            const ExprPtr& v = e->children()[1];
            std::string arg = emit_expr(v, st);
            if (v->op() == Op::Add) arg = "[" + arg + "]";
            return emit_expr(e->children()[0], st) + st.juxtapose() + arg;
        }
        case Op::Add: return join(st.plus());
        case Op::Activate: return std::string(st.sigma()) + "(" + emit_expr(e->children()[0], st) + ")";
    }
    return {};
}

std::string atom_name(const ParamAtom& a, const Style& st) { return render(a.symbol, a.decoration(), st.f); }

std::string emit_term(const SigmaTerm& t, const std::string& x, const Style& st) {
    std::vector<std::string> parts;
    if (t.inner) {
        std::string src = x;
        if (!t.hidden.empty()) {
            src.clear();
            for (std::size_t k = 0; k < t.hidden.size(); ++k) {
                if (k) src += "; ";
                src += emit_term(t.hidden[k], x, st);
            }
            if (t.hidden.size() > 1) src = "[" + src + "]";
        }
        parts.push_back(t.inner->identity ? src : atom_name(*t.inner, st) + st.juxtapose() + src);
    }
    if (t.bias) parts.push_back(atom_name(*t.bias, st));
    std::string arg;
    for (std::size_t k = 0; k < parts.size(); ++k) arg += (k ? st.plus() : "") + parts[k];
    std::string s = std::string(st.sigma()) + "(" + arg + ")";
    if (t.outer) s = atom_name(*t.outer, st) + st.juxtapose() + s;
    return s;
}

}  // namespace

std::string emit(const ExprPtr& e, Format f) { return emit_expr(e, Style{f}); }

std::string emit(const CanonicalUAT& form, Format f) {
    const Style st{f};
    const std::string x = render(form.input->symbol(), Decoration::None, f);
    std::vector<std::string> terms;
    if (form.linear) terms.push_back(form.linear->identity ? x : atom_name(*form.linear, st) + st.juxtapose() + x);
    for (const auto& t : form.sigma_terms) terms.push_back(emit_term(t, x, st));
    if (form.constant) terms.push_back(atom_name(*form.constant, st));
    std::string s;
    for (std::size_t k = 0; k < terms.size(); ++k) s += (k ? st.plus() : "") + terms[k];
    return s;
}

// ---------------------------------------------------------------------------
// Evaluation

namespace {

class Evaluator {
public:
    explicit Evaluator(const Binding& b) : b_(b) {}

    Vector vec(const ExprPtr& e) {
        if (auto it = vmemo_.find(e.get()); it != vmemo_.end()) return it->second;
        Vector v = compute_vec(e);
        vmemo_.emplace(e.get(), v);
        return v;
    }

    Matrix mat(const ExprPtr& e) {
        if (auto it = mmemo_.find(e.get()); it != mmemo_.end()) return it->second;
        Matrix m = compute_mat(e);
        mmemo_.emplace(e.get(), m);
        return m;
    }

    // m applied to v without materializing products or identities.
    Vector apply(const ExprPtr& m, Vector v) {
        switch (m->op()) {
            case Op::Identity: return v;
            case Op::Product:
                for (auto it = m->children().rbegin(); it != m->children().rend(); ++it) v = apply(*it, std::move(v));
                return v;
            default: return matvec(mat(m), v);
        }
    }

private:
    Vector compute_vec(const ExprPtr& e) {
        switch (e->op()) {
            case Op::Input:
            case Op::Param: {
                auto it = b_.vectors.find(e->symbol().key());
                if (it == b_.vectors.end()) throw SpecError("unbound vector '" + e->symbol().key() + "'");
                if (it->second.size() != e->rows()) throw ShapeError("binding for '" + e->symbol().key() + "' has wrong length");
                return it->second;
            }
            case Op::Apply: return apply(e->children()[0], vec(e->children()[1]));
            case Op::Add: {
                Vector acc(e->rows());
                for (const auto& c : e->children()) acc = add(acc, vec(c));
                return acc;
            }
            case Op::Activate: return ref::activate(e->activation(), vec(e->children()[0]));
            default: throw InternalError("vector evaluation of a matrix node");
        }
    }

    Matrix compute_mat(const ExprPtr& e) {
        switch (e->op()) {
            case Op::Param: {
                auto it = b_.weights.find(e->symbol().key());
                if (it == b_.weights.end()) throw SpecError("unbound weight '" + e->symbol().key() + "'");
                if (it->second.rows() != e->rows() || it->second.cols() != e->cols()) {
                    throw ShapeError("binding for '" + e->symbol().key() + "' has wrong dimensions");
                }
                return it->second;
            }
            case Op::Attention: {
                auto it = b_.attention.find(e->symbol().key());
                if (it == b_.attention.end()) throw SpecError("unbound attention '" + e->symbol().key() + "'");
                const Vector arg = vec(e->children()[0]);
                const std::size_t dim = e->rows() / e->tokens();
                return lowering::extract_mha_effective_matrix(Matrix(e->tokens(), dim, arg.raw()), it->second);
            }
            case Op::Identity: return Matrix::identity(e->rows());
            case Op::Product: {
                Matrix acc = mat(e->children()[0]);
                for (std::size_t k = 1; k < e->children().size(); ++k) acc = matmul(acc, mat(e->children()[k]));
                return acc;
            }
            case Op::MatSum: {
                Matrix acc = mat(e->children()[0]);
                for (std::size_t k = 1; k < e->children().size(); ++k) acc = add(acc, mat(e->children()[k]));
                return acc;
            }
            case Op::HConcat: {
                Matrix out(e->rows(), e->cols());
                std::size_t off = 0;
                for (const auto& c : e->children()) {
                    const Matrix blk = mat(c);
                    for (std::size_t r = 0; r < blk.rows(); ++r)
                        for (std::size_t k = 0; k < blk.cols(); ++k) out(r, off + k) = blk(r, k);
                    off += blk.cols();
                }
                return out;
            }
            default: throw InternalError("matrix evaluation of a vector node");
        }
    }

    const Binding& b_;
    std::unordered_map<const Expr*, Vector> vmemo_;
    std::unordered_map<const Expr*, Matrix> mmemo_;
};

Matrix atom_matrix(Evaluator& ev, const ParamAtom& a) {
    if (a.kind == AtomKind::Weight) return ev.mat(a.value);
    const Vector v = ev.vec(a.value);
    return Matrix(v.size(), 1, v.raw());
}

Vector eval_term(Evaluator& ev, const SigmaTerm& t, const Vector& x) {
    Vector src = x;
    if (!t.hidden.empty()) {
        std::vector<double> stacked;
        for (const auto& h : t.hidden) {
            const Vector hv = eval_term(ev, h, x);
            stacked.insert(stacked.end(), hv.values().begin(), hv.values().end());
        }
        src = Vector(std::move(stacked));
    }
    std::optional<Vector> pre;
    if (t.inner) pre = t.inner->identity ? src : matvec(ev.mat(t.inner->value), src);
    if (t.bias) {
        const Vector b = ev.vec(t.bias->value);
        pre = pre ? add(*pre, b) : b;
    }
    if (!pre) throw InternalError("sigma term with neither weight nor bias");
    Vector h = ref::activate(t.activation, *pre);
    return t.outer ? matvec(ev.mat(t.outer->value), h) : h;
}

}  // namespace

Vector evaluate(const ExprPtr& e, const Binding& b) {
    if (e->is_matrix()) throw ShapeError("expression is matrix-valued");
    Evaluator ev(b);
    return ev.vec(e);
}

Matrix evaluate_matrix(const ExprPtr& e, const Binding& b) {
    if (!e->is_matrix()) throw ShapeError("expression is vector-valued");
    Evaluator ev(b);
    return ev.mat(e);
}

Matrix evaluate_atom(const ParamAtom& a, const Binding& b) {
    Evaluator ev(b);
    return atom_matrix(ev, a);
}

Vector evaluate(const CanonicalUAT& form, const Binding& b) {
    Evaluator ev(b);
    const Vector x = ev.vec(form.input);
    Vector out(form.output_size);
    if (form.linear) out = add(out, form.linear->identity ? x : matvec(ev.mat(form.linear->value), x));
    for (const auto& t : form.sigma_terms) out = add(out, eval_term(ev, t, x));
    if (form.constant) out = add(out, ev.vec(form.constant->value));
    return out;
}

namespace {

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

void bind_leaves(const ExprPtr& e, Binding& b, std::uint64_t seed, double lo, double hi) {
    const std::string key = e->symbol().key();
    const std::uint64_t s = derive_seed(seed, fnv1a(key));
    switch (e->op()) {
        case Op::Input:
            if (!b.vectors.count(key)) b.vectors.emplace(key, random_vector(e->rows(), s, lo, hi));
            break;
        case Op::Param:
            if (e->is_matrix()) {
                if (!b.weights.count(key)) b.weights.emplace(key, random_matrix(e->rows(), e->cols(), s, lo, hi));
            } else if (!b.vectors.count(key)) {
                b.vectors.emplace(key, random_vector(e->rows(), s, lo, hi));
            }
            break;
        case Op::Attention:
            if (!b.attention.count(key)) {
                const std::size_t d = e->rows() / e->tokens();
                ref::AttnParams p;
                p.model_dim = d;
                p.heads = e->heads();
                p.w_q = random_matrix(d, d, derive_seed(s, 1), lo, hi);
                p.w_k = random_matrix(d, d, derive_seed(s, 2), lo, hi);
                p.w_v = random_matrix(d, d, derive_seed(s, 3), lo, hi);
                p.w_o = random_matrix(d, d, derive_seed(s, 4), lo, hi);
                b.attention.emplace(key, std::move(p));
            }
            break;
        default: break;
    }
    for (const auto& c : e->children()) bind_leaves(c, b, seed, lo, hi);
}

}  // namespace

void bind_random(const ExprPtr& e, Binding& b, std::uint64_t seed, double lo, double hi) { bind_leaves(e, b, seed, lo, hi); }

// ---------------------------------------------------------------------------
// Standard compositions

std::string layer_subscript(std::size_t offset) { return offset == 0 ? "i" : "i+" + std::to_string(offset); }

Symbol input_symbol() { return {"x", "i", true}; }

ExprPtr build_vgg_chain(std::size_t depth, const std::vector<std::size_t>& widths, ref::Activation act) {
    if (depth < 1) throw SpecError("a chain needs at least one layer");
    if (widths.size() != depth + 1) throw SpecError("chain widths must list the input and every layer output");
    ExprPtr x = Expr::input(input_symbol(), widths[0]);
    for (std::size_t k = 0; k < depth; ++k) {
        const std::string sub = layer_subscript(k);
        auto w = Expr::weight({"W", sub, true}, widths[k + 1], widths[k]);
        auto b = Expr::bias({"b", sub, true}, widths[k + 1]);
        x = Expr::activate(act, Expr::add({Expr::apply(w, x), b}));
    }
    return x;
}

ExprPtr build_residual_block(const ExprPtr& x, std::size_t block, std::size_t width, WeightSharing sharing,
                             ref::Activation act) {
    const std::string wsub = layer_subscript(sharing == WeightSharing::Shared ? 0 : block);
    const std::string bsub = layer_subscript(block);
    auto w1 = Expr::weight({"W", wsub + ",1", true}, width, width);
    auto w2 = Expr::weight({"W", wsub + ",2", true}, width, width);
    auto b1 = Expr::bias({"b", bsub + ",1", false}, width);
    auto b2 = Expr::bias({"b", bsub + ",2", false}, width);
    auto branch = Expr::apply(w2, Expr::activate(act, Expr::add({Expr::apply(w1, x), b1})));
    return Expr::add({x, branch, b2});
}

ExprPtr build_residual_chain(std::size_t blocks, std::size_t width, WeightSharing sharing, ref::Activation act) {
    if (blocks < 1) throw SpecError("a residual chain needs at least one block");
    ExprPtr x = Expr::input(input_symbol(), width);
    for (std::size_t k = 0; k < blocks; ++k) x = build_residual_block(x, k, width, sharing, act);
    return x;
}

Namer residual_namer(std::size_t blocks) {
    if (blocks != 2) return default_name;
    return [](const Role& r, AtomKind k) -> Symbol {
        if (r.path == std::vector<std::size_t>{2} && r.kind == Role::Kind::Bias) return {"b", "i+1,2", false};
        if (r.path.empty() && r.kind == Role::Kind::Constant) return {"b", "i+1,2", false};
        return default_name(r, k);
    };
}

CanonicalUAT expand_residual(std::size_t blocks, std::size_t width, WeightSharing sharing, ref::Activation act) {
    return expand(build_residual_chain(blocks, width, sharing, act), residual_namer(blocks));
}

ExprPtr build_transformer_block(const ExprPtr& x, std::size_t block, const TransformerDims& d, ref::Activation act) {
    const std::string sub = layer_subscript(block);
    const std::size_t n = d.tokens * d.dim, h = d.tokens * d.ffn_dim;
    auto attn = Expr::attention({"W", sub + ",1", true}, d.tokens, d.dim, d.heads, x);
    auto m = Expr::apply(attn, x);
    auto w2 = Expr::weight({"W", sub + ",2", true}, h, n);
    auto b2 = Expr::bias({"b", sub + ",2", true}, h);
    auto w3 = Expr::weight({"W", sub + ",3", true}, n, h);
    auto b3 = Expr::bias({"b", sub + ",3", true}, n);
    auto hidden = Expr::activate(act, Expr::add({Expr::apply(w2, m), b2}));
    return Expr::add({m, Expr::apply(w3, hidden), b3});
}

ExprPtr build_transformer_chain(std::size_t blocks, const TransformerDims& dims, ref::Activation act) {
    if (blocks < 1) throw SpecError("a transformer chain needs at least one block");
    ExprPtr x = Expr::input(input_symbol(), dims.tokens * dims.dim);
    for (std::size_t k = 0; k < blocks; ++k) x = build_transformer_block(x, k, dims, act);
    return x;
}

Namer transformer_namer(std::size_t blocks) {
    using K = Role::Kind;
    using Path = std::vector<std::size_t>;
    if (blocks == 1) {
        return [](const Role& r, AtomKind k) -> Symbol {
            if (r.kind == K::Linear) return {"W", "i,1", true};
            if (r.kind == K::Inner && r.path == Path{1}) return {"W", "i,1", true};
            return default_name(r, k);
        };
    }
    if (blocks == 2) {
        return [](const Role& r, AtomKind k) -> Symbol {
            if (r.kind == K::Linear) return {"W", "i+1,1", true};
            if (r.kind == K::Outer && r.path == Path{1}) return {"W", "i+1,2", true};
            if (r.kind == K::Inner && r.path == Path{1}) return {"W", "i,1", true};
            if (r.kind == K::Inner && r.path == Path{2}) return {"W", "i+1,3", true};
            if (r.kind == K::Bias && r.path == Path{2}) return {"b", "i+1,2", true};
            if (r.kind == K::Constant) return {"b", "i,1", true};
            return default_name(r, k);
        };
    }
    return default_name;
}

CanonicalUAT expand_transformer(std::size_t blocks, const TransformerDims& dims, ref::Activation act) {
    return expand(build_transformer_chain(blocks, dims, act), transformer_namer(blocks));
}

void bind_transformer_block(Binding& b, std::size_t block, const ref::AttnParams& p, std::size_t tokens) {
    p.validate_attention();
    p.validate_ffn();
    const std::string sub = layer_subscript(block);
    const std::size_t d = p.model_dim, f = p.ffn_dim();
    Matrix w2(tokens * f, tokens * d), w3(tokens * d, tokens * f);
    Vector b2(tokens * f), b3(tokens * d);
    for (std::size_t t = 0; t < tokens; ++t) {
        for (std::size_t e = 0; e < d; ++e)
            for (std::size_t g = 0; g < f; ++g) {
                w2(t * f + g, t * d + e) = p.w_2(e, g);
                w3(t * d + e, t * f + g) = p.w_3(g, e);
            }
        for (std::size_t g = 0; g < f; ++g) b2[t * f + g] = p.b_2[g];
        for (std::size_t e = 0; e < d; ++e) b3[t * d + e] = p.b_3[e];
    }
    b.attention[Symbol{"W", sub + ",1", true}.key()] = p;
    b.weights[Symbol{"W", sub + ",2", true}.key()] = std::move(w2);
    b.weights[Symbol{"W", sub + ",3", true}.key()] = std::move(w3);
    b.vectors[Symbol{"b", sub + ",2", true}.key()] = std::move(b2);
    b.vectors[Symbol{"b", sub + ",3", true}.key()] = std::move(b3);
}

}  // namespace uatcv::sym
