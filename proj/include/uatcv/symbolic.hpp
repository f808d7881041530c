// Copyright (C) 2026 The uatcv Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "uatcv/reference_ops.hpp"
#include "uatcv/tensor.hpp"

// Symbolic layer compositions and their expansion into the flat form
//
//   G(x) = L x + sum_j  O_j sigma(I_j s_j + b_j) + c
//
// where s_j is either the input x or a hidden layer of further sigma units.
// Every parameter of the expanded form is an atom: either a primitive
// network parameter or a merged one carrying the expression it folds.
namespace uatcv::sym {

enum class Dependence { Fixed, InputDependent };
enum class AtomKind { Weight, Bias };
enum class Decoration { None, Bar, Hat };
enum class Format { Text, Latex };

const char* dependence_name(Dependence d) noexcept;

struct Symbol {
    std::string letter;     // "W", "b", "x", ...
    std::string subscript;  // "i", "i+1,2", ...
    bool prime = false;

    // Undecorated text rendering, e.g. "W'_{i,1}"; used as the binding key.
    std::string key() const;
    friend bool operator==(const Symbol&, const Symbol&) = default;
};

enum class Op {
    Input,      // vector leaf
    Param,      // primitive weight (matrix) or bias (vector)
    Attention,  // input-dependent effective attention matrix at its argument
    Identity,   // matrix
    Product,    // matrix product of matrix children, left to right
    MatSum,     // sum of matrix children
    HConcat,    // horizontal concatenation of matrix children
    Apply,      // matrix child 0 applied to vector child 1
    Add,        // sum of vector children
    Activate,   // elementwise sigma of vector child 0
};

class Expr;
using ExprPtr = std::shared_ptr<const Expr>;

class Expr {
public:
    Op op() const noexcept { return op_; }
    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    bool is_matrix() const noexcept { return matrix_; }
    const Symbol& symbol() const noexcept { return symbol_; }
    AtomKind kind() const noexcept { return kind_; }
    ref::Activation activation() const noexcept { return act_; }
    const std::vector<ExprPtr>& children() const noexcept { return children_; }
    // Attention nodes: token count and head count.
    std::size_t tokens() const noexcept { return tokens_; }
    std::size_t heads() const noexcept { return heads_; }

    // Factories validate shapes and throw ShapeError.
    static ExprPtr input(Symbol s, std::size_t n);
    static ExprPtr weight(Symbol s, std::size_t rows, std::size_t cols);
    static ExprPtr bias(Symbol s, std::size_t n);
    static ExprPtr attention(Symbol s, std::size_t tokens, std::size_t dim, std::size_t heads, ExprPtr arg);
    static ExprPtr identity(std::size_t n);
    // Nested products are flattened and identity factors dropped.
    static ExprPtr product(std::vector<ExprPtr> factors);
    static ExprPtr mat_sum(std::vector<ExprPtr> terms);
    static ExprPtr hconcat(std::vector<ExprPtr> blocks);
    static ExprPtr apply(ExprPtr m, ExprPtr v);
    // Nested sums are flattened; a single term is returned unchanged.
    static ExprPtr add(std::vector<ExprPtr> terms);
    static ExprPtr activate(ref::Activation act, ExprPtr v);

private:
    friend struct ExprBuilder;

    Op op_ = Op::Input;
    std::size_t rows_ = 0, cols_ = 1;
    bool matrix_ = false;
    Symbol symbol_;
    AtomKind kind_ = AtomKind::Weight;
    ref::Activation act_ = ref::Activation::ReLU;
    std::vector<ExprPtr> children_;
    std::size_t tokens_ = 0, heads_ = 0;
};

bool contains_input(const ExprPtr& e);
// Names of every Param and Input leaf and Attention node, sorted, unique.
std::vector<std::string> leaf_names(const ExprPtr& e);

struct ParamAtom {
    Symbol symbol;
    AtomKind kind = AtomKind::Weight;
    std::size_t rows = 0, cols = 1;
    Dependence dependence = Dependence::Fixed;
    bool merged = false;
    bool identity = false;  // the implicit identity of a bare x term
    // The expression this atom stands for; for a primitive atom, its leaf.
    ExprPtr value;
    // Primitive atoms, attention nodes and inputs the value depends on.
    std::vector<std::string> sources;

    Decoration decoration() const noexcept;
};

struct SigmaTerm {
    std::optional<ParamAtom> outer;  // empty: identity
    std::optional<ParamAtom> inner;  // empty: the argument has no linear part
    std::optional<ParamAtom> bias;
    ref::Activation activation = ref::Activation::ReLU;
    // Units of the hidden layer the inner weight reads, stacked; empty means
    // the inner weight reads the input directly.
    std::vector<SigmaTerm> hidden;
};

struct CanonicalUAT {
    ExprPtr input;
    std::size_t output_size = 0;
    std::optional<ParamAtom> linear;
    std::vector<SigmaTerm> sigma_terms;
    std::optional<ParamAtom> constant;

    std::size_t N() const noexcept { return sigma_terms.size(); }
    // Sigma units including nested hidden layers.
    std::size_t total_units() const noexcept;
};

// Position of an atom inside a CanonicalUAT. `path` holds 1-based sigma-term
// indices, outermost first (a hidden unit adds one level).
struct Role {
    enum class Kind { Linear, Outer, Inner, Bias, Constant };
    Kind kind;
    std::vector<std::size_t> path;

    std::string to_string() const;
};

// Chooses symbols for merged atoms.
using Namer = std::function<Symbol(const Role&, AtomKind)>;
Symbol default_name(const Role& role, AtomKind kind);

// Rewrites: linear maps distribute over sums and into sigma outer weights;
// inside sigma, a direct linear input term becomes the inner weight and the
// rest of the argument folds into one bias; an argument without a direct
// input term reads the sigma terms it contains as a hidden layer.
CanonicalUAT expand(const ExprPtr& root, const Namer& namer = default_name);

struct ClassifiedAtom {
    std::string role;
    ParamAtom atom;
};
// Every atom of the form except the implicit identity, in rendering order.
std::vector<ClassifiedAtom> classify_params(const CanonicalUAT& form);

std::string render(const Symbol& s, Decoration d, Format f);
std::string emit(const ExprPtr& e, Format f);
std::string emit(const CanonicalUAT& form, Format f);

// ---------------------------------------------------------------------------
// Numeric evaluation

struct Binding {
    std::map<std::string, Matrix> weights;
    std::map<std::string, Vector> vectors;  // biases and inputs
    std::map<std::string, ref::AttnParams> attention;
};

Vector evaluate(const ExprPtr& e, const Binding& b);
Matrix evaluate_matrix(const ExprPtr& e, const Binding& b);
// Vector atoms come back as a single column.
Matrix evaluate_atom(const ParamAtom& a, const Binding& b);
// Computes every merged atom from its folding expression, then the flat form.
Vector evaluate(const CanonicalUAT& form, const Binding& b);

// Uniform [lo, hi) values for every leaf of `e` not already bound, including
// attention projections.
void bind_random(const ExprPtr& e, Binding& b, std::uint64_t seed, double lo = -1.0, double hi = 1.0);

// ---------------------------------------------------------------------------
// Standard compositions. Symbols follow x'_i for the input and i, i+1, ...
// for successive layers.

std::string layer_subscript(std::size_t offset);
Symbol input_symbol();

// sigma(W'_{i+k} ... sigma(W'_i x'_i + b'_i) ... + b'_{i+k}); widths has
// depth + 1 entries, widths[0] the input size. SpecError if depth < 1.
ExprPtr build_vgg_chain(std::size_t depth, const std::vector<std::size_t>& widths,
                        ref::Activation act = ref::Activation::ReLU);

enum class WeightSharing { Distinct, Shared };

// x + W'_{.,2} sigma(W'_{.,1} x + b_{.,1}) + b_{.,2}, all square of `width`.
ExprPtr build_residual_block(const ExprPtr& x, std::size_t block, std::size_t width, WeightSharing sharing,
                             ref::Activation act = ref::Activation::ReLU);
ExprPtr build_residual_chain(std::size_t blocks, std::size_t width, WeightSharing sharing = WeightSharing::Distinct,
                             ref::Activation act = ref::Activation::ReLU);
// Merged atoms of a two-block expansion carry the conventional names
// (b-hat_{i+1,2}, b-bar_{i+1,2}).
Namer residual_namer(std::size_t blocks);
CanonicalUAT expand_residual(std::size_t blocks, std::size_t width, WeightSharing sharing = WeightSharing::Distinct,
                             ref::Activation act = ref::Activation::ReLU);

// m = MHA(x) (attention atom W'_{.,1}); out = m + W'_{.,3} sigma(W'_{.,2} m + b'_{.,2}) + b'_{.,3}.
struct TransformerDims {
    std::size_t tokens = 1;
    std::size_t dim = 1;
    std::size_t heads = 1;
    std::size_t ffn_dim = 1;
};
ExprPtr build_transformer_block(const ExprPtr& x, std::size_t block, const TransformerDims& dims,
                                ref::Activation act = ref::Activation::ReLU);
ExprPtr build_transformer_chain(std::size_t blocks, const TransformerDims& dims,
                                ref::Activation act = ref::Activation::ReLU);
Namer transformer_namer(std::size_t blocks);
// Binds block `block`'s attention atom to `p` and its FFN atoms to the
// token-wise block-diagonal operators built from p.w_2, p.w_3, p.b_2, p.b_3.
void bind_transformer_block(Binding& b, std::size_t block, const ref::AttnParams& p, std::size_t tokens);
CanonicalUAT expand_transformer(std::size_t blocks, const TransformerDims& dims,
                                ref::Activation act = ref::Activation::ReLU);

}  // namespace uatcv::sym
