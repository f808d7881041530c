// Copyright (C) 2026 The uatcv Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "uatcv/tensor.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <sstream>

namespace uatcv {

namespace {

std::atomic<std::size_t> g_element_cap{kDefaultElementCap};

constexpr std::array<std::string_view, 7> kAxisNames = {"C_I", "C_O", "H", "W", "D", "token", "feature"};

void check_cap(std::size_t n, const char* what) {
    if (n > element_cap()) {
        std::ostringstream os;
        os << what << " of " << n << " elements exceeds the element cap of " << element_cap();
        throw CapacityError(os.str());
    }
}

void check_finite(std::span<const double> values) {
    for (double v : values) {
        if (!std::isfinite(v)) throw RangeError("non-finite tensor entry");
    }
}

}  // namespace

const char* error_code_name(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::Shape: return "ShapeError";
        case ErrorCode::Capacity: return "CapacityError";
        case ErrorCode::Range: return "RangeError";
        case ErrorCode::Spec: return "SpecError";
        case ErrorCode::Parse: return "ParseError";
        case ErrorCode::Validation: return "ValidationError";
        case ErrorCode::Rank: return "RankError";
        case ErrorCode::Io: return "IoError";
        case ErrorCode::Internal: return "InternalError";
    }
    return "Error";
}

static std::string layer_message(std::optional<std::size_t> layer, const std::string& reason) {
    if (!layer) return reason;
    return "layer " + std::to_string(*layer) + ": " + reason;
}

LayerError::LayerError(ErrorCode code, std::optional<std::size_t> layer, const std::string& reason)
    : Error(code, layer_message(layer, reason)), layer_(layer), reason_(reason) {}

std::string_view axis_name(Axis a) noexcept { return kAxisNames[static_cast<std::size_t>(a)]; }

Axis parse_axis(std::string_view name) {
    for (std::size_t i = 0; i < kAxisNames.size(); ++i) {
        if (kAxisNames[i] == name) return static_cast<Axis>(i);
    }
    throw ParseError(std::nullopt, "unknown axis name '" + std::string(name) + "'");
}

bool is_channel_axis(Axis a) noexcept { return a == Axis::CI || a == Axis::CO; }

std::size_t element_cap() noexcept { return g_element_cap.load(std::memory_order_relaxed); }

void set_element_cap(std::size_t cap) {
    if (cap == 0) throw RangeError("element cap must be positive");
    g_element_cap.store(cap, std::memory_order_relaxed);
}

// ---------------------------------------------------------------------------
// TensorShape

TensorShape::TensorShape(std::vector<Dim> dims) : dims_(std::move(dims)) {
    if (dims_.empty()) throw ShapeError("shape must have at least one axis");
    std::size_t n = 1;
    for (std::size_t i = 0; i < dims_.size(); ++i) {
        if (dims_[i].extent == 0) {
            throw ShapeError("axis " + std::string(axis_name(dims_[i].axis)) + " has extent 0");
        }
        for (std::size_t j = 0; j < i; ++j) {
            if (dims_[j].axis == dims_[i].axis) {
                throw ShapeError("axis " + std::string(axis_name(dims_[i].axis)) + " repeated");
            }
        }
        if (n > element_cap() / dims_[i].extent) {
            throw CapacityError("shape " + to_string() + " exceeds the element cap of " + std::to_string(element_cap()));
        }
        n *= dims_[i].extent;
    }
    size_ = n;
}

bool TensorShape::has(Axis a) const noexcept {
    return std::any_of(dims_.begin(), dims_.end(), [a](const Dim& d) { return d.axis == a; });
}

std::size_t TensorShape::position(Axis a) const {
    for (std::size_t i = 0; i < dims_.size(); ++i) {
        if (dims_[i].axis == a) return i;
    }
    throw ShapeError("shape " + to_string() + " has no axis " + std::string(axis_name(a)));
}

std::vector<std::size_t> TensorShape::strides() const {
    std::vector<std::size_t> s(dims_.size(), 1);
    for (std::size_t i = dims_.size(); i-- > 1;) s[i - 1] = s[i] * dims_[i].extent;
    return s;
}

std::size_t TensorShape::offset(std::span<const std::size_t> index) const {
    if (index.size() != dims_.size()) throw ShapeError("index rank mismatch for " + to_string());
    std::size_t off = 0;
    for (std::size_t i = 0; i < dims_.size(); ++i) {
        if (index[i] >= dims_[i].extent) throw ShapeError("index out of range for " + to_string());
        off = off * dims_[i].extent + index[i];
    }
    return off;
}

std::string TensorShape::to_string() const {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < dims_.size(); ++i) {
        if (i) os << ',';
        os << axis_name(dims_[i].axis) << ':' << dims_[i].extent;
    }
    os << ')';
    return os.str();
}

// ---------------------------------------------------------------------------
// Vector / Matrix / Tensor

Vector::Vector(std::size_t n, double fill) {
    check_cap(n, "vector");
    data_.assign(n, fill);
}

Vector::Vector(std::initializer_list<double> values) : data_(values) { check_cap(data_.size(), "vector"); }

Vector::Vector(std::vector<double> values) : data_(std::move(values)) { check_cap(data_.size(), "vector"); }

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill) : rows_(rows), cols_(cols) {
    if (rows == 0 || cols == 0) throw ShapeError("matrix dimensions must be positive");
    if (rows > element_cap() / cols) check_cap(element_cap() + 1, "matrix");
    data_.assign(rows * cols, fill);
}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (rows == 0 || cols == 0) throw ShapeError("matrix dimensions must be positive");
    if (rows > element_cap() / cols) check_cap(element_cap() + 1, "matrix");
    if (data_.size() != rows * cols) throw ShapeError("matrix data length does not match dimensions");
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ ? rows.begin()->size() : 0;
    if (rows_ == 0 || cols_ == 0) throw ShapeError("matrix dimensions must be positive");
    for (const auto& r : rows) {
        if (r.size() != cols_) throw ShapeError("ragged matrix literal");
        data_.insert(data_.end(), r.begin(), r.end());
    }
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Tensor::Tensor(TensorShape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_.size()) {
        throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                         shape_.to_string());
    }
    check_finite(data_);
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
    return data_[shape_.offset(std::span<const std::size_t>(index.begin(), index.size()))];
}

// ---------------------------------------------------------------------------
// Random generation

std::uint64_t SplitMix64::next() noexcept {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

double SplitMix64::next_unit() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

double SplitMix64::next_uniform(double lo, double hi) noexcept {
    double v = lo + (hi - lo) * next_unit();
    // lo + (hi - lo) * u can round up to hi for u just below 1.
    return v < hi ? v : std::nextafter(hi, lo);
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b) noexcept {
    SplitMix64 g(base ^ (a * 0xD1B54A32D192ED03ULL) ^ (b * 0x8CB92BA72F3D8DD7ULL));
    return g.next();
}

Tensor zeros(const TensorShape& shape) {
    if (shape.rank() == 0) throw ShapeError("empty shape");
    return Tensor(shape, std::vector<double>(shape.size(), 0.0));
}

static void check_range(double lo, double hi) {
    if (!(lo < hi) || !std::isfinite(lo) || !std::isfinite(hi)) {
        throw RangeError("random range requires finite lo < hi");
    }
}

Tensor random_uniform(const TensorShape& shape, std::uint64_t seed, double lo, double hi) {
    check_range(lo, hi);
    if (shape.rank() == 0) throw ShapeError("empty shape");
    SplitMix64 g(seed);
    std::vector<double> data(shape.size());
    for (double& v : data) v = g.next_uniform(lo, hi);
    return Tensor(shape, std::move(data));
}

Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed, double lo, double hi) {
    check_range(lo, hi);
    Matrix m(rows, cols);
    SplitMix64 g(seed);
    for (double& v : m.values()) v = g.next_uniform(lo, hi);
    return m;
}

Vector random_vector(std::size_t n, std::uint64_t seed, double lo, double hi) {
    check_range(lo, hi);
    Vector v(n);
    SplitMix64 g(seed);
    for (double& x : v.values()) x = g.next_uniform(lo, hi);
    return v;
}

// ---------------------------------------------------------------------------
// Linear algebra

Vector matvec(const Matrix& m, const Vector& v) {
    if (m.cols() != v.size()) {
        throw ShapeError("matvec: " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) +
                         " matrix against vector of length " + std::to_string(v.size()));
    }
    Vector out(m.rows());
    for (std::size_t r = 0; r < m.rows(); ++r) {
        double acc = 0.0;
        auto row = m.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) acc += row[c] * v[c];
        out[r] = acc;
    }
    return out;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) throw ShapeError("matmul: inner dimensions differ");
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t k = 0; k < a.cols(); ++k) {
            double aik = a(i, k);
            if (aik == 0.0) continue;
            for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
        }
    }
    return out;
}

Matrix transpose(const Matrix& m) {
    Matrix t(m.cols(), m.rows());
    for (std::size_t r = 0; r < m.rows(); ++r)
        for (std::size_t c = 0; c < m.cols(); ++c) t(c, r) = m(r, c);
    return t;
}

Matrix add(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("matrix add: dimensions differ");
    Matrix out = a;
    auto o = out.values();
    auto bv = b.values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i];
    return out;
}

Vector add(const Vector& a, const Vector& b) {
    if (a.size() != b.size()) throw ShapeError("vector add: lengths differ");
    Vector out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
    return out;
}

Vector scale(const Vector& v, double s) {
    Vector out = v;
    for (double& x : out.values()) x *= s;
    return out;
}

// ---------------------------------------------------------------------------
// Flattening

namespace {

// For each position in `order`, the position of that axis in `shape`.
std::vector<std::size_t> permutation_for(const TensorShape& shape, std::span<const Axis> order) {
    if (order.size() != shape.rank()) throw ShapeError("axis order does not match shape rank");
    std::vector<std::size_t> perm;
    perm.reserve(order.size());
    for (Axis a : order) {
        std::size_t p = shape.position(a);
        if (std::find(perm.begin(), perm.end(), p) != perm.end()) throw ShapeError("axis order repeats an axis");
        perm.push_back(p);
    }
    return perm;
}

// Calls fn(source_offset, dest_offset) for every element, dest enumerated in
// `order`.
template <typename Fn>
void for_each_permuted(const TensorShape& shape, std::span<const Axis> order, Fn&& fn) {
    auto perm = permutation_for(shape, order);
    auto strides = shape.strides();
    std::vector<std::size_t> idx(order.size(), 0);
    const std::size_t n = shape.size();
    for (std::size_t dest = 0; dest < n; ++dest) {
        std::size_t src = 0;
        for (std::size_t k = 0; k < idx.size(); ++k) src += idx[k] * strides[perm[k]];
        fn(src, dest);
        for (std::size_t k = idx.size(); k-- > 0;) {
            if (++idx[k] < shape.extent(perm[k])) break;
            idx[k] = 0;
        }
    }
}

}  // namespace

Vector flatten(const Tensor& t, std::span<const Axis> order) {
    Vector out(t.size());
    auto src = t.values();
    for_each_permuted(t.shape(), order, [&](std::size_t s, std::size_t d) { out[d] = src[s]; });
    return out;
}

Vector flatten(const Tensor& t) { return Vector(std::vector<double>(t.values().begin(), t.values().end())); }

Tensor unflatten(const Vector& v, const TensorShape& shape, std::span<const Axis> order) {
    if (v.size() != shape.size()) throw ShapeError("unflatten: vector length does not match shape");
    std::vector<double> data(shape.size());
    for_each_permuted(shape, order, [&](std::size_t s, std::size_t d) { data[s] = v[d]; });
    return Tensor(shape, std::move(data));
}

Tensor unflatten(const Vector& v, const TensorShape& shape) { return Tensor(shape, v.raw()); }

Matrix to_matrix(const Tensor& t) {
    if (t.shape().rank() != 2) throw ShapeError("to_matrix requires a rank-2 tensor");
    return Matrix(t.shape().extent(0), t.shape().extent(1),
                  std::vector<double>(t.values().begin(), t.values().end()));
}

Tensor to_tensor(const Matrix& m, Axis row_axis, Axis col_axis) {
    return Tensor(TensorShape{{row_axis, m.rows()}, {col_axis, m.cols()}},
                  std::vector<double>(m.values().begin(), m.values().end()));
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw ShapeError("max_abs_diff: lengths differ");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

double max_abs_diff(const Vector& a, const Vector& b) { return max_abs_diff(a.values(), b.values()); }

double max_abs_diff(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("max_abs_diff: dimensions differ");
    return max_abs_diff(a.values(), b.values());
}

std::size_t numerical_rank(const Matrix& m, double tol) {
    Matrix a = m;
    double scale = 0.0;
    for (double v : a.values()) scale = std::max(scale, std::abs(v));
    if (scale == 0.0) return 0;
    const double threshold = tol * scale;
    std::size_t rank = 0;
    for (std::size_t col = 0; col < a.cols() && rank < a.rows(); ++col) {
        std::size_t pivot = rank;
        for (std::size_t r = rank + 1; r < a.rows(); ++r) {
            if (std::abs(a(r, col)) > std::abs(a(pivot, col))) pivot = r;
        }
        if (std::abs(a(pivot, col)) <= threshold) continue;
        if (pivot != rank) {
            for (std::size_t c = 0; c < a.cols(); ++c) std::swap(a(pivot, c), a(rank, c));
        }
        for (std::size_t r = rank + 1; r < a.rows(); ++r) {
            double f = a(r, col) / a(rank, col);
            if (f == 0.0) continue;
            for (std::size_t c = col; c < a.cols(); ++c) a(r, c) -= f * a(rank, c);
        }
        ++rank;
    }
    return rank;
}

std::size_t count_nonzeros(const Matrix& m) {
    return static_cast<std::size_t>(std::count_if(m.values().begin(), m.values().end(), [](double v) { return v != 0.0; }));
}

}  // namespace uatcv
