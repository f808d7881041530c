// Copyright (C) 2026 The uatcv Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "uatcv/error.hpp"

namespace uatcv {

enum class Axis { CI, CO, H, W, D, Token, Feature };

std::string_view axis_name(Axis a) noexcept;
// Throws ParseError for unknown names.
Axis parse_axis(std::string_view name);
bool is_channel_axis(Axis a) noexcept;

// Upper bound on the element count of any shape, matrix or vector the library
// builds. Defaults to 2^20.
constexpr std::size_t kDefaultElementCap = std::size_t{1} << 20;
std::size_t element_cap() noexcept;
void set_element_cap(std::size_t cap);

struct Dim {
    Axis axis;
    std::size_t extent;

    friend bool operator==(const Dim&, const Dim&) = default;
};

class TensorShape {
public:
    TensorShape() = default;
    // Throws ShapeError on a zero extent or a repeated axis, CapacityError when
    // the element count exceeds element_cap().
    explicit TensorShape(std::vector<Dim> dims);
    TensorShape(std::initializer_list<Dim> dims) : TensorShape(std::vector<Dim>(dims)) {}

    const std::vector<Dim>& dims() const noexcept { return dims_; }
    std::size_t rank() const noexcept { return dims_.size(); }
    std::size_t size() const noexcept { return size_; }
    std::size_t extent(std::size_t pos) const { return dims_.at(pos).extent; }
    Axis axis(std::size_t pos) const { return dims_.at(pos).axis; }
    bool has(Axis a) const noexcept;
    // Position of `a` within the shape; ShapeError if absent.
    std::size_t position(Axis a) const;
    std::size_t extent_of(Axis a) const { return dims_[position(a)].extent; }

    // Row-major strides.
    std::vector<std::size_t> strides() const;
    std::size_t offset(std::span<const std::size_t> index) const;

    std::string to_string() const;

    friend bool operator==(const TensorShape&, const TensorShape&) = default;

private:
    std::vector<Dim> dims_;
    std::size_t size_ = 0;
};

class Vector {
public:
    Vector() = default;
    explicit Vector(std::size_t n, double fill = 0.0);
    Vector(std::initializer_list<double> values);
    explicit Vector(std::vector<double> values);

    std::size_t size() const noexcept { return data_.size(); }
    double operator[](std::size_t i) const { return data_[i]; }
    double& operator[](std::size_t i) { return data_[i]; }
    std::span<const double> values() const noexcept { return data_; }
    std::span<double> values() noexcept { return data_; }
    const std::vector<double>& raw() const noexcept { return data_; }

    friend bool operator==(const Vector&, const Vector&) = default;

private:
    std::vector<double> data_;
};

// Dense row-major matrix.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
    Matrix(std::initializer_list<std::initializer_list<double>> rows);

    static Matrix identity(std::size_t n);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    std::span<const double> row(std::size_t r) const {
        return std::span<const double>(data_).subspan(r * cols_, cols_);
    }
    std::span<const double> values() const noexcept { return data_; }
    std::span<double> values() noexcept { return data_; }

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

class Tensor {
public:
    Tensor() = default;
    // Throws ShapeError when data length differs from the shape element count
    // and RangeError on non-finite entries.
    Tensor(TensorShape shape, std::vector<double> data);

    const TensorShape& shape() const noexcept { return shape_; }
    std::size_t size() const noexcept { return data_.size(); }
    std::span<const double> values() const noexcept { return data_; }

    double at(std::initializer_list<std::size_t> index) const;
    double at(std::span<const std::size_t> index) const { return data_[shape_.offset(index)]; }

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    TensorShape shape_;
    std::vector<double> data_;
};

// Deterministic 64-bit generator (splitmix64). State advances by the golden
// ratio constant 0x9E3779B97F4A7C15 and each output is the state passed
// through the mixer:
//   z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//   z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//   z =  z ^ (z >> 31)
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) noexcept : state_(seed) {}

    std::uint64_t next() noexcept;
    // Uniform in [0, 1) from the top 53 bits of next().
    double next_unit() noexcept;
    // Uniform in [lo, hi).
    double next_uniform(double lo, double hi) noexcept;

private:
    std::uint64_t state_;
};

// Mixes a base seed with stream identifiers into an independent seed.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0) noexcept;

Tensor zeros(const TensorShape& shape);
// Entry k is the k-th draw of SplitMix64(seed) mapped to [lo, hi).
// RangeError unless lo < hi.
Tensor random_uniform(const TensorShape& shape, std::uint64_t seed, double lo, double hi);
Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed, double lo, double hi);
Vector random_vector(std::size_t n, std::uint64_t seed, double lo, double hi);

Vector matvec(const Matrix& m, const Vector& v);
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& m);
Matrix add(const Matrix& a, const Matrix& b);
Vector add(const Vector& a, const Vector& b);
Vector scale(const Vector& v, double s);

// Flattens `t` with the given axis order (a permutation of its axes), the
// last axis varying fastest.
Vector flatten(const Tensor& t, std::span<const Axis> order);
Vector flatten(const Tensor& t);
Tensor unflatten(const Vector& v, const TensorShape& shape, std::span<const Axis> order);
Tensor unflatten(const Vector& v, const TensorShape& shape);

Matrix to_matrix(const Tensor& t);  // rank-2 tensors only
Tensor to_tensor(const Matrix& m, Axis row_axis, Axis col_axis);

double max_abs_diff(std::span<const double> a, std::span<const double> b);
double max_abs_diff(const Vector& a, const Vector& b);
double max_abs_diff(const Matrix& a, const Matrix& b);

// Numerical rank by Gaussian elimination with partial pivoting. Pivots with
// magnitude below tol * max|entry| count as zero.
std::size_t numerical_rank(const Matrix& m, double tol = 1e-10);

std::size_t count_nonzeros(const Matrix& m);

}  // namespace uatcv
