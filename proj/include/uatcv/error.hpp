// Copyright (C) 2026 The uatcv Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <optional>
#include <stdexcept>
#include <string>

namespace uatcv {

// Numeric values are stable: they cross the C API boundary.
enum class ErrorCode : int {
    Shape = 1,
    Capacity = 2,
    Range = 3,
    Spec = 4,
    Parse = 5,
    Validation = 6,
    Rank = 7,
    Io = 8,
    Internal = 9,
};

const char* error_code_name(ErrorCode code) noexcept;

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

class ShapeError : public Error {
public:
    explicit ShapeError(const std::string& m) : Error(ErrorCode::Shape, m) {}
};

class CapacityError : public Error {
public:
    explicit CapacityError(const std::string& m) : Error(ErrorCode::Capacity, m) {}
};

class RangeError : public Error {
public:
    explicit RangeError(const std::string& m) : Error(ErrorCode::Range, m) {}
};

class SpecError : public Error {
public:
    explicit SpecError(const std::string& m) : Error(ErrorCode::Spec, m) {}
};

class RankError : public Error {
public:
    explicit RankError(const std::string& m) : Error(ErrorCode::Rank, m) {}
};

class IoError : public Error {
public:
    explicit IoError(const std::string& m) : Error(ErrorCode::Io, m) {}
};

class InternalError : public Error {
public:
    explicit InternalError(const std::string& m) : Error(ErrorCode::Internal, m) {}
};

// Errors raised while reading a network description. Both carry the index of
// the offending layer when one is known.
class LayerError : public Error {
public:
    LayerError(ErrorCode code, std::optional<std::size_t> layer, const std::string& reason);

    std::optional<std::size_t> layer() const noexcept { return layer_; }
    const std::string& reason() const noexcept { return reason_; }

private:
    std::optional<std::size_t> layer_;
    std::string reason_;
};

class ParseError : public LayerError {
public:
    ParseError(std::optional<std::size_t> layer, const std::string& reason)
        : LayerError(ErrorCode::Parse, layer, reason) {}
};

class ValidationError : public LayerError {
public:
    ValidationError(std::optional<std::size_t> layer, const std::string& reason)
        : LayerError(ErrorCode::Validation, layer, reason) {}
};

}  // namespace uatcv
