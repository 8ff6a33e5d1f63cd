#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace hanova {

// Bad user input: formula, data file, configuration, design. Maps to CLI exit code 2.
class InputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Numerical breakdown during estimation. Maps to CLI exit code 3.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class SyntaxError : public InputError {
public:
    SyntaxError(std::size_t position, const std::string& expected, const std::string& found)
        : InputError("syntax error at position " + std::to_string(position) + ": expected " +
                     expected + ", found " + found),
          position_(position), expected_(expected) {}

    std::size_t position() const noexcept { return position_; }
    const std::string& expected() const noexcept { return expected_; }

private:
    std::size_t position_;
    std::string expected_;
};

class EmptyFormula : public InputError {
public:
    EmptyFormula() : InputError("empty model formula") {}
};

class DuplicateTerm : public InputError {
public:
    explicit DuplicateTerm(const std::string& term)
        : InputError("duplicate term '" + term + "'"), term_(term) {}
    const std::string& term() const noexcept { return term_; }

private:
    std::string term_;
};

class UnknownFactor : public InputError {
public:
    explicit UnknownFactor(const std::string& name)
        : InputError("unknown factor '" + name + "'"), name_(name) {}
    const std::string& name() const noexcept { return name_; }

private:
    std::string name_;
};

class DesignError : public InputError {
public:
    using InputError::InputError;
};

class BalanceError : public DesignError {
public:
    using DesignError::DesignError;
};

class EmptyCell : public DesignError {
public:
    using DesignError::DesignError;
};

class DimensionMismatch : public DesignError {
public:
    using DesignError::DesignError;
};

class ConfigError : public InputError {
public:
    using InputError::InputError;
};

class InvalidParameter : public InputError {
public:
    using InputError::InputError;
};

class MissingColumn : public InputError {
public:
    explicit MissingColumn(const std::string& column)
        : InputError("missing column '" + column + "'"), column_(column) {}
    const std::string& column() const noexcept { return column_; }

private:
    std::string column_;
};

class UnparseableValue : public InputError {
public:
    UnparseableValue(std::size_t row, const std::string& column, const std::string& text)
        : InputError("cannot parse value '" + text + "' in column '" + column + "' at row " +
                     std::to_string(row)),
          row_(row), column_(column) {}
    // 1-based data row (header excluded).
    std::size_t row() const noexcept { return row_; }
    const std::string& column() const noexcept { return column_; }

private:
    std::size_t row_;
    std::string column_;
};

class EmptyFile : public InputError {
public:
    explicit EmptyFile(const std::string& path) : InputError("empty data file '" + path + "'") {}
};

class SerializationError : public InputError {
public:
    using InputError::InputError;
};

class SingularMatrix : public NumericalError {
public:
    SingularMatrix() : NumericalError("matrix is singular") {}
};

class RankDeficientConstraints : public NumericalError {
public:
    RankDeficientConstraints() : NumericalError("constraint matrix is rank deficient") {}
};

class NumericalFailure : public NumericalError {
public:
    using NumericalError::NumericalError;
};

}  // namespace hanova
