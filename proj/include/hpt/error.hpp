// Copyright (c) 2026, The HPT Lab Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace hpt {

/// Root of every error raised by the library. The CLI maps subclasses onto
/// disjoint exit codes.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
public:
  using Error::Error;
};

/// A caller broke an operation's documented precondition.
class ContractError : public Error {
public:
  using Error::Error;
};

class ConfigError : public Error {
public:
  using Error::Error;
};

class DataError : public Error {
public:
  using Error::Error;
};

class DuplicateIdError : public DataError {
public:
  using DataError::DataError;
};

class LabelRangeError : public DataError {
public:
  using DataError::DataError;
};

class SplitTokenError : public DataError {
public:
  using DataError::DataError;
};

class MissingFileError : public DataError {
public:
  using DataError::DataError;
};

class InfeasibleBudgetError : public DataError {
public:
  using DataError::DataError;
};

/// Unreadable, truncated, or shape-incompatible checkpoint.
class CheckpointError : public DataError {
public:
  using DataError::DataError;
};

class NumericError : public Error {
public:
  using Error::Error;
};

/// Row with (near) zero norm handed to l2_normalize.
class DegenerateEmbeddingError : public NumericError {
public:
  using NumericError::NumericError;
};

/// Similarity statistic whose denominator vanished.
class DegenerateError : public Error {
public:
  using Error::Error;
};

}  // namespace hpt
