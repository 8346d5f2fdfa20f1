#pragma once

#include <stdexcept>
#include <string>

#include "timemae/precision.hpp"

TIMEMAE_BEGIN_NAMESPACE

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes or widths.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A documented precondition of an operation was violated.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// A tensor on the tape requires grad but its op has no backward rule.
class UnsupportedOpError : public Error {
 public:
  using Error::Error;
};

/// The function handed to the finite-difference oracle is not deterministic.
class OracleInvalidError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class CorruptionError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint and data disagree on sigma, width or channel count.
class CompatibilityError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

TIMEMAE_END_NAMESPACE
