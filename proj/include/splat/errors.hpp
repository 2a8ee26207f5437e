// Copyright Contributors to the splat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace splat {

class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Input that is well formed but geometrically meaningless (zero-norm quaternion, empty scene).
class DegenerateInputError : public Error {
  public:
    using Error::Error;
};

/// Malformed or inconsistent input: shapes, ranges, non-finite values, schema problems.
class ValidationError : public Error {
  public:
    using Error::Error;
};

/// A computation produced or met a value it cannot continue from.
class NumericalError : public Error {
  public:
    using Error::Error;
};

class ConfigError : public Error {
  public:
    using Error::Error;
};

class IoError : public Error {
  public:
    using Error::Error;
};

} // namespace splat
