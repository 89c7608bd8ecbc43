// Copyright 2026 The irene-lab Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace irene {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Caller violated a precondition (bad argument, out-of-range index, wrong state).
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Tensor or image shapes do not agree.
class DimensionError : public UsageError {
 public:
  using UsageError::UsageError;
};

/// A non-finite value showed up in an activation, gradient or loss.
class NanError : public Error {
 public:
  using Error::Error;
};

/// File or stream failure; the message carries the path.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed checkpoint container or dataset file.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace irene
