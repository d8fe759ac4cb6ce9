// Copyright 2026 The recovnet contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace recovnet {

/// Root of every exception raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// File could not be opened, read, decoded or written.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Input violates a documented precondition (bad spec, bad label, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Tensor shapes do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A manifest row failed to parse. `row()` is 1-based and counts the header.
class ManifestError : public Error {
 public:
  ManifestError(std::size_t row, const std::string& what)
      : Error("manifest row " + std::to_string(row) + ": " + what), row_(row) {}
  std::size_t row() const noexcept { return row_; }

 private:
  std::size_t row_;
};

/// A metric was requested whose denominator is zero.
class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

enum class CheckpointFailure { kIo, kCorrupt, kVersion, kKindMismatch, kSpecMismatch };

class CheckpointError : public Error {
 public:
  CheckpointError(CheckpointFailure failure, const std::string& what)
      : Error(what), failure_(failure) {}
  CheckpointFailure failure() const noexcept { return failure_; }

 private:
  CheckpointFailure failure_;
};

/// Grad-CAM target layer has no spatial extent.
class NonSpatialLayerError : public Error {
 public:
  using Error::Error;
};

}  // namespace recovnet
