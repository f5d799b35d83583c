// Copyright 2026 The AALBERT Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace aalbert {

// Rejected arguments: shape mismatches, invalid configs, out-of-range indices.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Problems with on-disk artifacts (weight checkpoints, feature files, manifests).
class FormatError : public std::runtime_error {
 public:
  enum class Kind {
    kIo,
    kBadMagic,
    kVersionMismatch,
    kTruncated,
    kShapeMismatch,
    kLabelMismatch,
    kChecksum,
    kTrailingData,
  };

  FormatError(Kind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

// Training produced a non-finite loss and was aborted.
class NumericError : public std::runtime_error {
 public:
  NumericError(long step, const std::string& what)
      : std::runtime_error(what), step_(step) {}

  long step() const noexcept { return step_; }

 private:
  long step_;
};

const char* to_string(FormatError::Kind kind);

}  // namespace aalbert
