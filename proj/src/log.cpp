// Copyright 2026 The AALBERT Authors
// SPDX-License-Identifier: Apache-2.0

#include "aalbert/log.hpp"

#include <iostream>
#include <mutex>

#include "aalbert/errors.hpp"

namespace aalbert {

const char* to_string(FormatError::Kind kind) {
  switch (kind) {
    case FormatError::Kind::kIo: return "io";
    case FormatError::Kind::kBadMagic: return "bad_magic";
    case FormatError::Kind::kVersionMismatch: return "version_mismatch";
    case FormatError::Kind::kTruncated: return "truncated";
    case FormatError::Kind::kShapeMismatch: return "shape_mismatch";
    case FormatError::Kind::kLabelMismatch: return "label_mismatch";
    case FormatError::Kind::kChecksum: return "checksum";
    case FormatError::Kind::kTrailingData: return "trailing_data";
  }
  return "unknown";
}

namespace log {
namespace {

std::mutex g_mutex;
bool g_verbose = false;

void default_sink(Level level, const std::string& message) {
  if (level == Level::kWarning) {
    std::cerr << "warning: " << message << '\n';
  } else if (g_verbose) {
    std::cerr << message << '\n';
  }
}

Sink& current() {
  static Sink sink = default_sink;
  return sink;
}

void emit(Level level, const std::string& message) {
  std::lock_guard lock(g_mutex);
  current()(level, message);
}

}  // namespace

Sink set_sink(Sink sink) {
  std::lock_guard lock(g_mutex);
  Sink previous = std::move(current());
  current() = sink ? std::move(sink) : Sink(default_sink);
  return previous;
}

void set_verbose(bool verbose) {
  std::lock_guard lock(g_mutex);
  g_verbose = verbose;
}

void info(const std::string& message) { emit(Level::kInfo, message); }
void warn(const std::string& message) { emit(Level::kWarning, message); }

ScopedCapture::ScopedCapture() {
  previous_ = set_sink([this](Level level, const std::string& message) {
    if (level == Level::kWarning) {
      ++warnings_;
      last_ = message;
    }
  });
}

ScopedCapture::~ScopedCapture() { set_sink(std::move(previous_)); }

}  // namespace log
}  // namespace aalbert
