// Copyright 2026 The AALBERT Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <string>

namespace aalbert::log {

enum class Level { kInfo, kWarning };

using Sink = std::function<void(Level, const std::string&)>;

// Replaces the process-wide sink and returns the previous one. The default
// sink writes warnings to stderr and drops info messages unless verbose.
Sink set_sink(Sink sink);
void set_verbose(bool verbose);

void info(const std::string& message);
void warn(const std::string& message);

// Installs a capturing sink for the lifetime of the object.
class ScopedCapture {
 public:
  ScopedCapture();
  ~ScopedCapture();
  ScopedCapture(const ScopedCapture&) = delete;
  ScopedCapture& operator=(const ScopedCapture&) = delete;

  int warnings() const { return warnings_; }
  const std::string& last_warning() const { return last_; }

 private:
  Sink previous_;
  int warnings_ = 0;
  std::string last_;
};

}  // namespace aalbert::log
