// Copyright (c) 2026 the freqmoe authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace freqmoe {

// Invalid configuration or arguments: wrong sizes, unsupported values,
// incompatible model/data combinations. Maps to CLI exit code 1.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad data encountered at runtime: NaN inputs, corrupt files, checksum or
// version mismatches. Maps to CLI exit code 2.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Failures while running an otherwise valid job (diverged training, I/O
// faults). Maps to CLI exit code 2.
class RuntimeError : public std::runtime_error {
 public:
  explicit RuntimeError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace freqmoe
