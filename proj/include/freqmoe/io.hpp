// Copyright (c) 2026 the freqmoe authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>

#include <nlohmann/json.hpp>

#include "freqmoe/moe.hpp"
#include "freqmoe/pde.hpp"

namespace freqmoe {

// Binary formats, both little-endian, both written to a temp file and
// atomically renamed into place:
//
//   checkpoint (FQMO): "FQMO" | u32 version | u64 header bytes | JSON header
//     | payload. The header carries the architecture (kind dense|freqmoe,
//     FnoConfig, band layout and expert metadata for mixtures, seed,
//     provenance) plus a tensor manifest (name, dtype, shape, byte offset,
//     byte count, sha256). The payload is the manifest's tensors in order,
//     float64, complex interleaved (re, im).
//
//   dataset (FQDS): "FQDS" | u32 version | u64 meta bytes | JSON meta
//     (PdeDatasetMeta fields + payload sha256) | payload: all inputs then
//     all targets, each sample row-major (channel, row, col) with row =
//     axis 0.
//
// Loads verify magic, version, manifest/payload agreement and checksums;
// any mismatch raises DataError (never a silent truncation). Loading a
// checkpoint of the wrong architecture kind through a typed loader raises
// ConfigError.

inline constexpr std::uint32_t kFormatVersion = 1;

std::string sha256_hex(const void* data, std::size_t bytes);
std::string sha256_file_hex(const std::string& path);

struct Checkpoint {
  std::string kind;  // "dense" | "freqmoe"
  DenseFno dense;
  FreqMoe moe;
  std::uint64_t seed = 0;
  nlohmann::json provenance;
};

void save_dense_checkpoint(const std::string& path, const DenseFno& model,
                           const nlohmann::json& provenance, std::uint64_t seed);
void save_moe_checkpoint(const std::string& path, const FreqMoe& model,
                         const nlohmann::json& provenance, std::uint64_t seed);

Checkpoint load_checkpoint(const std::string& path);
DenseFno load_dense_checkpoint(const std::string& path);
FreqMoe load_moe_checkpoint(const std::string& path);

void save_dataset(const std::string& path, const Dataset& ds);
Dataset load_dataset(const std::string& path);

// Hash of the dataset payload exactly as serialized (provenance records).
std::string dataset_sha256(const Dataset& ds);

// Text helper with the same temp+rename discipline (run configs, CSV).
void write_text_atomic(const std::string& path, const std::string& content);

}  // namespace freqmoe
