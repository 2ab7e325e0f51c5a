// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The duolab Authors

#pragma once

#include <filesystem>
#include <string>

#include "duolab/network.hpp"

namespace duolab {

/// Binary checkpoint, format version 1. All integers are little-endian
/// unsigned, all reals little-endian IEEE-754 binary64.
///
///   header   : magic "DUOLABCK" (8 bytes), u32 version, u32 layer count, u8 mode
///   per layer: u32 fan_in, u32 sums, u32 replicas,
///              u32 levels (0 = full precision), u8 ste kind, f64 ste param,
///              u8 flags (bit0 bias, bit1 batch norm),
///              f64[sums*fan_in] weights (row-major),
///              f64[sums] bias                              if bit0,
///              f64 eps, f64 momentum, then f64[width] each of
///              gamma, beta, running_mean, running_var      if bit1
///
/// Loading rejects a wrong magic, any other version, truncation and trailing
/// bytes with FormatError.
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string encode_checkpoint(const Network& net);
Network decode_checkpoint(const std::string& bytes);

void save_checkpoint(const Network& net, const std::filesystem::path& path);
Network load_checkpoint(const std::filesystem::path& path);

}  // namespace duolab
