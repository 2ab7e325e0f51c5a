// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The duolab Authors

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "duolab/binaryduo.hpp"
#include "duolab/cosim.hpp"
#include "duolab/train.hpp"

namespace duolab {

/// Shortest text that reads back to the same double ("%.17g"); "nan"/"inf" spelled out.
std::string format_real(double value);

/// experiment,activation,ste,epsilon_or_sigma,seed,samples,layer,cosine
/// One row per layer (fc1, fc2, ...) then one "total" row per report.
std::string cosim_csv(const std::vector<CosimReport>& reports);
std::string cosim_json(const std::vector<CosimReport>& reports);

/// stage,epoch,train_loss,train_acc,test_acc
std::string history_csv(const std::vector<EpochRecord>& history);

std::string binaryduo_summary_json(const BinaryDuoConfig& cfg, const BinaryDuoResult& result);

std::string cumdiff_csv(const std::vector<std::pair<std::string, CumulativeDifference>>& rows);

/// Writes the whole string, creating parent directories. Throws std::runtime_error.
void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace duolab
