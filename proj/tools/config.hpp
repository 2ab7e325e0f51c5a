// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The duolab Authors

#pragma once

#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace duolab::cli {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ConfigEntry {
  std::string key;  ///< normalized: '_' becomes '-'
  std::string value;
  int line = 0;
};

/// Flat `key = value` lines; '#' starts a comment; blank lines ignored.
/// Errors read "<source>:<line>: <message>".
std::vector<ConfigEntry> parse_config(const std::string& text, const std::string& source);

/// Rejects keys outside `known` with a line diagnostic.
void check_keys(const std::vector<ConfigEntry>& entries, const std::set<std::string>& known, const std::string& source);

/// "--key value" argument pairs, in file order.
std::vector<std::string> to_arguments(const std::vector<ConfigEntry>& entries);

/// `key = value` lines in the given order.
std::string render_manifest(const std::vector<std::pair<std::string, std::string>>& entries);

}  // namespace duolab::cli
