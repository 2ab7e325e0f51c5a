// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The duolab Authors

#include "config.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

namespace duolab::cli {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::vector<ConfigEntry> parse_config(const std::string& text, const std::string& source) {
  std::vector<ConfigEntry> out;
  std::istringstream in(text);
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const auto hash = raw.find('#');
    const std::string s = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (s.empty()) continue;
    const auto eq = s.find('=');
    auto fail = [&](const std::string& msg) {
      throw ConfigError(source + ":" + std::to_string(line) + ": " + msg);
    };
    if (eq == std::string::npos) fail("expected 'key = value'");
    std::string key = trim(s.substr(0, eq));
    const std::string value = trim(s.substr(eq + 1));
    if (key.empty()) fail("missing key");
    if (value.empty()) fail("missing value for '" + key + "'");
    for (char& c : key) {
      if (c == '_') c = '-';
      if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-')) fail("invalid key '" + key + "'");
    }
    const auto dup = std::find_if(out.begin(), out.end(), [&](const ConfigEntry& e) { return e.key == key; });
    if (dup != out.end()) fail("duplicate key '" + key + "' (first set on line " + std::to_string(dup->line) + ")");
    out.push_back({key, value, line});
  }
  return out;
}

void check_keys(const std::vector<ConfigEntry>& entries, const std::set<std::string>& known, const std::string& source) {
  for (const ConfigEntry& e : entries) {
    if (e.key == "config") throw ConfigError(source + ":" + std::to_string(e.line) + ": nested 'config' is not allowed");
    if (!known.count(e.key)) throw ConfigError(source + ":" + std::to_string(e.line) + ": unknown key '" + e.key + "'");
  }
}

std::vector<std::string> to_arguments(const std::vector<ConfigEntry>& entries) {
  std::vector<std::string> args;
  for (const ConfigEntry& e : entries) {
    args.push_back("--" + e.key);
    args.push_back(e.value);
  }
  return args;
}

std::string render_manifest(const std::vector<std::pair<std::string, std::string>>& entries) {
  std::string out;
  for (const auto& [k, v] : entries) out += k + " = " + v + "\n";
  return out;
}

}  // namespace duolab::cli
