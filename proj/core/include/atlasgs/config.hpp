// Copyright Contributors to the atlasgs project
// SPDX-License-Identifier: Apache-2.0
//
// `key = value` configuration text. Blank lines and lines starting with '#'
// are ignored; later assignments override earlier ones.

#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace atlasgs {

/// Unknown keys, malformed values or inconsistent settings. Messages name the
/// offending field.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using KeyValues = std::vector<std::pair<std::string, std::string>>;

KeyValues parse_key_values(const std::string &text, const std::string &origin = "<config>");
/// Throws DataError when the file cannot be read.
KeyValues read_config_file(const std::filesystem::path &path);
std::string format_key_values(const KeyValues &kv);

/// Strict conversions; throw ConfigError naming `key`.
double parse_double(const std::string &key, const std::string &value);
long long parse_int(const std::string &key, const std::string &value);
std::size_t parse_size(const std::string &key, const std::string &value);
bool parse_bool(const std::string &key, const std::string &value);
std::vector<std::size_t> parse_size_list(const std::string &key, const std::string &value);

std::string format_double(double v);
std::string format_size_list(const std::vector<std::size_t> &values);

} // namespace atlasgs
