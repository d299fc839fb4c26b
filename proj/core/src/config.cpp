// Copyright Contributors to the atlasgs project
// SPDX-License-Identifier: Apache-2.0

#include "atlasgs/config.hpp"

#include "atlasgs/io_error.hpp"

#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace atlasgs {

namespace {

std::string trim(const std::string &s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

} // namespace

KeyValues parse_key_values(const std::string &text, const std::string &origin) {
    KeyValues out;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
        }
        const std::string key = trim(t.substr(0, eq));
        if (key.empty()) {
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
        }
        out.emplace_back(key, trim(t.substr(eq + 1)));
    }
    return out;
}

KeyValues read_config_file(const std::filesystem::path &path) {
    std::ifstream is(path);
    if (!is) {
        throw DataError(path.string() + ": cannot open config file");
    }
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_key_values(ss.str(), path.string());
}

std::string format_key_values(const KeyValues &kv) {
    std::string out;
    for (const auto &[k, v] : kv) {
        out += k + " = " + v + "\n";
    }
    return out;
}

double parse_double(const std::string &key, const std::string &value) {
    errno = 0;
    char *end = nullptr;
    const double v = std::strtod(value.c_str(), &end);
    if (value.empty() || end != value.c_str() + value.size() || errno != 0 || !std::isfinite(v)) {
        throw ConfigError("field '" + key + "': expected a number, got '" + value + "'");
    }
    return v;
}

long long parse_int(const std::string &key, const std::string &value) {
    long long v = 0;
    const auto r = std::from_chars(value.data(), value.data() + value.size(), v);
    if (value.empty() || r.ec != std::errc() || r.ptr != value.data() + value.size()) {
        throw ConfigError("field '" + key + "': expected an integer, got '" + value + "'");
    }
    return v;
}

std::size_t parse_size(const std::string &key, const std::string &value) {
    const long long v = parse_int(key, value);
    if (v < 0) {
        throw ConfigError("field '" + key + "': must be non-negative, got '" + value + "'");
    }
    return static_cast<std::size_t>(v);
}

bool parse_bool(const std::string &key, const std::string &value) {
    if (value == "1" || value == "true" || value == "on" || value == "yes") return true;
    if (value == "0" || value == "false" || value == "off" || value == "no") return false;
    throw ConfigError("field '" + key + "': expected a boolean, got '" + value + "'");
}

std::vector<std::size_t> parse_size_list(const std::string &key, const std::string &value) {
    std::vector<std::size_t> out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) {
        out.push_back(parse_size(key, trim(item)));
    }
    if (out.empty()) {
        throw ConfigError("field '" + key + "': expected a comma-separated list");
    }
    return out;
}

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    // Prefer the shortest representation that round-trips.
    for (int prec = 1; prec <= 17; ++prec) {
        char s[64];
        std::snprintf(s, sizeof(s), "%.*g", prec, v);
        if (std::strtod(s, nullptr) == v) return s;
    }
    return buf;
}

std::string format_size_list(const std::vector<std::size_t> &values) {
    std::string out;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(values[i]);
    }
    return out;
}

} // namespace atlasgs
