// SPDX-License-Identifier: Apache-2.0

#include "peftlab/kv_config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

namespace peftlab {

static std::string trim(const std::string & s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

KvConfig KvConfig::from_file(const std::string & path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file: " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return from_text(ss.str(), path);
}

KvConfig KvConfig::from_text(const std::string & text, const std::string & origin) {
    KvConfig cfg;
    cfg.origin_ = origin;
    std::istringstream is(text);
    std::string        line;
    int                lineno = 0;
    while (std::getline(is, line)) {
        lineno++;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value', got '" + line + "'");
        }
        std::string key   = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty()) {
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
        }
        if (cfg.values_.count(key)) {
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
        }
        cfg.values_[key] = value;
    }
    return cfg;
}

void KvConfig::set(const std::string & key, const std::string & value) {
    values_[key] = value;
}

void KvConfig::set_pair(const std::string & pair) {
    size_t eq = pair.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw ConfigError("expected key=value, got '" + pair + "'");
    }
    std::string key = trim(pair.substr(0, eq));
    std::string value = trim(pair.substr(eq + 1));
    values_[key] = value;
}

std::string KvConfig::get_string(const std::string & key, const std::string & fallback) const {
    consumed_.insert(key);
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
}

int64_t KvConfig::get_int(const std::string & key, int64_t fallback) const {
    consumed_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
        size_t  pos;
        int64_t v = std::stoll(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument("");
        return v;
    } catch (const std::exception &) {
        throw ConfigError("key '" + key + "' is not an integer: '" + it->second + "'");
    }
}

double KvConfig::get_double(const std::string & key, double fallback) const {
    consumed_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
        size_t pos;
        double v = std::stod(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument("");
        return v;
    } catch (const std::exception &) {
        throw ConfigError("key '" + key + "' is not a number: '" + it->second + "'");
    }
}

bool KvConfig::get_bool(const std::string & key, bool fallback) const {
    consumed_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    const std::string & v = it->second;
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("key '" + key + "' is not a boolean: '" + v + "'");
}

void KvConfig::require_all_consumed() const {
    std::string unknown;
    for (const auto & [key, value] : values_) {
        if (!consumed_.count(key)) {
            unknown += unknown.empty() ? key : (", " + key);
        }
    }
    if (!unknown.empty()) {
        throw ConfigError(origin_ + ": unknown key(s): " + unknown);
    }
}

void KvConfig::merge(const KvConfig & overrides) {
    for (const auto & [key, value] : overrides.values_) {
        values_[key] = value;
    }
}

std::string KvConfig::render() const {
    std::string out;
    for (const auto & [key, value] : values_) {
        out += key + " = " + value + "\n";
    }
    return out;
}

}  // namespace peftlab
