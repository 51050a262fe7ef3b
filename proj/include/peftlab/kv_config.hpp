// SPDX-License-Identifier: Apache-2.0
//
// Plain-text `key = value` configuration files: one pair per line, `#` starts
// a comment, unknown keys are errors so typos cannot silently fall back to
// defaults.

#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace peftlab {

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string & msg) : std::runtime_error(msg) {}
};

class KvConfig {
  public:
    KvConfig() = default;

    static KvConfig from_file(const std::string & path);
    static KvConfig from_text(const std::string & text, const std::string & origin = "<text>");

    void set(const std::string & key, const std::string & value);

    // Parses "key=value" (as given on a command line).
    void set_pair(const std::string & pair);

    bool has(const std::string & key) const { return values_.count(key) != 0; }

    std::string get_string(const std::string & key, const std::string & fallback) const;
    int64_t     get_int(const std::string & key, int64_t fallback) const;
    double      get_double(const std::string & key, double fallback) const;
    bool        get_bool(const std::string & key, bool fallback) const;

    // Keys read so far; unread keys are reported by require_all_consumed so a
    // misspelled option fails loudly instead of being ignored.
    void require_all_consumed() const;

    void merge(const KvConfig & overrides);

    std::string render() const;

    const std::map<std::string, std::string> & values() const { return values_; }

  private:
    std::map<std::string, std::string> values_;
    mutable std::set<std::string>      consumed_;
    std::string                        origin_ = "<empty>";
};

}  // namespace peftlab
