#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "demandbench/common.hpp"

namespace demandbench {

/// Flat `key = value` configuration file. Lines starting with '#' and blank
/// lines are ignored. Keys are dot-namespaced by convention
/// (e.g. market.n_products); values are scalars or comma-separated lists.
class KeyValueConfig {
  public:
    KeyValueConfig() = default;

    static KeyValueConfig from_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("config: cannot open '" + path + "'");
        std::stringstream ss;
        ss << in.rdbuf();
        return from_string(ss.str());
    }

    static KeyValueConfig from_string(const std::string& text) {
        KeyValueConfig cfg;
        std::stringstream ss(text);
        std::string line;
        int lineno = 0;
        while (std::getline(ss, line)) {
            ++lineno;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            std::string s = trim(line);
            if (s.empty() || s[0] == '#') continue;
            auto eq = s.find('=');
            if (eq == std::string::npos)
                throw ConfigError("config: line " + std::to_string(lineno) +
                                  " is not 'key = value': " + line);
            std::string key = trim(s.substr(0, eq));
            std::string value = trim(s.substr(eq + 1));
            if (key.empty())
                throw ConfigError("config: empty key on line " + std::to_string(lineno));
            cfg.values_[key] = value;
        }
        return cfg;
    }

    bool has(const std::string& key) const { return values_.count(key) != 0; }

    void set(const std::string& key, const std::string& value) { values_[key] = value; }

    std::string get_string(const std::string& key, const std::string& fallback) const {
        auto it = values_.find(key);
        return it == values_.end() ? fallback : it->second;
    }

    double get_double(const std::string& key, double fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        return parse_double(key, it->second);
    }

    long get_long(const std::string& key, long fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        return parse_long(key, it->second);
    }

    bool get_bool(const std::string& key, bool fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        const std::string& v = it->second;
        if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
        if (v == "false" || v == "0" || v == "no" || v == "off") return false;
        throw ConfigError("config: key '" + key + "' is not a boolean: " + v);
    }

    std::vector<double> get_double_list(const std::string& key,
                                        const std::vector<double>& fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        std::vector<double> out;
        for (const auto& tok : split_list(it->second))
            out.push_back(parse_double(key, tok));
        if (out.empty()) throw ConfigError("config: key '" + key + "' is an empty list");
        return out;
    }

    std::vector<long> get_long_list(const std::string& key,
                                    const std::vector<long>& fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        std::vector<long> out;
        for (const auto& tok : split_list(it->second))
            out.push_back(parse_long(key, tok));
        if (out.empty()) throw ConfigError("config: key '" + key + "' is an empty list");
        return out;
    }

    /// Sorted `key = value` rendering; the manifest hashes this so that key
    /// order in the source file does not change the fingerprint.
    std::string canonical_text() const {
        std::string out;
        for (const auto& [k, v] : values_) {
            out += k;
            out += " = ";
            out += v;
            out += '\n';
        }
        return out;
    }

    std::uint64_t hash() const { return fnv1a64(canonical_text()); }

  private:
    static std::string trim(const std::string& s) {
        auto b = s.find_first_not_of(" \t");
        auto e = s.find_last_not_of(" \t");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    }

    static std::vector<std::string> split_list(const std::string& s) {
        std::vector<std::string> toks;
        std::stringstream ss(s);
        std::string tok;
        while (std::getline(ss, tok, ',')) {
            tok = trim(tok);
            if (!tok.empty()) toks.push_back(tok);
        }
        return toks;
    }

    static double parse_double(const std::string& key, const std::string& v) {
        try {
            std::size_t pos = 0;
            double x = std::stod(v, &pos);
            if (pos != v.size()) throw std::invalid_argument(v);
            return x;
        } catch (const std::exception&) {
            throw ConfigError("config: key '" + key + "' is not a number: " + v);
        }
    }

    static long parse_long(const std::string& key, const std::string& v) {
        try {
            std::size_t pos = 0;
            long x = std::stol(v, &pos);
            if (pos != v.size()) throw std::invalid_argument(v);
            return x;
        } catch (const std::exception&) {
            throw ConfigError("config: key '" + key + "' is not an integer: " + v);
        }
    }

    std::map<std::string, std::string> values_;
};

}  // namespace demandbench
