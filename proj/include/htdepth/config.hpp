#pragma once

// Line-oriented `key = value` run configuration with `[section]` headers.
// Keys are flattened to "section.key". Command-line flags override file
// values by writing into the same map.

#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "tensor.hpp"

namespace htd {

class Config {
public:
    Config() = default;

    static Config parse(std::istream& is, const std::string& origin = "config") {
        Config cfg;
        std::string line, section;
        int line_no = 0;
        while (std::getline(is, line)) {
            ++line_no;
            auto hash = line.find('#');
            if (hash != std::string::npos) line = line.substr(0, hash);
            auto first = line.find_first_not_of(" \t\r");
            if (first == std::string::npos) continue;
            auto last = line.find_last_not_of(" \t\r");
            line = line.substr(first, last - first + 1);
            if (line.front() == '[') {
                if (line.back() != ']')
                    throw ConfigError(origin + " line " + std::to_string(line_no) +
                                      ": unterminated section header");
                section = line.substr(1, line.size() - 2);
                continue;
            }
            auto eq = line.find('=');
            if (eq == std::string::npos)
                throw ConfigError(origin + " line " + std::to_string(line_no) +
                                  ": expected 'key = value'");
            std::string key = strip(line.substr(0, eq));
            std::string value = strip(line.substr(eq + 1));
            if (key.empty())
                throw ConfigError(origin + " line " + std::to_string(line_no) + ": empty key");
            cfg.values_[section.empty() ? key : section + "." + key] = value;
        }
        return cfg;
    }

    static Config load(const std::string& path) {
        std::ifstream is(path);
        if (!is) throw ConfigError("cannot open config file: " + path);
        return parse(is, path);
    }

    bool has(const std::string& key) const { return values_.count(key) > 0; }
    void set(const std::string& key, const std::string& value) { values_[key] = value; }

    std::string get(const std::string& key, const std::string& fallback) const {
        auto it = values_.find(key);
        return it == values_.end() ? fallback : it->second;
    }

    double get_double(const std::string& key, double fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        try {
            size_t used = 0;
            double v = std::stod(it->second, &used);
            if (used != it->second.size()) throw std::invalid_argument(it->second);
            return v;
        } catch (const std::exception&) {
            throw ConfigError("config key '" + key + "': '" + it->second + "' is not a number");
        }
    }

    int64_t get_int(const std::string& key, int64_t fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        try {
            size_t used = 0;
            int64_t v = std::stoll(it->second, &used);
            if (used != it->second.size()) throw std::invalid_argument(it->second);
            return v;
        } catch (const std::exception&) {
            throw ConfigError("config key '" + key + "': '" + it->second + "' is not an integer");
        }
    }

    bool get_bool(const std::string& key, bool fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        if (it->second == "true" || it->second == "1") return true;
        if (it->second == "false" || it->second == "0") return false;
        throw ConfigError("config key '" + key + "': '" + it->second + "' is not a boolean");
    }

    // FNV-1a over the sorted key=value pairs; stable across runs.
    uint64_t hash() const {
        uint64_t h = 1469598103934665603ull;
        auto mix = [&](const std::string& s) {
            for (unsigned char c : s) {
                h ^= c;
                h *= 1099511628211ull;
            }
        };
        for (const auto& [k, v] : values_) {
            mix(k);
            mix("=");
            mix(v);
            mix("\n");
        }
        return h;
    }

    std::string hash_hex() const {
        std::ostringstream os;
        os << std::hex << hash();
        return os.str();
    }

    const std::map<std::string, std::string>& values() const { return values_; }

private:
    static std::string strip(std::string s) {
        auto a = s.find_first_not_of(" \t");
        auto b = s.find_last_not_of(" \t");
        return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    }

    std::map<std::string, std::string> values_;
};

}  // namespace htd
