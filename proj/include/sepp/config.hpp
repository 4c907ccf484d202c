#pragma once

#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "sepp/common.hpp"

// Flat INI-style configuration: `[section]` headers and `key = value` lines.
// Values keep their insertion order so a resolved config can be written back
// deterministically next to the run's outputs.

namespace sepp {

class KvConfig {
public:
    static KvConfig parse_string(const std::string& text, const std::string& origin = "<string>") {
        KvConfig cfg;
        std::istringstream in(text);
        std::string line;
        std::string section;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const std::string t = trim(strip_comment(line));
            if (t.empty()) {
                continue;
            }
            if (t.front() == '[') {
                require(t.back() == ']' && t.size() > 2, "config: ", origin, ":", lineno,
                        ": malformed section header '", t, "'");
                section = t.substr(1, t.size() - 2);
                continue;
            }
            const std::size_t eq = t.find('=');
            require(eq != std::string::npos, "config: ", origin, ":", lineno,
                    ": expected 'key = value', got '", t, "'");
            const std::string key = trim(t.substr(0, eq));
            const std::string value = trim(t.substr(eq + 1));
            require(!key.empty(), "config: ", origin, ":", lineno, ": empty key");
            require(!section.empty(), "config: ", origin, ":", lineno,
                    ": key '", key, "' appears before any [section]");
            cfg.set(section + "." + key, value);
        }
        return cfg;
    }

    static KvConfig parse_file(const std::string& path) {
        std::ifstream in(path);
        require(in.good(), "config: cannot open ", path);
        std::ostringstream buf;
        buf << in.rdbuf();
        return parse_string(buf.str(), path);
    }

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    void set(const std::string& key, const std::string& value) {
        if (!values_.count(key)) {
            order_.push_back(key);
        }
        values_[key] = value;
    }

    const std::string& get_string(const std::string& key) const {
        auto it = values_.find(key);
        require(it != values_.end(), "config: missing key '", key, "'");
        return it->second;
    }

    std::string get_string(const std::string& key, const std::string& fallback) const {
        auto it = values_.find(key);
        return it == values_.end() ? fallback : it->second;
    }

    double get_double(const std::string& key, double fallback) const {
        if (!has(key)) {
            return fallback;
        }
        return parse_double(key, get_string(key));
    }

    std::int64_t get_int(const std::string& key, std::int64_t fallback) const {
        if (!has(key)) {
            return fallback;
        }
        return parse_int(key, get_string(key));
    }

    std::uint64_t get_uint(const std::string& key, std::uint64_t fallback) const {
        const std::int64_t v = get_int(key, static_cast<std::int64_t>(fallback));
        require(v >= 0, "config: key '", key, "' must be non-negative, got ", v);
        return static_cast<std::uint64_t>(v);
    }

    bool get_bool(const std::string& key, bool fallback) const {
        if (!has(key)) {
            return fallback;
        }
        const std::string& v = get_string(key);
        if (v == "true" || v == "1" || v == "yes" || v == "on") {
            return true;
        }
        if (v == "false" || v == "0" || v == "no" || v == "off") {
            return false;
        }
        fail("config: key '", key, "' must be a boolean, got '", v, "'");
    }

    std::vector<std::size_t> get_size_list(const std::string& key,
                                           std::vector<std::size_t> fallback) const {
        if (!has(key)) {
            return fallback;
        }
        std::vector<std::size_t> out;
        std::istringstream in(get_string(key));
        std::string item;
        while (std::getline(in, item, ',')) {
            const std::int64_t v = parse_int(key, trim(item));
            require(v > 0, "config: key '", key, "' entries must be positive, got ", v);
            out.push_back(static_cast<std::size_t>(v));
        }
        require(!out.empty(), "config: key '", key, "' is an empty list");
        return out;
    }

    const std::vector<std::string>& keys() const { return order_; }

    /// Deterministic text form: keys grouped by section in insertion order.
    std::string to_string() const {
        std::ostringstream out;
        std::string current;
        for (const std::string& key : order_) {
            const std::size_t dot = key.find('.');
            const std::string section = key.substr(0, dot);
            if (section != current) {
                if (!current.empty()) {
                    out << "\n";
                }
                out << "[" << section << "]\n";
                current = section;
            }
            out << key.substr(dot + 1) << " = " << values_.at(key) << "\n";
        }
        return out.str();
    }

    void write_file(const std::string& path) const {
        std::ofstream out(path, std::ios::trunc);
        require(out.good(), "config: cannot write ", path);
        out << to_string();
        require(out.good(), "config: write to ", path, " failed");
    }

private:
    static std::string strip_comment(const std::string& line) {
        const std::size_t hash = line.find_first_of("#;");
        return hash == std::string::npos ? line : line.substr(0, hash);
    }

    static std::string trim(const std::string& s) {
        std::size_t b = 0;
        std::size_t e = s.size();
        while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) {
            ++b;
        }
        while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) {
            --e;
        }
        return s.substr(b, e - b);
    }

    static double parse_double(const std::string& key, const std::string& v) {
        std::size_t used = 0;
        double out = 0.0;
        try {
            out = std::stod(v, &used);
        } catch (const std::exception&) {
            fail("config: key '", key, "' must be a number, got '", v, "'");
        }
        require(used == v.size(), "config: key '", key, "' has trailing junk in '", v, "'");
        return out;
    }

    static std::int64_t parse_int(const std::string& key, const std::string& v) {
        std::size_t used = 0;
        std::int64_t out = 0;
        try {
            out = std::stoll(v, &used);
        } catch (const std::exception&) {
            fail("config: key '", key, "' must be an integer, got '", v, "'");
        }
        require(used == v.size(), "config: key '", key, "' has trailing junk in '", v, "'");
        return out;
    }

    std::map<std::string, std::string> values_;
    std::vector<std::string> order_;
};

} // namespace sepp
