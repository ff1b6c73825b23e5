#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ntae/errors.hpp"

namespace ntae {

/// Flat key=value configuration with [section] grouping. Keys are addressed
/// as "section.key". Every getter marks its key as consumed; after a command
/// has read everything it understands, require_consumed() rejects whatever
/// is left, naming the first unknown key.
class Config {
  public:
    static Config parse(const std::string& text) {
        Config c;
        std::istringstream in(text);
        std::string line, section;
        int line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            const std::string t = trim(line);
            if (t.empty() || t[0] == '#' || t[0] == ';') continue;
            if (t.front() == '[') {
                if (t.back() != ']' || t.size() < 3)
                    throw ConfigError("malformed section header on line " +
                                      std::to_string(line_no) + ": " + t);
                section = trim(t.substr(1, t.size() - 2));
                if (section.empty())
                    throw ConfigError("empty section name on line " + std::to_string(line_no));
                continue;
            }
            const std::size_t eq = t.find('=');
            if (eq == std::string::npos)
                throw ConfigError("expected key=value on line " + std::to_string(line_no) +
                                  ": " + t);
            const std::string key = trim(t.substr(0, eq));
            if (key.empty())
                throw ConfigError("empty key on line " + std::to_string(line_no));
            const std::string full = section.empty() ? key : section + "." + key;
            if (c.values_.count(full))
                throw ConfigError("duplicate config key: " + full);
            c.values_[full] = trim(t.substr(eq + 1));
        }
        return c;
    }

    static Config from_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open config file " + path);
        std::ostringstream buf;
        buf << in.rdbuf();
        return parse(buf.str());
    }

    bool has(const std::string& key) const { return values_.count(key) != 0; }

    /// Sets or overrides a key (CLI overrides land here) and marks it known.
    void set(const std::string& key, const std::string& value) {
        values_[key] = value;
        consumed_.insert(key);
    }

    std::string get_string(const std::string& key) const { return raw(key); }
    std::string get_string(const std::string& key, const std::string& def) const {
        return has(key) ? raw(key) : def;
    }

    std::int64_t get_int(const std::string& key) const { return parse_int(key, raw(key)); }
    std::int64_t get_int(const std::string& key, std::int64_t def) const {
        return has(key) ? parse_int(key, raw(key)) : def;
    }

    std::uint64_t get_uint(const std::string& key, std::uint64_t def) const {
        if (!has(key)) return def;
        const std::string v = raw(key);
        std::uint64_t out{};
        const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
        if (ec != std::errc() || p != v.data() + v.size())
            throw ConfigError("key '" + key + "': cannot parse '" + v + "' as an unsigned integer");
        return out;
    }

    double get_double(const std::string& key) const { return parse_double(key, raw(key)); }
    double get_double(const std::string& key, double def) const {
        return has(key) ? parse_double(key, raw(key)) : def;
    }

    bool get_bool(const std::string& key, bool def) const {
        if (!has(key)) return def;
        const std::string v = raw(key);
        if (v == "true" || v == "yes" || v == "on" || v == "1") return true;
        if (v == "false" || v == "no" || v == "off" || v == "0") return false;
        throw ConfigError("key '" + key + "': cannot parse '" + v + "' as a boolean");
    }

    std::vector<std::string> get_string_list(const std::string& key,
                                             const std::vector<std::string>& def) const {
        if (!has(key)) return def;
        std::vector<std::string> out;
        for (const std::string& item : split_commas(raw(key))) out.push_back(item);
        if (out.empty()) throw ConfigError("key '" + key + "': empty list");
        return out;
    }

    std::vector<std::int64_t> get_int_list(const std::string& key,
                                           const std::vector<std::int64_t>& def) const {
        if (!has(key)) return def;
        std::vector<std::int64_t> out;
        for (const std::string& item : split_commas(raw(key)))
            out.push_back(parse_int(key, item));
        if (out.empty()) throw ConfigError("key '" + key + "': empty list");
        return out;
    }

    std::vector<double> get_double_list(const std::string& key,
                                        const std::vector<double>& def) const {
        if (!has(key)) return def;
        std::vector<double> out;
        for (const std::string& item : split_commas(raw(key)))
            out.push_back(parse_double(key, item));
        if (out.empty()) throw ConfigError("key '" + key + "': empty list");
        return out;
    }

    /// Rejects keys no getter has touched.
    void require_consumed() const {
        for (const auto& [key, value] : values_)
            if (!consumed_.count(key)) throw ConfigError("unknown config key: " + key);
    }

    const std::map<std::string, std::string>& entries() const { return values_; }

  private:
    static std::string trim(const std::string& s) {
        const auto b = s.find_first_not_of(" \t\r\n");
        if (b == std::string::npos) return "";
        const auto e = s.find_last_not_of(" \t\r\n");
        return s.substr(b, e - b + 1);
    }

    std::string raw(const std::string& key) const {
        const auto it = values_.find(key);
        if (it == values_.end()) throw ConfigError("missing required config key: " + key);
        consumed_.insert(key);
        return it->second;
    }

    static std::vector<std::string> split_commas(const std::string& v) {
        std::vector<std::string> out;
        std::string cur;
        std::istringstream in(v);
        while (std::getline(in, cur, ',')) {
            const std::string t = trim(cur);
            if (!t.empty()) out.push_back(t);
        }
        return out;
    }

    static std::int64_t parse_int(const std::string& key, const std::string& v) {
        std::int64_t out{};
        const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
        if (ec != std::errc() || p != v.data() + v.size())
            throw ConfigError("key '" + key + "': cannot parse '" + v + "' as an integer");
        return out;
    }

    static double parse_double(const std::string& key, const std::string& v) {
        if (v == "inf") return std::numeric_limits<double>::infinity();
        try {
            std::size_t pos = 0;
            const double out = std::stod(v, &pos);
            if (pos != v.size()) throw std::invalid_argument(v);
            return out;
        } catch (const std::exception&) {
            throw ConfigError("key '" + key + "': cannot parse '" + v + "' as a number");
        }
    }

    std::map<std::string, std::string> values_;
    mutable std::set<std::string> consumed_;
};

}  // namespace ntae
