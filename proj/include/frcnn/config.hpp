#pragma once

#include <fstream>
#include <map>
#include <sstream>

#include "frcnn/common.hpp"

namespace frcnn {

// Flat `section.key = value` text config. Lines starting with '#' and blank
// lines are skipped; keys are kept sorted so the canonical text form is
// deterministic.
class RunConfig {
public:
    RunConfig() = default;

    static RunConfig parse_string(const std::string& text, const std::string& origin = "<string>") {
        RunConfig cfg;
        std::istringstream is(text);
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            const std::string s = trim(line);
            if (s.empty() || s[0] == '#') continue;
            const auto eq = s.find('=');
            require(eq != std::string::npos,
                    origin + ":" + std::to_string(lineno) + ": expected 'key = value', got '" + s + "'");
            const std::string key = trim(s.substr(0, eq));
            const std::string value = trim(s.substr(eq + 1));
            require(!key.empty(), origin + ":" + std::to_string(lineno) + ": empty key");
            cfg.kv_[key] = value;
        }
        return cfg;
    }

    static RunConfig parse_file(const std::string& path) {
        std::ifstream is(path);
        require(is.good(), "cannot open config file: " + path);
        std::ostringstream buf;
        buf << is.rdbuf();
        return parse_string(buf.str(), path);
    }

    bool has(const std::string& key) const { return kv_.count(key) != 0; }

    void set(const std::string& key, const std::string& value) { kv_[key] = value; }
    void set_num(const std::string& key, Scalar v) {
        std::ostringstream os;
        os.precision(17);
        os << v;
        kv_[key] = os.str();
    }

    std::string get_str(const std::string& key, const std::string& fallback) const {
        auto it = kv_.find(key);
        return it == kv_.end() ? fallback : it->second;
    }

    Scalar get_num(const std::string& key, Scalar fallback) const {
        auto it = kv_.find(key);
        if (it == kv_.end()) return fallback;
        return parse_num(it->second, key);
    }

    long get_int(const std::string& key, long fallback) const {
        return static_cast<long>(get_num(key, static_cast<Scalar>(fallback)));
    }

    bool get_bool(const std::string& key, bool fallback) const {
        auto it = kv_.find(key);
        if (it == kv_.end()) return fallback;
        const std::string& v = it->second;
        if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
        if (v == "false" || v == "0" || v == "no" || v == "off") return false;
        fail("config key '" + key + "' is not a boolean: '" + v + "'");
    }

    std::vector<Scalar> get_list(const std::string& key, std::vector<Scalar> fallback) const {
        auto it = kv_.find(key);
        if (it == kv_.end()) return fallback;
        std::vector<Scalar> out;
        std::string item;
        std::istringstream is(it->second);
        while (std::getline(is, item, ',')) {
            const std::string t = trim(item);
            if (!t.empty()) out.push_back(parse_num(t, key));
        }
        return out;
    }

    std::string to_text() const {
        std::ostringstream os;
        for (const auto& [k, v] : kv_) os << k << " = " << v << "\n";
        return os.str();
    }

    const std::map<std::string, std::string>& entries() const { return kv_; }

private:
    static std::string trim(const std::string& s) {
        std::size_t a = 0, b = s.size();
        while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
        while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
        return s.substr(a, b - a);
    }

    static Scalar parse_num(const std::string& v, const std::string& key) {
        std::size_t pos = 0;
        Scalar out = 0;
        try {
            out = std::stod(v, &pos);
        } catch (const std::exception&) {
            fail("config key '" + key + "' is not numeric: '" + v + "'");
        }
        require(pos == v.size(), "config key '" + key + "' has trailing junk: '" + v + "'");
        return out;
    }

    std::map<std::string, std::string> kv_;
};

}  // namespace frcnn
