#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace fsm {

// Round-trip-safe decimal encoding: shortest representation that parses back
// to the identical f64 bit pattern.
inline std::string format_double(double v) {
    char buf[40];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s, const std::string& what = "input") {
    double v = 0.0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
        throw std::runtime_error("cannot parse number '" + std::string(s) + "' in " + what);
    }
    return v;
}

inline long parse_long(std::string_view s, const std::string& what = "input") {
    long v = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
        throw std::runtime_error("cannot parse integer '" + std::string(s) + "' in " + what);
    }
    return v;
}

inline std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_ws(const std::string& line) {
    std::vector<std::string> out;
    std::istringstream iss(line);
    std::string tok;
    while (iss >> tok) out.push_back(tok);
    return out;
}

inline std::vector<std::string> split_char(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

// FNV-1a, used for content-addressed cache keys.
inline std::uint64_t fnv1a(std::string_view data, std::uint64_t seed = 0xcbf29ce484222325ull) {
    std::uint64_t h = seed;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::string hash_hex(std::string_view data) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a(data)));
    return std::string(buf);
}

// Atomic file write: write to a temp sibling, then rename over the target.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
    namespace fs = std::filesystem;
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw std::runtime_error("cannot open for writing: " + tmp.string());
        out << content;
        if (!out) throw std::runtime_error("write failed: " + tmp.string());
    }
    fs::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open file: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Header block shared by the text formats: lines of the form "# key = value".
struct TextHeader {
    std::map<std::string, std::string> kv;

    bool has(const std::string& key) const { return kv.count(key) > 0; }

    const std::string& get(const std::string& key) const {
        auto it = kv.find(key);
        if (it == kv.end()) throw std::runtime_error("missing header key '" + key + "'");
        return it->second;
    }

    std::string get_or(const std::string& key, const std::string& def) const {
        auto it = kv.find(key);
        return it == kv.end() ? def : it->second;
    }

    double get_double(const std::string& key) const { return parse_double(get(key), "header key '" + key + "'"); }
    long get_long(const std::string& key) const { return parse_long(get(key), "header key '" + key + "'"); }

    void set(const std::string& key, const std::string& v) { kv[key] = v; }
    void set_double(const std::string& key, double v) { kv[key] = format_double(v); }
    void set_long(const std::string& key, long v) { kv[key] = std::to_string(v); }

    // Keys are emitted in sorted order, so headers are deterministic.
    void write(std::ostream& os) const {
        for (const auto& [key, val] : kv) os << "# " << key << " = " << val << '\n';
    }
};

// Parses leading "# key = value" lines; stops at the first non-header line and
// returns it through first_body (empty if the stream ended).
inline TextHeader read_text_header(std::istream& in, std::string& first_body) {
    TextHeader h;
    std::string line;
    first_body.clear();
    while (std::getline(in, line)) {
        std::string t = trim(line);
        if (t.empty()) continue;
        if (t[0] != '#') {
            first_body = t;
            break;
        }
        auto eq = t.find('=');
        if (eq == std::string::npos) continue;
        std::string key = trim(t.substr(1, eq - 1));
        std::string val = trim(t.substr(eq + 1));
        h.kv[key] = val;
    }
    return h;
}

}  // namespace fsm
