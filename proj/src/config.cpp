#include "srkd/config.hpp"

#include <charconv>
#include <fstream>

#include "srkd/error.hpp"

namespace srkd {

namespace {

std::string trim(std::string_view s) {
    size_t b = 0, e = s.size();
    while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r')) ++b;
    while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
    return std::string(s.substr(b, e - b));
}

}  // namespace

KVConfig KVConfig::parse_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config " + path);
    std::string text((std::istreambuf_iterator<char>(f)),
                     std::istreambuf_iterator<char>());
    return parse_text(text, path);
}

KVConfig KVConfig::parse_text(const std::string& text, const std::string& origin) {
    KVConfig cfg;
    size_t line_no = 0;
    size_t pos = 0;
    while (pos <= text.size()) {
        size_t nl = text.find('\n', pos);
        std::string line = trim(text.substr(pos, nl == std::string::npos
                                                     ? std::string::npos
                                                     : nl - pos));
        ++line_no;
        pos = nl == std::string::npos ? text.size() + 1 : nl + 1;
        if (line.empty() || line[0] == '#') continue;
        size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw DataError(origin + " line " + std::to_string(line_no) +
                            ": expected key = value");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw DataError(origin + " line " + std::to_string(line_no) +
                            ": empty key");
        cfg.entries_[key] = value;
    }
    return cfg;
}

void KVConfig::set(const std::string& key, const std::string& value) {
    entries_[key] = value;
}

bool KVConfig::has(const std::string& key) const { return entries_.count(key) > 0; }

std::optional<std::string> KVConfig::get(const std::string& key) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) return std::nullopt;
    return it->second;
}

std::string KVConfig::get_str(const std::string& key) const {
    auto v = get(key);
    if (!v) throw ParamError("missing required config key '" + key + "'");
    return *v;
}

std::string KVConfig::get_str(const std::string& key, const std::string& fallback) const {
    return get(key).value_or(fallback);
}

int64_t KVConfig::get_int(const std::string& key) const {
    std::string s = get_str(key);
    int64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size())
        throw ParamError("config key '" + key + "': bad integer '" + s + "'");
    return v;
}

int64_t KVConfig::get_int(const std::string& key, int64_t fallback) const {
    return has(key) ? get_int(key) : fallback;
}

uint64_t KVConfig::get_u64(const std::string& key, uint64_t fallback) const {
    if (!has(key)) return fallback;
    std::string s = get_str(key);
    uint64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size())
        throw ParamError("config key '" + key + "': bad unsigned integer '" + s + "'");
    return v;
}

double KVConfig::get_double(const std::string& key) const {
    std::string s = get_str(key);
    try {
        size_t used = 0;
        double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (...) {
        throw ParamError("config key '" + key + "': bad number '" + s + "'");
    }
}

double KVConfig::get_double(const std::string& key, double fallback) const {
    return has(key) ? get_double(key) : fallback;
}

bool KVConfig::get_bool(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    std::string s = get_str(key);
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    throw ParamError("config key '" + key + "': bad boolean '" + s + "'");
}

std::string KVConfig::digest() const {
    uint64_t h = 0xCBF29CE484222325ULL;
    auto feed = [&](const std::string& s) {
        for (unsigned char c : s) {
            h ^= c;
            h *= 0x100000001B3ULL;
        }
    };
    for (const auto& [k, v] : entries_) {
        feed(k);
        feed("=");
        feed(v);
        feed("\n");
    }
    char buf[17];
    snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace srkd
