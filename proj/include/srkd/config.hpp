#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>

namespace srkd {

// Line-oriented `key = value` configuration. '#' starts a comment line,
// blank lines are skipped, later assignments win (so CLI flags can be
// layered on top of a file by setting them afterwards).
class KVConfig {
public:
    static KVConfig parse_file(const std::string& path);
    static KVConfig parse_text(const std::string& text, const std::string& origin);

    void set(const std::string& key, const std::string& value);
    bool has(const std::string& key) const;
    std::optional<std::string> get(const std::string& key) const;

    std::string get_str(const std::string& key) const;  // ParamError when absent
    std::string get_str(const std::string& key, const std::string& fallback) const;
    int64_t get_int(const std::string& key, int64_t fallback) const;
    int64_t get_int(const std::string& key) const;
    uint64_t get_u64(const std::string& key, uint64_t fallback) const;
    double get_double(const std::string& key, double fallback) const;
    double get_double(const std::string& key) const;
    bool get_bool(const std::string& key, bool fallback) const;

    const std::map<std::string, std::string>& entries() const { return entries_; }

    // FNV-1a 64 over the canonical sorted "key=value\n" form, hex encoded.
    std::string digest() const;

private:
    std::map<std::string, std::string> entries_;
};

}  // namespace srkd
