#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace drivelab::config {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Flat key-value configuration with [section] headers; keys are addressed as
// "section.key". '#' starts a comment.
class Config {
  public:
    static Config parse(const std::string& text, const std::string& origin = "<string>");
    static Config load(const std::filesystem::path& file);

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    std::string get_string(const std::string& key, const std::string& fallback) const;
    std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
    double get_double(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::vector<int> get_int_list(const std::string& key, std::vector<int> fallback) const;
    std::vector<double> get_double_list(const std::string& key,
                                        std::vector<double> fallback) const;

    // Keys never read by a getter; used to report unknown fields.
    std::vector<std::string> unread_keys() const;

    const std::map<std::string, std::string>& values() const { return values_; }
    std::string text() const { return text_; }

  private:
    std::map<std::string, std::string> values_;
    mutable std::map<std::string, bool> read_;
    std::string text_;
};

}  // namespace drivelab::config
