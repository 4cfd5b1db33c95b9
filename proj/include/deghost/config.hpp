#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "deghost/image.hpp"
#include "deghost/masking.hpp"
#include "deghost/network.hpp"

namespace deghost {

enum class KeyType { Int, Real, Bool, String, IntList, RealList };

struct ConfigKey {
    std::string name;
    KeyType type;
    std::string default_value;
    std::string doc;
};

/// Every recognised key with its type, default and one-line description.
const std::vector<ConfigKey>& config_keys();

/// Flat key=value configuration. Every key has a default; unknown keys and
/// values that do not parse as the key's type raise ConfigError.
///
/// File format: one `key = value` per line, `#` starts a comment, blank lines
/// are ignored. Lists are comma separated (`net.window_sizes = 2,4,8`).
class RunConfig {
public:
    RunConfig();

    static RunConfig from_file(const std::filesystem::path& path);
    void merge_file(const std::filesystem::path& path);
    void set(const std::string& key, const std::string& value);
    /// Applies "key=value" strings in order.
    void apply_overrides(const std::vector<std::string>& assignments);

    const std::string& raw(const std::string& key) const;
    std::string get_string(const std::string& key) const;
    int64_t get_int(const std::string& key) const;
    double get_double(const std::string& key) const;
    bool get_bool(const std::string& key) const;
    std::vector<int64_t> get_int_list(const std::string& key) const;
    std::vector<double> get_real_list(const std::string& key) const;

    uint64_t seed() const { return static_cast<uint64_t>(get_int("seed")); }
    NetworkConfig network() const;
    MaskOptions mask() const;
    GammaParams gamma() const;

    /// Snapshot with typed values, embedded in checkpoints and reports.
    nlohmann::json to_json() const;
    /// Re-loadable key = value text.
    std::string to_text() const;

private:
    std::map<std::string, std::string> values_;
};

}  // namespace deghost
