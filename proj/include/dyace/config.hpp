#pragma once

#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dyace/loop.hpp"

namespace dyace {

class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Declarative key-value config with [section] headers, '#' comments, quoted
/// strings, numbers, booleans and flat arrays. Repeated keys accumulate.
class ConfigFile {
public:
    static ConfigFile parse(const std::string& text);
    static ConfigFile load(const std::string& path);

    bool has(const std::string& section, const std::string& key) const;
    std::optional<std::string> get(const std::string& section, const std::string& key) const;
    std::vector<std::string> get_all(const std::string& section, const std::string& key) const;

    std::string get_string(const std::string& section, const std::string& key,
                           const std::string& fallback) const;
    long get_int(const std::string& section, const std::string& key, long fallback) const;
    double get_double(const std::string& section, const std::string& key, double fallback) const;
    std::vector<double> get_double_list(const std::string& section, const std::string& key) const;

private:
    // section -> key -> values in file order
    std::map<std::string, std::map<std::string, std::vector<std::string>>> values_;
};

/// Build a RunConfig from the [run] and [http] sections of a config file.
RunConfig run_config_from_file(const ConfigFile& file);

/// Apply CLI-style string overrides (key -> value) onto a config.
void apply_overrides(RunConfig& config, const std::map<std::string, std::string>& overrides);

} // namespace dyace
