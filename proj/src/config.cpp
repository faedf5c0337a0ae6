#include "dyace/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

namespace dyace {

namespace {

std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::string unquote(const std::string& s) {
    if (s.size() >= 2 && ((s.front() == '"' && s.back() == '"') ||
                          (s.front() == '\'' && s.back() == '\'')))
        return s.substr(1, s.size() - 2);
    return s;
}

} // namespace

ConfigFile ConfigFile::parse(const std::string& text) {
    ConfigFile file;
    std::istringstream lines(text);
    std::string line;
    std::string section;
    int lineno = 0;
    while (std::getline(lines, line)) {
        ++lineno;
        // Strip comments outside quotes.
        bool quoted = false;
        for (std::size_t i = 0; i < line.size(); ++i) {
            if (line[i] == '"') quoted = !quoted;
            if (line[i] == '#' && !quoted) {
                line = line.substr(0, i);
                break;
            }
        }
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError("config line " + std::to_string(lineno) +
                                  ": unterminated section header");
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty() || value.empty())
            throw ConfigError("config line " + std::to_string(lineno) + ": empty key or value");
        file.values_[section][key].push_back(unquote(value));
    }
    return file;
}

ConfigFile ConfigFile::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse(buf.str());
}

bool ConfigFile::has(const std::string& section, const std::string& key) const {
    auto s = values_.find(section);
    return s != values_.end() && s->second.count(key) > 0;
}

std::optional<std::string> ConfigFile::get(const std::string& section,
                                           const std::string& key) const {
    auto s = values_.find(section);
    if (s == values_.end()) return std::nullopt;
    auto k = s->second.find(key);
    if (k == s->second.end() || k->second.empty()) return std::nullopt;
    return k->second.back();
}

std::vector<std::string> ConfigFile::get_all(const std::string& section,
                                             const std::string& key) const {
    auto s = values_.find(section);
    if (s == values_.end()) return {};
    auto k = s->second.find(key);
    return k == s->second.end() ? std::vector<std::string>{} : k->second;
}

std::string ConfigFile::get_string(const std::string& section, const std::string& key,
                                   const std::string& fallback) const {
    auto v = get(section, key);
    return v ? *v : fallback;
}

long ConfigFile::get_int(const std::string& section, const std::string& key, long fallback) const {
    auto v = get(section, key);
    if (!v) return fallback;
    try {
        std::size_t pos = 0;
        long out = std::stol(*v, &pos);
        if (pos != v->size()) throw std::invalid_argument(*v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError("config key " + section + "." + key + ": expected integer, got '" + *v +
                          "'");
    }
}

double ConfigFile::get_double(const std::string& section, const std::string& key,
                              double fallback) const {
    auto v = get(section, key);
    if (!v) return fallback;
    try {
        std::size_t pos = 0;
        double out = std::stod(*v, &pos);
        if (pos != v->size()) throw std::invalid_argument(*v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError("config key " + section + "." + key + ": expected number, got '" + *v +
                          "'");
    }
}

std::vector<double> ConfigFile::get_double_list(const std::string& section,
                                                const std::string& key) const {
    auto v = get(section, key);
    if (!v) return {};
    std::string body = *v;
    if (!body.empty() && body.front() == '[' && body.back() == ']')
        body = body.substr(1, body.size() - 2);
    std::vector<double> out;
    std::istringstream parts(body);
    std::string tok;
    while (std::getline(parts, tok, ',')) {
        tok = trim(tok);
        if (tok.empty()) continue;
        try {
            out.push_back(std::stod(tok));
        } catch (const std::exception&) {
            throw ConfigError("config key " + section + "." + key + ": bad list entry '" + tok +
                              "'");
        }
    }
    return out;
}

RunConfig run_config_from_file(const ConfigFile& file) {
    RunConfig c;
    c.instance_path = file.get_string("run", "instance", "");
    c.format = file.get_string("run", "format", "");
    c.instance_name = file.get_string("run", "instance_name", "");
    c.variant = variant_from_string(file.get_string("run", "variant", "dyace"));
    c.backend = file.get_string("run", "backend", "scripted");
    if (!file.has("run", "seed")) throw ConfigError("config: [run] seed is required");
    c.seed = static_cast<std::uint64_t>(file.get_int("run", "seed", 1));
    c.n = static_cast<int>(file.get_int("run", "n", c.n));
    c.m_alg = static_cast<int>(file.get_int("run", "m_alg", c.m_alg));
    c.horizon = static_cast<int>(file.get_int("run", "horizon", c.horizon));
    c.meta_generations =
        static_cast<int>(file.get_int("run", "meta_generations", c.meta_generations));
    c.t_probe = static_cast<int>(file.get_int("run", "t_probe", c.t_probe));
    c.m_rollouts = static_cast<int>(file.get_int("run", "m_rollouts", c.m_rollouts));
    c.budget = static_cast<int>(file.get_int("run", "budget", c.budget));
    c.retries = static_cast<int>(file.get_int("run", "retries", c.retries));
    c.threads = static_cast<int>(file.get_int("run", "threads", c.threads));
    c.temperature_combine = file.get_double("run", "temperature_combine", c.temperature_combine);
    c.temperature_explore = file.get_double("run", "temperature_explore", c.temperature_explore);
    c.probe_time_limit_s =
        static_cast<int>(file.get_int("run", "probe_time_limit_s", c.probe_time_limit_s));
    c.full_rollout_time_limit_s = static_cast<int>(
        file.get_int("run", "full_rollout_time_limit_s", c.full_rollout_time_limit_s));
    c.bks_registry = file.get_string("run", "bks_registry", c.bks_registry);
    c.prompt_dir = file.get_string("run", "prompt_dir", c.prompt_dir);

    auto weights = file.get_double_list("run", "mode_weights");
    if (!weights.empty()) {
        if (weights.size() != 3)
            throw ConfigError("config: mode_weights needs exactly 3 entries");
        c.mode_weights = {weights[0], weights[1], weights[2]};
    }

    c.http.base_url = file.get_string("http", "base_url", c.http.base_url);
    c.http.path = file.get_string("http", "path", c.http.path);
    c.http.model = file.get_string("http", "model", c.http.model);
    c.http.api_key_env = file.get_string("http", "api_key_env", c.http.api_key_env);
    c.http.timeout_s = static_cast<int>(file.get_int("http", "timeout_s", c.http.timeout_s));
    return c;
}

void apply_overrides(RunConfig& config, const std::map<std::string, std::string>& overrides) {
    for (const auto& [key, value] : overrides) {
        try {
            if (key == "variant")
                config.variant = variant_from_string(value);
            else if (key == "backend")
                config.backend = value;
            else if (key == "seed")
                config.seed = static_cast<std::uint64_t>(std::stoull(value));
            else if (key == "budget")
                config.budget = std::stoi(value);
            else if (key == "threads")
                config.threads = std::stoi(value);
            else if (key == "n")
                config.n = std::stoi(value);
            else if (key == "instance")
                config.instance_path = value;
            else if (key == "instance_name")
                config.instance_name = value;
            else if (key == "format")
                config.format = value;
            else if (key == "bks_registry")
                config.bks_registry = value;
            else if (key == "prompt_dir")
                config.prompt_dir = value;
            else
                throw ConfigError("unknown override '" + key + "'");
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception&) {
            throw ConfigError("bad value '" + value + "' for override '" + key + "'");
        }
    }
}

} // namespace dyace
