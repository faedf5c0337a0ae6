#include "dyace/report.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <future>
#include <set>
#include <sstream>

#include <fmt/format.h>

namespace dyace {

using nlohmann::json;
namespace fs = std::filesystem;

std::string artifact_stem(const RunConfig& config) {
    std::string name = config.instance_name;
    if (name.empty()) name = fs::path(config.instance_path).stem().string();
    return fmt::format("{}_{}_seed{}", name, to_string(config.variant), config.seed);
}

namespace {

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    out << content;
}

std::string convergence_csv(const std::vector<json>& events) {
    std::ostringstream out;
    out << "generation,best_cost,gap\n";
    for (const auto& e : events) {
        if (e.value("event", "") != "gen_record") continue;
        out << fmt::format("{},{:.17g},{:.17g}\n", e["generation"].get<int>(),
                           e["best_cost"].get<double>(), e["gap"].get<double>());
    }
    return out.str();
}

struct RunArtifacts {
    std::string trace_path;
    std::string summary_path;
    std::string csv_path;
};

RunArtifacts write_run_artifacts(const RunResult& result, const RunConfig& config,
                                 const std::string& out_dir) {
    fs::create_directories(out_dir);
    const std::string stem = (fs::path(out_dir) / artifact_stem(config)).string();
    RunArtifacts paths{stem + ".trace.jsonl", stem + ".summary.json", stem + ".convergence.csv"};
    result.trace.save(paths.trace_path);
    write_file(paths.summary_path, result.summary.dump(2) + "\n");
    write_file(paths.csv_path, convergence_csv(result.trace.events));
    return paths;
}

int schema_check(const std::vector<json>& events, std::ostream& out) {
    if (events.empty() || events.front().value("event", "") != "run_start") {
        out << "error: trace has no run_start event\n";
        return kExitRuntimeError;
    }
    const int version = events.front().value("schema_version", -1);
    if (version != kTraceSchemaVersion) {
        out << fmt::format("error: trace schema version {} does not match supported version {}\n",
                           version, kTraceSchemaVersion);
        return kExitRuntimeError;
    }
    return kExitOk;
}

} // namespace

int cmd_run(const std::string& config_path, const std::map<std::string, std::string>& overrides,
            const std::string& out_dir, std::ostream& log) {
    RunConfig config;
    try {
        config = run_config_from_file(ConfigFile::load(config_path));
        apply_overrides(config, overrides);
        config.validate();
    } catch (const std::exception& e) {
        log << "config error: " << e.what() << "\n";
        return kExitConfigError;
    }
    try {
        const auto started = std::chrono::steady_clock::now();
        RunResult result = run(config);
        const auto paths = write_run_artifacts(result, config, out_dir);
        const auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
            std::chrono::steady_clock::now() - started);
        log << fmt::format("run complete in {} ms: final_gap={:.4f}% ledger_total={}\n",
                           elapsed.count(), result.summary["final_gap"].get<double>(),
                           result.summary["ledger_total"].get<long>());
        log << "trace:   " << paths.trace_path << "\n";
        log << "summary: " << paths.summary_path << "\n";
        log << "csv:     " << paths.csv_path << "\n";
        return kExitOk;
    } catch (const OverBudgetError& e) {
        log << "over-budget assertion: " << e.what() << "\n";
        return kExitOverBudget;
    } catch (const std::exception& e) {
        log << "runtime failure: " << e.what() << "\n";
        return kExitRuntimeError;
    }
}

int cmd_suite(const std::string& suite_path, const std::string& out_dir, int jobs,
              std::ostream& log) {
    struct Cell {
        RunConfig config;
        std::string label;
    };
    std::vector<Cell> cells;
    std::string suite_out = out_dir;
    try {
        const ConfigFile file = ConfigFile::load(suite_path);
        if (suite_out.empty()) suite_out = file.get_string("suite", "output", "out");
        if (jobs <= 0) jobs = static_cast<int>(file.get_int("suite", "jobs", 1));

        RunConfig defaults;
        {
            // Reuse the [run] reader over the [defaults] section by renaming.
            std::ostringstream synth;
            synth << "[run]\n";
            for (const char* key :
                 {"format", "backend", "n", "m_alg", "horizon", "meta_generations", "t_probe",
                  "m_rollouts", "budget", "retries", "threads", "bks_registry", "prompt_dir",
                  "probe_time_limit_s", "full_rollout_time_limit_s", "mode_weights",
                  "temperature_combine", "temperature_explore"}) {
                if (auto v = file.get("defaults", key)) synth << key << " = \"" << *v << "\"\n";
            }
            synth << "instance = \"placeholder\"\nseed = 0\n";
            defaults = run_config_from_file(ConfigFile::parse(synth.str()));
        }

        for (const auto& cell_line : file.get_all("cells", "cell")) {
            std::istringstream parts(cell_line);
            std::string instance, variant, seed;
            if (!(parts >> instance >> variant >> seed))
                throw ConfigError("suite cell must be '<instance> <variant> <seed>', got '" +
                                  cell_line + "'");
            Cell cell;
            cell.config = defaults;
            cell.config.instance_path = instance;
            cell.config.instance_name = "";
            cell.config.format = defaults.format;
            cell.config.variant = variant_from_string(variant);
            cell.config.seed = static_cast<std::uint64_t>(std::stoull(seed));
            cell.label = cell_line;
            cells.push_back(std::move(cell));
        }
        if (cells.empty()) throw ConfigError("suite has no cells");
    } catch (const std::exception& e) {
        log << "suite config error: " << e.what() << "\n";
        return kExitConfigError;
    }

    struct CellResult {
        bool ok = false;
        std::string error;
        json summary;
    };
    std::vector<CellResult> results(cells.size());

    auto run_cell = [&](std::size_t i) {
        CellResult r;
        try {
            cells[i].config.validate();
            RunResult run_result = run(cells[i].config);
            write_run_artifacts(run_result, cells[i].config, suite_out);
            r.summary = run_result.summary;
            r.ok = true;
        } catch (const std::exception& e) {
            r.error = e.what();
        }
        return r;
    };

    if (jobs > 1) {
        std::vector<std::future<CellResult>> futures;
        futures.reserve(cells.size());
        // Bounded window of in-flight cells.
        std::size_t next = 0;
        std::size_t done = 0;
        while (done < cells.size()) {
            while (next < cells.size() && futures.size() - done < static_cast<std::size_t>(jobs)) {
                futures.push_back(std::async(std::launch::async, run_cell, next));
                ++next;
            }
            results[done] = futures[done].get();
            ++done;
        }
    } else {
        for (std::size_t i = 0; i < cells.size(); ++i) results[i] = run_cell(i);
    }

    fs::create_directories(suite_out);
    bool any_failed = false;

    std::ostringstream per_cell;
    per_cell << "instance,variant,seed,status,final_gap\n";
    // instance -> variant -> gaps
    std::map<std::string, std::map<std::string, std::vector<double>>> matrix;
    std::map<std::string, std::map<std::string, std::vector<std::uint64_t>>> seeds;
    std::set<std::string> variants;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        const auto& cfg = cells[i].config;
        const std::string instance = fs::path(cfg.instance_path).stem().string();
        const std::string variant = to_string(cfg.variant);
        if (results[i].ok) {
            const double gap = results[i].summary["final_gap"].get<double>();
            per_cell << fmt::format("{},{},{},ok,{:.17g}\n", instance, variant, cfg.seed, gap);
            matrix[instance][variant].push_back(gap);
            seeds[instance][variant].push_back(cfg.seed);
            variants.insert(variant);
        } else {
            any_failed = true;
            per_cell << fmt::format("{},{},{},failed,\n", instance, variant, cfg.seed);
            log << "cell failed (" << cells[i].label << "): " << results[i].error << "\n";
        }
    }
    write_file((fs::path(suite_out) / "suite_results.csv").string(), per_cell.str());

    std::ostringstream mat;
    mat << "instance";
    for (const auto& v : variants) mat << "," << v;
    mat << "\n";
    for (const auto& [instance, row] : matrix) {
        mat << instance;
        for (const auto& v : variants) {
            auto it = row.find(v);
            if (it == row.end() || it->second.empty()) {
                mat << ",";
            } else {
                double mean = 0.0;
                for (double g : it->second) mean += g;
                mean /= static_cast<double>(it->second.size());
                mat << fmt::format(",{:.17g}", mean);
            }
        }
        mat << "\n";
    }
    write_file((fs::path(suite_out) / "suite_matrix.csv").string(), mat.str());

    std::ostringstream seeds_csv;
    seeds_csv << "instance,variant,seeds\n";
    for (const auto& [instance, row] : seeds)
        for (const auto& [variant, list] : row) {
            seeds_csv << instance << "," << variant << ",";
            for (std::size_t i = 0; i < list.size(); ++i)
                seeds_csv << (i ? " " : "") << list[i];
            seeds_csv << "\n";
        }
    write_file((fs::path(suite_out) / "suite_seeds.csv").string(), seeds_csv.str());

    log << fmt::format("suite complete: {} cells, {}\n", cells.size(),
                       any_failed ? "with failures" : "all ok");
    return any_failed ? kExitRuntimeError : kExitOk;
}

int cmd_inspect(const std::string& trace_path, const std::string& query, std::ostream& out) {
    std::vector<json> events;
    try {
        events = ControlTrace::load_jsonl(trace_path);
    } catch (const std::exception& e) {
        out << "error: " << e.what() << "\n";
        return kExitRuntimeError;
    }
    if (int rc = schema_check(events, out); rc != kExitOk) return rc;

    if (query == "gaps") {
        out << "generation,gap\n";
        for (const auto& e : events) {
            if (e.value("event", "") != "gen_record") continue;
            out << fmt::format("{},{:.17g}\n", e["generation"].get<int>(), e["gap"].get<double>());
        }
        return kExitOk;
    }
    if (query == "specs") {
        std::map<std::string, json> defined;
        for (const auto& e : events)
            if (e.value("event", "") == "spec_defined")
                defined[e["spec"]["id"].get<std::string>()] = e["spec"];
        out << "step,spec_id,from_generation,to_generation,mode,parents\n";
        for (const auto& e : events) {
            if (e.value("event", "") != "apply") continue;
            const std::string id = e["spec_id"].get<std::string>();
            std::string mode = "?";
            std::string parents;
            if (auto it = defined.find(id); it != defined.end()) {
                mode = it->second["lineage"]["mode"].get<std::string>();
                for (const auto& p : it->second["lineage"]["parents"])
                    parents += (parents.empty() ? "" : " ") + p.get<std::string>();
            }
            out << fmt::format("{},{},{},{},{},{}\n", e["step"].get<int>(), id,
                               e["from_generation"].get<int>(), e["to_generation"].get<int>(),
                               mode, parents);
        }
        return kExitOk;
    }
    if (query == "ledger") {
        try {
            const LedgerSummary ledger = budget_ledger(events);
            out << "kind,units\n";
            out << "probe_rollouts," << ledger.probe_rollouts << "\n";
            out << "reevaluations," << ledger.reevaluations << "\n";
            out << "offline_rollouts," << ledger.offline_rollouts << "\n";
            out << "total," << ledger.total() << "\n";
            out << "budget," << ledger.budget << "\n";
        } catch (const OverBudgetError& e) {
            out << "over-budget assertion: " << e.what() << "\n";
            return kExitOverBudget;
        }
        return kExitOk;
    }
    if (query == "prompts") {
        for (const auto& e : events) {
            if (e.value("event", "") != "backend_call") continue;
            out << fmt::format("--- step {} {} {} attempt {} (temperature {:g})\n",
                               e["step"].get<int>(), e["stage"].get<std::string>(),
                               e["mode"].get<std::string>(), e["attempt"].get<int>(),
                               e["request"]["temperature"].get<double>());
            out << e["request"]["prompt"].get<std::string>() << "\n";
            out << ">>> reply (ok=" << (e["reply"]["ok"].get<bool>() ? "true" : "false") << ")\n";
            out << e["reply"]["text"].get<std::string>() << "\n";
        }
        return kExitOk;
    }
    out << "error: unknown query '" << query << "' (use gaps|specs|ledger|prompts)\n";
    return kExitConfigError;
}

int cmd_validate_spec(const std::string& file, const std::string& domain, std::ostream& out) {
    std::ifstream in(file, std::ios::binary);
    if (!in) {
        out << "error: cannot open '" << file << "'\n";
        return kExitRuntimeError;
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    Domain d;
    try {
        d = domain_from_string(domain);
    } catch (const std::exception& e) {
        out << "error: " << e.what() << "\n";
        return kExitConfigError;
    }
    const ValidationResult result = validate_spec_text(buf.str(), d);
    if (result.ok()) {
        out << "valid\n";
        return kExitOk;
    }
    out << result.errors.size() << " violation(s):\n";
    for (const auto& e : result.errors) out << "- " << e << "\n";
    return kExitConfigError;
}

int cmd_list_catalog(const std::string& domain, std::ostream& out) {
    Domain d;
    try {
        d = domain_from_string(domain);
    } catch (const std::exception& e) {
        out << "error: " << e.what() << "\n";
        return kExitConfigError;
    }
    for (const auto& p : catalog_primitives(d)) {
        out << to_string(p.kind) << " " << p.name;
        if (!p.params.empty()) {
            out << " (";
            for (std::size_t i = 0; i < p.params.size(); ++i) {
                const auto& q = p.params[i];
                out << (i ? ", " : "") << q.name << (q.integer ? " int" : " real") << " ["
                    << q.lo << ".." << q.hi << "] default " << q.def;
            }
            out << ")";
        }
        out << "\n    " << p.summary << "\n";
    }
    return kExitOk;
}

} // namespace dyace
