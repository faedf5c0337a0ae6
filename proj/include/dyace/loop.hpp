#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "dyace/controller.hpp"
#include "dyace/engine.hpp"
#include "dyace/probe.hpp"

namespace dyace {

enum class Variant { Dyace, Static, Blind, StaticBlind };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);

constexpr int kTraceSchemaVersion = 1;

struct RunConfig {
    std::string instance_path;
    std::string format;        // taillard | tsplib | cvrplib; empty = infer from extension
    std::string instance_name; // BKS lookup fallback; empty = path stem
    Variant variant = Variant::Dyace;
    std::string backend = "scripted"; // scripted | http | none
    std::uint64_t seed = 1;

    int n = 100;
    int m_alg = 5;
    int horizon = 5;
    int meta_generations = 30;
    int t_probe = 30;
    int m_rollouts = 3;
    int budget = 300;
    int retries = 3;
    ModeWeights mode_weights;
    double temperature_combine = 0.7;
    double temperature_explore = 1.0;
    int probe_time_limit_s = 120;        // per probe rollout
    int full_rollout_time_limit_s = 300; // per offline full rollout
    int threads = 1;

    std::string bks_registry = "assets/bks.txt";
    std::string prompt_dir = "assets/prompts";
    HttpBackendConfig http;

    /// Throws std::invalid_argument on inconsistent settings.
    void validate() const;

    bool blind() const { return variant == Variant::Blind || variant == Variant::StaticBlind; }
    bool is_static() const {
        return variant == Variant::Static || variant == Variant::StaticBlind;
    }
    int total_generations() const { return horizon * meta_generations; }

    nlohmann::json to_json() const;
};

/// Append-only audit log; one JSON event per line when persisted. Events are
/// ordered by a logical sequence number so identical runs produce identical
/// bytes.
struct ControlTrace {
    std::vector<nlohmann::json> events;

    void log(nlohmann::json event);
    std::string to_jsonl() const;
    void save(const std::string& path) const;

    static std::vector<nlohmann::json> parse_jsonl(const std::string& text);
    static std::vector<nlohmann::json> load_jsonl(const std::string& path);
};

class OverBudgetError : public std::runtime_error {
public:
    explicit OverBudgetError(const std::string& what) : std::runtime_error(what) {}
};

struct LedgerSummary {
    long probe_rollouts = 0;   // first-time scores of a spec
    long reevaluations = 0;    // repeat scores of a spec
    long offline_rollouts = 0; // full-horizon rollouts of the static phase
    long budget = 0;

    long total() const { return probe_rollouts + reevaluations + offline_rollouts; }
    nlohmann::json to_json() const;
};

/// Recount charges from the event log. Throws OverBudgetError when any prefix
/// exceeds the recorded budget.
LedgerSummary budget_ledger(const std::vector<nlohmann::json>& events);

struct RunResult {
    ControlTrace trace;
    nlohmann::json summary;
};

/// Receding-horizon loop: probe incumbents and the pending offspring
/// iso-state, evolve the algorithm population, apply the best-scoring spec
/// for `horizon` generations; meta steps are skipped wholesale once the
/// remaining budget cannot cover a full probe.
RunResult run_dyace(const RunConfig& config, const ProblemInstance& instance, Backend& backend,
                    const PromptLibrary& prompts);

/// Static paradigm: spend the budget on offline full-horizon evaluations from
/// fresh random populations, freeze the best spec, then deploy it once over
/// the whole trajectory.
RunResult run_static(const RunConfig& config, const ProblemInstance& instance, Backend& backend,
                     const PromptLibrary& prompts);

/// Parse the instance, build the configured backend and dispatch by variant.
RunResult run(const RunConfig& config);

} // namespace dyace
