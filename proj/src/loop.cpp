#include "dyace/loop.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <fmt/format.h>

namespace dyace {

using nlohmann::json;

std::string to_string(Variant v) {
    switch (v) {
    case Variant::Dyace: return "dyace";
    case Variant::Static: return "static";
    case Variant::Blind: return "blind";
    case Variant::StaticBlind: return "static_blind";
    }
    return "?";
}

Variant variant_from_string(const std::string& s) {
    if (s == "dyace") return Variant::Dyace;
    if (s == "static") return Variant::Static;
    if (s == "blind") return Variant::Blind;
    if (s == "static_blind") return Variant::StaticBlind;
    throw std::invalid_argument("unknown variant '" + s + "'");
}

void RunConfig::validate() const {
    if (budget <= 0) throw std::invalid_argument("config: budget must be positive");
    if (n < 2) throw std::invalid_argument("config: population size must be >= 2");
    if (m_alg < 1) throw std::invalid_argument("config: algorithm population must be >= 1");
    if (horizon < 1) throw std::invalid_argument("config: horizon must be >= 1");
    if (meta_generations < 1) throw std::invalid_argument("config: meta_generations must be >= 1");
    if (t_probe < 2) throw std::invalid_argument("config: t_probe must be >= 2");
    if (m_rollouts < 1) throw std::invalid_argument("config: m_rollouts must be >= 1");
    if (retries < 1) throw std::invalid_argument("config: retries must be >= 1");
    if (threads < 1) throw std::invalid_argument("config: threads must be >= 1");
    if (backend != "scripted" && backend != "http" && backend != "none")
        throw std::invalid_argument("config: backend must be scripted, http or none");
    if (instance_path.empty()) throw std::invalid_argument("config: instance path missing");
}

json RunConfig::to_json() const {
    json j;
    j["instance_path"] = instance_path;
    j["format"] = format;
    j["instance_name"] = instance_name;
    j["variant"] = to_string(variant);
    j["backend"] = backend;
    j["seed"] = seed;
    j["n"] = n;
    j["m_alg"] = m_alg;
    j["horizon"] = horizon;
    j["meta_generations"] = meta_generations;
    j["t_probe"] = t_probe;
    j["m_rollouts"] = m_rollouts;
    j["budget"] = budget;
    j["retries"] = retries;
    j["mode_weights"] = {mode_weights.combine, mode_weights.mutate, mode_weights.explore};
    j["temperature_combine"] = temperature_combine;
    j["temperature_explore"] = temperature_explore;
    j["probe_time_limit_s"] = probe_time_limit_s;
    j["full_rollout_time_limit_s"] = full_rollout_time_limit_s;
    j["threads"] = threads;
    return j;
}

void ControlTrace::log(json event) {
    event["seq"] = events.size();
    events.push_back(std::move(event));
}

std::string ControlTrace::to_jsonl() const {
    std::ostringstream out;
    for (const auto& e : events) out << e.dump() << "\n";
    return out.str();
}

void ControlTrace::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write trace '" + path + "'");
    out << to_jsonl();
}

std::vector<json> ControlTrace::parse_jsonl(const std::string& text) {
    std::vector<json> events;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        events.push_back(json::parse(line));
    }
    return events;
}

std::vector<json> ControlTrace::load_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open trace '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_jsonl(buf.str());
}

json LedgerSummary::to_json() const {
    return json{{"probe_rollouts", probe_rollouts},
                {"reevaluations", reevaluations},
                {"offline_rollouts", offline_rollouts},
                {"total", total()},
                {"budget", budget}};
}

LedgerSummary budget_ledger(const std::vector<json>& events) {
    LedgerSummary summary;
    for (const auto& e : events) {
        const std::string type = e.value("event", "");
        if (type == "run_start") summary.budget = e["config"]["budget"].get<long>();
        if (type != "ledger_charge") continue;
        const long units = e["units"].get<long>();
        const std::string kind = e["kind"].get<std::string>();
        if (kind == "probe_rollout")
            summary.probe_rollouts += units;
        else if (kind == "reevaluation")
            summary.reevaluations += units;
        else if (kind == "offline_rollout")
            summary.offline_rollouts += units;
        else
            throw std::runtime_error("unknown ledger kind '" + kind + "'");
        if (summary.budget > 0 && summary.total() > summary.budget)
            throw OverBudgetError(fmt::format("ledger prefix {} exceeds budget {} at seq {}",
                                              summary.total(), summary.budget,
                                              e.value("seq", -1)));
    }
    return summary;
}

namespace {

// Named child slots of the run-level stream.
constexpr std::uint64_t kInitChild = 0;
constexpr std::uint64_t kRealChild = 1;
constexpr std::uint64_t kOfflineChild = 2;
constexpr std::uint64_t kMetaChild = 3;

struct RealTrajectory {
    GenerationTrace trace;
    double best_cost = std::numeric_limits<double>::infinity();
    int best_generation = 0;

    void absorb(const GenerationTrace& window, ControlTrace& log_to, const ProblemInstance& inst) {
        for (const auto& r : window.records) {
            log_to.log({{"event", "gen_record"},
                        {"generation", r.generation},
                        {"best_cost", r.best_cost},
                        {"mean_cost", r.mean_cost},
                        {"diversity", r.diversity},
                        {"successes", r.successes},
                        {"total_gain", r.total_gain},
                        {"gap", optimality_gap(r.best_cost, bks_of(inst))}});
            if (r.best_cost < best_cost) {
                best_cost = r.best_cost;
                best_generation = r.generation;
            }
        }
        trace.append(window);
    }

    std::optional<GenerationTrace> anchor_window(int h) const {
        const std::size_t want = static_cast<std::size_t>(std::max(h + 1, 3));
        if (trace.records.size() < want) return std::nullopt;
        GenerationTrace window;
        window.pop_size = trace.pop_size;
        window.records.assign(trace.records.end() - static_cast<long>(want), trace.records.end());
        return window;
    }
};

void log_transcripts(ControlTrace& trace, int step, const std::vector<BackendTranscript>& ts) {
    for (const auto& t : ts) {
        trace.log({{"event", "backend_call"},
                   {"step", step},
                   {"stage", t.stage},
                   {"mode", t.mode},
                   {"attempt", t.attempt},
                   {"request",
                    {{"prompt", t.request.prompt},
                     {"temperature", t.request.temperature},
                     {"max_tokens", t.request.max_tokens}}},
                   {"reply", {{"ok", t.reply.ok}, {"text", t.reply.text}, {"error", t.reply.error}}}});
    }
}

void log_evolve_outcome(ControlTrace& trace, int step, const EvolveOutcome& outcome) {
    log_transcripts(trace, step, outcome.transcripts);
    if (outcome.gradient)
        trace.log({{"event", "gradient"},
                   {"step", step},
                   {"analysis", outcome.gradient->analysis},
                   {"direction", outcome.gradient->direction}});
    json synth{{"event", "synthesis"}, {"step", step}, {"ok", outcome.offspring.has_value()},
               {"mode", to_string(outcome.mode)}, {"parents", outcome.parent_ids}};
    if (outcome.offspring) synth["spec_id"] = outcome.offspring->id;
    if (!outcome.failure.empty()) synth["failure"] = outcome.failure;
    trace.log(std::move(synth));
    trace.log({{"event", "survivors"}, {"step", step}, {"ids", outcome.survivor_ids}});
}

json summary_json(const RunConfig& config, const ProblemInstance& instance,
                  const RealTrajectory& real, const LedgerSummary& ledger,
                  const std::vector<std::string>& applied_specs) {
    std::vector<std::string> distinct;
    for (const auto& id : applied_specs)
        if (std::find(distinct.begin(), distinct.end(), id) == distinct.end())
            distinct.push_back(id);
    json j;
    j["schema_version"] = kTraceSchemaVersion;
    j["instance"] = name_of(instance);
    j["variant"] = to_string(config.variant);
    j["seed"] = config.seed;
    j["final_gap"] = optimality_gap(real.best_cost, bks_of(instance));
    j["best_generation"] = real.best_generation;
    j["ledger_total"] = ledger.total();
    j["ledger"] = ledger.to_json();
    j["generations"] = config.total_generations();
    j["applied_specs"] = distinct;
    return j;
}

EvolveOptions evolve_options(const RunConfig& config) {
    EvolveOptions opts;
    opts.m_alg = config.m_alg;
    opts.controller.retries = config.retries;
    opts.controller.blind = config.blind();
    opts.controller.temperature_combine = config.temperature_combine;
    opts.controller.temperature_explore = config.temperature_explore;
    opts.mode_weights = config.mode_weights;
    opts.synthesize_offspring = config.backend != "none";
    return opts;
}

std::vector<OperatorSpec> candidate_specs(const AlgorithmPopulation& algpop) {
    std::vector<OperatorSpec> out;
    for (const auto& s : algpop.specs) out.push_back(s.spec);
    return out;
}

const ScoredSpec& incumbent_or_first(const AlgorithmPopulation& algpop) {
    const ScoredSpec* best = algpop.best_scored();
    return best != nullptr ? *best : algpop.specs.front();
}

} // namespace

RunResult run_dyace(const RunConfig& config, const ProblemInstance& instance, Backend& backend,
                    const PromptLibrary& prompts) {
    config.validate();
    if (config.is_static())
        throw std::invalid_argument("run_dyace: config variant is a static one");

    const Rng root(config.seed);
    RunResult result;
    ControlTrace& trace = result.trace;
    trace.log({{"event", "run_start"},
               {"schema_version", kTraceSchemaVersion},
               {"config", config.to_json()}});

    AlgorithmPopulation algpop = seed_population(domain_of(instance), config.m_alg);
    int next_ordinal = config.m_alg + 1;
    for (const auto& s : algpop.specs)
        trace.log({{"event", "spec_defined"}, {"spec", serialize_spec(s.spec)}});

    Population pop = init_population(instance, config.n, root.child(kInitChild));
    const Rng real_base = root.child(kRealChild);
    RealTrajectory real;
    real.best_cost = pop.best_ever.cost;
    real.best_generation = 0;

    long ledger_used = 0;
    bool frozen = false;
    std::set<std::string> scored_before;
    std::vector<std::string> applied;

    ProbeOptions probe_opts;
    probe_opts.threads = config.threads;
    probe_opts.rollout_time_limit = std::chrono::seconds(config.probe_time_limit_s);

    for (int step = 1; step <= config.meta_generations; ++step) {
        const Rng step_base = root.child(kMetaChild).child(static_cast<std::uint64_t>(step));
        const long step_cost =
            static_cast<long>(algpop.specs.size()) * static_cast<long>(config.m_rollouts);

        if (!frozen && ledger_used + step_cost <= config.budget) {
            const auto anchor = real.anchor_window(config.horizon);
            RolloutReport report = probe(pop, candidate_specs(algpop), config.t_probe,
                                         config.m_rollouts, step_base.child(0),
                                         anchor ? &*anchor : nullptr, probe_opts);
            for (const auto& c : report.candidates) {
                const bool repeat = scored_before.count(c.spec_id) > 0;
                trace.log({{"event", "ledger_charge"},
                           {"step", step},
                           {"kind", repeat ? "reevaluation" : "probe_rollout"},
                           {"spec_id", c.spec_id},
                           {"units", config.m_rollouts}});
                scored_before.insert(c.spec_id);
            }
            ledger_used += step_cost;
            trace.log({{"event", "probe_report"}, {"step", step}, {"report", report_to_json(report)}});

            EvolveOutcome outcome = evolve_algorithms(algpop, report, backend, prompts,
                                                      step_base.child(1), evolve_options(config),
                                                      next_ordinal);
            algpop = std::move(outcome.population);
            if (outcome.offspring) {
                trace.log({{"event", "spec_defined"}, {"spec", serialize_spec(*outcome.offspring)}});
                ++next_ordinal;
            }
            log_evolve_outcome(trace, step, outcome);
        } else {
            frozen = true;
            trace.log({{"event", "meta_step_skipped"}, {"step", step}, {"reason", "budget"}});
        }

        const ScoredSpec& winner = incumbent_or_first(algpop);
        trace.log({{"event", "apply"},
                   {"step", step},
                   {"spec_id", winner.spec.id},
                   {"from_generation", pop.generation},
                   {"to_generation", pop.generation + config.horizon}});
        applied.push_back(winner.spec.id);
        auto [next_pop, window] = run_horizon(pop, winner.spec, config.horizon, real_base);
        pop = std::move(next_pop);
        real.absorb(window, trace, instance);
    }

    LedgerSummary ledger = budget_ledger(trace.events);
    trace.log({{"event", "run_end"},
               {"final_gap", optimality_gap(real.best_cost, bks_of(instance))},
               {"best_generation", real.best_generation},
               {"ledger", ledger.to_json()}});
    result.summary = summary_json(config, instance, real, ledger, applied);
    return result;
}

namespace {

struct OfflineEval {
    bool failed = false;
    double final_gap = 0.0;
    TrajectoryFeatures features;
};

// One full-horizon rollout from a fresh random population.
OfflineEval offline_rollout(const RunConfig& config, const ProblemInstance& instance,
                            const OperatorSpec& spec, const Rng& stream) {
    OfflineEval out;
    const auto deadline = std::chrono::steady_clock::now() +
                          std::chrono::seconds(config.full_rollout_time_limit_s);
    Population pop = init_population(instance, config.n, stream.child(0));
    GenerationTrace trace;
    trace.pop_size = config.n;
    const Rng base = stream.child(1);
    try {
        for (int g = 0; g < config.total_generations(); ++g) {
            if (std::chrono::steady_clock::now() > deadline) {
                out.failed = true;
                return out;
            }
            auto [next, rec] =
                step(pop, spec, base.child(static_cast<std::uint64_t>(pop.generation)));
            pop = std::move(next);
            trace.records.push_back(rec);
        }
    } catch (const std::exception&) {
        out.failed = true;
        return out;
    }
    out.final_gap = optimality_gap(pop.best_member().cost, bks_of(instance));
    out.features = extract_features(trace, instance);
    return out;
}

} // namespace

RunResult run_static(const RunConfig& config, const ProblemInstance& instance, Backend& backend,
                     const PromptLibrary& prompts) {
    config.validate();
    if (!config.is_static())
        throw std::invalid_argument("run_static: config variant is not a static one");

    const Rng root(config.seed);
    RunResult result;
    ControlTrace& trace = result.trace;
    trace.log({{"event", "run_start"},
               {"schema_version", kTraceSchemaVersion},
               {"config", config.to_json()}});

    AlgorithmPopulation algpop = seed_population(domain_of(instance), config.m_alg);
    int next_ordinal = config.m_alg + 1;
    for (const auto& s : algpop.specs)
        trace.log({{"event", "spec_defined"}, {"spec", serialize_spec(s.spec)}});

    long ledger_used = 0;
    long eval_counter = 0;
    std::map<std::string, TrajectoryFeatures> features_by_id;

    // Charges one unit and stores the spec's score; returns false once the
    // budget is gone.
    auto score_spec = [&](ScoredSpec& s, int meta_step) -> bool {
        if (ledger_used >= config.budget) return false;
        OfflineEval eval = offline_rollout(
            config, instance, s.spec,
            root.child(kOfflineChild).child(static_cast<std::uint64_t>(eval_counter)));
        ++eval_counter;
        ++ledger_used;
        trace.log({{"event", "ledger_charge"},
                   {"step", meta_step},
                   {"kind", "offline_rollout"},
                   {"spec_id", s.spec.id},
                   {"units", 1}});
        if (eval.failed) {
            s.failed = true;
            s.score.reset();
        } else {
            s.failed = false;
            s.score = eval.final_gap;
            features_by_id[s.spec.id] = eval.features;
        }
        json ev{{"event", "offline_eval"},
                {"step", meta_step},
                {"spec_id", s.spec.id},
                {"failed", eval.failed}};
        if (!eval.failed) ev["final_gap"] = eval.final_gap;
        trace.log(std::move(ev));
        return true;
    };

    for (auto& s : algpop.specs)
        if (!score_spec(s, 0)) break;

    if (config.backend != "none") {
        // Offline meta-evolution: no re-evaluation (the offline objective is
        // stationary); every new offspring costs one full rollout.
        const long max_meta_steps = 10L * config.budget;
        for (long meta = 1; meta <= max_meta_steps && ledger_used < config.budget; ++meta) {
            RolloutReport echo;
            echo.t_probe = config.total_generations();
            echo.m = 1;
            for (const auto& s : algpop.specs) {
                CandidateResult c;
                c.spec_id = s.spec.id;
                if (s.score && !s.failed) {
                    c.score = *s.score;
                    c.final_gaps = {*s.score};
                    c.features = features_by_id[s.spec.id];
                } else {
                    c.failed = true;
                    c.failure = "offline evaluation failed";
                }
                echo.candidates.push_back(std::move(c));
            }
            EvolveOutcome outcome = evolve_algorithms(
                algpop, echo, backend, prompts,
                root.child(kMetaChild).child(static_cast<std::uint64_t>(meta)).child(1),
                evolve_options(config), next_ordinal);
            algpop = std::move(outcome.population);
            if (outcome.offspring) {
                trace.log({{"event", "spec_defined"}, {"spec", serialize_spec(*outcome.offspring)}});
                ++next_ordinal;
            }
            log_evolve_outcome(trace, static_cast<int>(meta), outcome);
            if (outcome.offspring) score_spec(algpop.specs.back(), static_cast<int>(meta));
        }
    }

    const ScoredSpec& winner = incumbent_or_first(algpop);
    trace.log({{"event", "freeze"}, {"spec_id", winner.spec.id}});

    Population pop = init_population(instance, config.n, root.child(kInitChild));
    const Rng real_base = root.child(kRealChild);
    RealTrajectory real;
    real.best_cost = pop.best_ever.cost;
    real.best_generation = 0;
    std::vector<std::string> applied;

    for (int step = 1; step <= config.meta_generations; ++step) {
        trace.log({{"event", "apply"},
                   {"step", step},
                   {"spec_id", winner.spec.id},
                   {"from_generation", pop.generation},
                   {"to_generation", pop.generation + config.horizon}});
        applied.push_back(winner.spec.id);
        auto [next_pop, window] = run_horizon(pop, winner.spec, config.horizon, real_base);
        pop = std::move(next_pop);
        real.absorb(window, trace, instance);
    }

    LedgerSummary ledger = budget_ledger(trace.events);
    trace.log({{"event", "run_end"},
               {"final_gap", optimality_gap(real.best_cost, bks_of(instance))},
               {"best_generation", real.best_generation},
               {"ledger", ledger.to_json()}});
    result.summary = summary_json(config, instance, real, ledger, applied);
    return result;
}

RunResult run(const RunConfig& config) {
    config.validate();

    std::string format = config.format;
    if (format.empty()) {
        const std::string ext = std::filesystem::path(config.instance_path).extension().string();
        if (ext == ".tsp")
            format = "tsplib";
        else if (ext == ".vrp")
            format = "cvrplib";
        else
            format = "taillard";
    }
    std::string name = config.instance_name;
    if (name.empty()) name = std::filesystem::path(config.instance_path).stem().string();

    std::ifstream in(config.instance_path, std::ios::binary);
    if (!in) throw ProblemError("cannot open instance '" + config.instance_path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();

    const BksRegistry registry = BksRegistry::load(config.bks_registry);
    const ProblemInstance instance = parse_instance(buf.str(), format, registry, name);
    const PromptLibrary prompts = PromptLibrary::load(config.prompt_dir);

    std::unique_ptr<Backend> owned;
    ScriptedBackend scripted;
    Backend* backend = &scripted;
    if (config.backend == "http") {
        HttpBackendConfig http = config.http;
        owned = make_http_backend(http);
        backend = owned.get();
    }

    return config.is_static() ? run_static(config, instance, *backend, prompts)
                              : run_dyace(config, instance, *backend, prompts);
}

} // namespace dyace
