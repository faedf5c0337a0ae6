#include "dyace/controller.hpp"

#include <algorithm>
#include <fstream>
#include <limits>

#include <fmt/format.h>

namespace dyace {

using nlohmann::json;

std::string to_string(ReasoningMode m) {
    switch (m) {
    case ReasoningMode::Combine: return "combine";
    case ReasoningMode::Mutate: return "mutate";
    case ReasoningMode::Explore: return "explore";
    }
    return "?";
}

namespace {

std::string trim_copy(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::optional<std::string> extract_tag(const std::string& text, const std::string& tag) {
    const std::string open = "<" + tag + ">";
    const std::string close = "</" + tag + ">";
    const auto b = text.find(open);
    if (b == std::string::npos) return std::nullopt;
    const auto e = text.find(close, b + open.size());
    if (e == std::string::npos) return std::nullopt;
    return trim_copy(text.substr(b + open.size(), e - b - open.size()));
}

std::string problem_type_name(Domain d) {
    switch (d) {
    case Domain::Jssp: return "Job Shop Scheduling Problem";
    case Domain::Tsp: return "Traveling Salesman Problem";
    case Domain::Cvrp: return "Capacitated Vehicle Routing Problem";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// Scripted backend: catalog recombination, blind to prompt text
// ---------------------------------------------------------------------------

void collect_leaves(const GraphNode& node, NodeKind kind, std::vector<const GraphNode*>& out) {
    if (node.kind == kind) out.push_back(&node);
    for (const auto& c : node.children) collect_leaves(c, kind, out);
}

// One pipeline stage copied from a parent: the leaf with its parameter values
// resolved, ready to be re-keyed in the offspring document.
struct StageCopy {
    GraphNode node;
    std::map<std::string, double> values; // slot -> value
};

std::optional<StageCopy> copy_stage(const OperatorSpec& parent, NodeKind kind, Rng& rng) {
    std::vector<const GraphNode*> pool;
    collect_leaves(parent.graph, kind, pool);
    if (pool.empty()) return std::nullopt;
    const GraphNode* pick = pool[rng.next_below(pool.size())];
    StageCopy copy;
    copy.node = *pick;
    for (const auto& [slot, key] : pick->params) copy.values[slot] = parent.params.at(key);
    return copy;
}

StageCopy random_stage(Domain domain, NodeKind kind, Rng& rng) {
    std::vector<PrimitiveDescriptor> options;
    for (const auto& p : catalog_primitives(domain))
        if (p.kind == kind) options.push_back(p);
    const PrimitiveDescriptor& prim = options[rng.next_below(options.size())];
    StageCopy copy;
    copy.node.kind = kind;
    copy.node.name = prim.name;
    for (const auto& d : prim.params) {
        double v = d.lo + rng.next_double() * (d.hi - d.lo);
        if (d.integer) v = static_cast<double>(std::llround(v));
        copy.node.params[d.name] = ""; // keyed in assemble_document
        copy.values[d.name] = v;
    }
    return copy;
}

StageCopy jitter_stage(StageCopy stage, Rng& rng) {
    const PrimitiveDescriptor* prim = find_primitive(stage.node.kind, stage.node.name);
    for (const auto& d : prim->params) {
        double v = stage.values[d.name];
        v += (rng.next_double() * 2.0 - 1.0) * 0.2 * (d.hi - d.lo);
        v = std::clamp(v, d.lo, d.hi);
        if (d.integer) v = static_cast<double>(std::llround(v));
        stage.values[d.name] = v;
    }
    return stage;
}

// Assembles the document, assigning fresh parameter keys per stage.
json assemble_document(const std::string& title, std::vector<StageCopy> stages) {
    json params = json::object();
    json children = json::array();
    int ordinal = 0;
    for (auto& stage : stages) {
        json node;
        node["kind"] = to_string(stage.node.kind);
        node["name"] = stage.node.name;
        if (!stage.values.empty()) {
            json binds = json::object();
            for (const auto& [slot, value] : stage.values) {
                const std::string key = fmt::format("p{}_{}", ordinal, slot);
                binds[slot] = key;
                params[key] = value;
            }
            node["params"] = binds;
        }
        children.push_back(std::move(node));
        ++ordinal;
    }
    json doc;
    doc["version"] = 1;
    doc["description"] = title;
    doc["parameters"] = std::move(params);
    doc["graph"] = {{"kind", "sequence"}, {"name", "sequence"}, {"children", std::move(children)}};
    return doc;
}

json scripted_offspring(const CallContext& ctx) {
    Rng rng = ctx.rng.child(static_cast<std::uint64_t>(ctx.attempt));
    const Domain domain = ctx.domain;
    std::vector<StageCopy> stages;
    std::string title;

    auto stage_from_parents = [&](NodeKind kind) -> StageCopy {
        for (int tries = 0; tries < 2 && !ctx.parents.empty(); ++tries) {
            const OperatorSpec& p = *ctx.parents[rng.next_below(ctx.parents.size())];
            if (auto copy = copy_stage(p, kind, rng)) return *copy;
        }
        return random_stage(domain, kind, rng);
    };

    switch (ctx.mode) {
    case ReasoningMode::Combine: {
        title = "Scripted hybrid of the parent pipelines";
        stages.push_back(stage_from_parents(NodeKind::Selection));
        stages.push_back(stage_from_parents(NodeKind::Crossover));
        stages.push_back(stage_from_parents(NodeKind::Mutation));
        if (domain == Domain::Jssp) {
            std::vector<const GraphNode*> ls;
            for (const auto* p : ctx.parents) collect_leaves(p->graph, NodeKind::LocalSearch, ls);
            if (!ls.empty()) stages.push_back(stage_from_parents(NodeKind::LocalSearch));
        }
        break;
    }
    case ReasoningMode::Mutate: {
        title = "Scripted parameter-tuned variant of the parent";
        const OperatorSpec& p = *ctx.parents.front();
        for (NodeKind kind : {NodeKind::Selection, NodeKind::Crossover, NodeKind::Mutation,
                              NodeKind::LocalSearch}) {
            if (auto copy = copy_stage(p, kind, rng)) stages.push_back(jitter_stage(*copy, rng));
        }
        if (stages.size() < 2) stages.push_back(random_stage(domain, NodeKind::Mutation, rng));
        break;
    }
    case ReasoningMode::Explore: {
        title = "Scripted structurally fresh pipeline";
        stages.push_back(random_stage(domain, NodeKind::Selection, rng));
        stages.push_back(random_stage(domain, NodeKind::Crossover, rng));
        stages.push_back(random_stage(domain, NodeKind::Mutation, rng));
        if (rng.next_double() < 0.5) stages.push_back(random_stage(domain, NodeKind::Mutation, rng));
        if (domain == Domain::Jssp && rng.next_double() < 0.5)
            stages.push_back(random_stage(domain, NodeKind::LocalSearch, rng));
        break;
    }
    }
    return assemble_document(title, std::move(stages));
}

} // namespace

BackendReply ScriptedBackend::complete(const BackendRequest& /*request*/, const CallContext& ctx) {
    BackendReply reply;
    reply.ok = true;
    if (ctx.stage == CallContext::Stage::Diagnosis) {
        reply.text = fmt::format(
            "<analysis>Scripted controller heuristic analysis for {} mode; the incumbent "
            "pipelines are compared on probe score only.</analysis>\n"
            "<direction>Reassemble the better-scoring structural elements of the parents and "
            "nudge their rates toward the observed winners.</direction>",
            to_string(ctx.mode));
        return reply;
    }
    const json doc = scripted_offspring(ctx);
    reply.text = fmt::format("<description>{}</description>\n<parameter>{}</parameter>\n"
                             "<code>{}</code>",
                             doc["description"].get<std::string>(), doc["parameters"].dump(),
                             doc["graph"].dump());
    return reply;
}

BackendReply MockBackend::complete(const BackendRequest& request, const CallContext& /*ctx*/) {
    requests_.push_back(request);
    BackendReply reply;
    if (next_ >= replies_.size()) {
        reply.error = "mock backend exhausted";
        return reply;
    }
    reply.ok = true;
    reply.text = replies_[next_++];
    return reply;
}

ReplayBackend ReplayBackend::from_trace_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open trace '" + path + "'");
    std::vector<BackendReply> replies;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json event = json::parse(line);
        if (event.value("event", "") != "backend_call") continue;
        BackendReply r;
        r.ok = event["reply"]["ok"].get<bool>();
        r.text = event["reply"].value("text", "");
        r.error = event["reply"].value("error", "");
        replies.push_back(std::move(r));
    }
    return ReplayBackend(std::move(replies));
}

BackendReply ReplayBackend::complete(const BackendRequest& /*request*/, const CallContext&) {
    if (next_ >= replies_.size()) return {false, "", "replay trace exhausted"};
    return replies_[next_++];
}

// ---------------------------------------------------------------------------
// Reasoning operations
// ---------------------------------------------------------------------------

const ScoredSpec* AlgorithmPopulation::best_scored() const {
    const ScoredSpec* best = nullptr;
    for (const auto& s : specs) {
        if (!s.score || s.failed) continue;
        if (best == nullptr || *s.score < *best->score ||
            (*s.score == *best->score && s.birth < best->birth))
            best = &s;
    }
    return best;
}

ReasoningMode choose_mode(int /*meta_generation*/, Rng& rng, const ModeWeights& weights,
                          std::size_t algpop_size) {
    const double wc = algpop_size < 2 ? 0.0 : weights.combine;
    const double total = wc + weights.mutate + weights.explore;
    if (total <= 0.0) return ReasoningMode::Explore;
    const double u = rng.next_double() * total;
    if (u < wc) return ReasoningMode::Combine;
    if (u < wc + weights.mutate) return ReasoningMode::Mutate;
    return ReasoningMode::Explore;
}

std::vector<const ScoredSpec*> select_parents(const AlgorithmPopulation& algpop,
                                              ReasoningMode mode, Rng& rng) {
    std::vector<const ScoredSpec*> scored;
    for (const auto& s : algpop.specs)
        if (s.score && !s.failed) scored.push_back(&s);
    if (scored.empty()) throw std::invalid_argument("select_parents: no scored specs");

    auto better = [](const ScoredSpec* a, const ScoredSpec* b) {
        return *a->score < *b->score || (*a->score == *b->score && a->birth < b->birth);
    };

    if (mode == ReasoningMode::Combine) {
        if (scored.size() < 2)
            throw std::invalid_argument("select_parents: combine needs at least two scored specs");
        const ScoredSpec* primary = *std::min_element(scored.begin(), scored.end(), better);
        // Structure-aware sampling: the secondary maximizes tree-edit distance
        // to the primary; ties fall back to score, then age.
        const ScoredSpec* secondary = nullptr;
        int best_dist = -1;
        for (const ScoredSpec* s : scored) {
            if (s == primary) continue;
            const int d = tree_edit_distance(primary->spec.graph, s->spec.graph);
            if (d > best_dist || (d == best_dist && better(s, secondary))) {
                secondary = s;
                best_dist = d;
            }
        }
        return {primary, secondary};
    }

    // Fitness-proportional sampling over inverse gap ranks: rank r gets 1/r.
    std::sort(scored.begin(), scored.end(), better);
    double total = 0.0;
    for (std::size_t r = 0; r < scored.size(); ++r) total += 1.0 / static_cast<double>(r + 1);
    double u = rng.next_double() * total;
    for (std::size_t r = 0; r < scored.size(); ++r) {
        u -= 1.0 / static_cast<double>(r + 1);
        if (u < 0.0) return {scored[r]};
    }
    return {scored.back()};
}

std::string render_parent(const OperatorSpec& spec) {
    return fmt::format("{} ({})\nparameters: {}\ngraph: {}", spec.id, spec.description,
                       json(spec.params).dump(), serialize_graph(spec.graph).dump());
}

namespace {

double mode_temperature(ReasoningMode mode, const ControllerOptions& opts) {
    return mode == ReasoningMode::Explore ? opts.temperature_explore : opts.temperature_combine;
}

std::map<std::string, std::string> parent_subs(ReasoningMode mode,
                                               const std::vector<const OperatorSpec*>& parents,
                                               const std::vector<std::string>& features,
                                               bool blind) {
    auto feature = [&](std::size_t i) -> std::string {
        if (blind) return "";
        return i < features.size() ? features[i] : "";
    };
    std::map<std::string, std::string> subs;
    if (mode == ReasoningMode::Combine) {
        subs["parent1"] = render_parent(*parents.at(0));
        subs["parent1_feature"] = feature(0);
        subs["parent2"] = render_parent(*parents.at(1));
        subs["parent2_feature"] = feature(1);
    } else {
        subs["parent_algorithm"] = render_parent(*parents.at(0));
        subs["parent"] = render_parent(*parents.at(0));
        subs["parent_feature"] = feature(0);
    }
    return subs;
}

} // namespace

DiagnosisOutcome diagnose(ReasoningMode mode, const std::vector<const OperatorSpec*>& parents,
                          const std::vector<std::string>& parent_features, Backend& backend,
                          const PromptLibrary& prompts, Domain domain, Rng rng,
                          const ControllerOptions& opts) {
    DiagnosisOutcome out;
    auto subs = parent_subs(mode, parents, parent_features, opts.blind);
    subs["problem_type"] = problem_type_name(domain);
    const std::string prompt = prompts.render("diagnosis_" + to_string(mode), subs);

    for (int attempt = 1; attempt <= opts.retries; ++attempt) {
        BackendRequest request{prompt, mode_temperature(mode, opts), opts.max_tokens};
        CallContext ctx;
        ctx.stage = CallContext::Stage::Diagnosis;
        ctx.mode = mode;
        ctx.domain = domain;
        ctx.parents = parents;
        ctx.rng = rng;
        ctx.attempt = attempt;
        BackendReply reply = backend.complete(request, ctx);
        out.transcripts.push_back({"diagnosis", to_string(mode), attempt, request, reply});
        if (!reply.ok) continue;
        auto analysis = extract_tag(reply.text, "analysis");
        auto direction = extract_tag(reply.text, "direction");
        if (analysis && direction && !analysis->empty() && !direction->empty()) {
            VerbalGradient g;
            g.analysis = *analysis;
            g.direction = *direction;
            for (const auto& f : parent_features) g.features_snapshot += f;
            out.gradient = std::move(g);
            return out;
        }
    }
    return out;
}

SynthesisOutcome synthesize(ReasoningMode mode, const std::vector<const OperatorSpec*>& parents,
                            const std::vector<std::string>& parent_features,
                            const std::optional<VerbalGradient>& gradient, Backend& backend,
                            const PromptLibrary& prompts, Domain domain, const std::string& new_id,
                            Rng rng, const ControllerOptions& opts) {
    SynthesisOutcome out;
    auto subs = parent_subs(mode, parents, parent_features, opts.blind);
    subs["problem_type"] = problem_type_name(domain);
    subs["dsl_grammar"] = dsl_grammar_reference(domain);
    subs["optimization_direction"] =
        gradient ? gradient->direction
                 : "Propose a coherent, well-formed operator document that improves on the "
                   "parent configuration.";
    const OperatorSpec& primary = *parents.at(0);
    subs["parameter_to_evolve"] = json(primary.params).dump(2);
    subs["algorithm_to_evolve"] = serialize_graph(primary.graph).dump(2);
    const std::string base_prompt = prompts.render("coding_" + to_string(mode), subs);

    std::vector<std::string> last_errors;
    for (int attempt = 1; attempt <= opts.retries; ++attempt) {
        std::string prompt = base_prompt;
        if (!last_errors.empty()) {
            prompt += "\n\nYour previous output failed validation:\n";
            for (const auto& e : last_errors) prompt += "- " + e + "\n";
            prompt += "Fix these problems and resend all three sections.";
        }
        BackendRequest request{prompt, mode_temperature(mode, opts), opts.max_tokens};
        CallContext ctx;
        ctx.stage = CallContext::Stage::Coding;
        ctx.mode = mode;
        ctx.domain = domain;
        ctx.parents = parents;
        ctx.rng = rng;
        ctx.attempt = attempt;
        BackendReply reply = backend.complete(request, ctx);
        out.transcripts.push_back({"coding", to_string(mode), attempt, request, reply});
        if (!reply.ok) {
            out.failure = reply.error;
            continue;
        }

        auto description = extract_tag(reply.text, "description");
        auto parameter = extract_tag(reply.text, "parameter");
        auto code = extract_tag(reply.text, "code");
        if (!code) {
            last_errors = {"missing <code> section"};
            out.failure = "missing <code> section";
            continue;
        }
        json code_json = json::parse(*code, nullptr, false);
        if (code_json.is_discarded()) {
            last_errors = {"<code> section is not well-formed JSON"};
            out.failure = last_errors.front();
            continue;
        }
        json document;
        if (code_json.is_object() && code_json.contains("graph")) {
            document = std::move(code_json); // full document emitted inline
        } else {
            document["version"] = 1;
            document["graph"] = std::move(code_json);
        }
        if (!document.contains("parameters") || !document["parameters"].is_object()) {
            json params = parameter ? json::parse(*parameter, nullptr, false) : json();
            if (!params.is_object()) {
                last_errors = {"<parameter> section must hold a JSON object"};
                out.failure = last_errors.front();
                continue;
            }
            document["parameters"] = std::move(params);
        }
        if (description) document["description"] = *description;

        ValidationResult validated = validate_spec(document, domain);
        if (!validated.ok()) {
            last_errors = validated.errors;
            out.failure = "validation failed";
            continue;
        }
        OperatorSpec spec = std::move(*validated.spec);
        spec.id = new_id;
        spec.lineage.mode = to_string(mode);
        spec.lineage.parents.clear();
        for (const auto* p : parents) spec.lineage.parents.push_back(p->id);
        out.spec = std::move(spec);
        out.failure.clear();
        return out;
    }
    if (out.failure.empty()) out.failure = "synthesis retries exhausted";
    return out;
}

AlgorithmPopulation seed_population(Domain domain, int m_alg) {
    AlgorithmPopulation pop;
    for (int i = 0; i < m_alg; ++i) {
        ScoredSpec s;
        s.spec = seed_spec(domain, i);
        s.spec.id = "S" + std::to_string(i + 1);
        s.birth = i + 1;
        pop.specs.push_back(std::move(s));
    }
    return pop;
}

EvolveOutcome evolve_algorithms(const AlgorithmPopulation& algpop, const RolloutReport& report,
                                Backend& backend, const PromptLibrary& prompts, Rng rng,
                                const EvolveOptions& opts, int next_spec_ordinal) {
    EvolveOutcome out;
    out.population = algpop;

    std::map<std::string, const CandidateResult*> by_id;
    for (const auto& c : report.candidates) by_id[c.spec_id] = &c;
    for (auto& s : out.population.specs) {
        auto it = by_id.find(s.spec.id);
        if (it == by_id.end()) continue;
        if (it->second->failed) {
            s.failed = true;
            s.score.reset();
        } else {
            s.failed = false;
            s.score = it->second->score;
        }
    }

    // Truncation survival: best m_alg by score, age breaking ties, failed and
    // unscored specs last.
    auto rank = [](const ScoredSpec& s) {
        return s.score && !s.failed ? *s.score : std::numeric_limits<double>::infinity();
    };
    std::stable_sort(out.population.specs.begin(), out.population.specs.end(),
                     [&](const ScoredSpec& a, const ScoredSpec& b) {
                         const double ra = rank(a);
                         const double rb = rank(b);
                         return ra < rb || (ra == rb && a.birth < b.birth);
                     });
    if (static_cast<int>(out.population.specs.size()) > opts.m_alg)
        out.population.specs.resize(static_cast<std::size_t>(opts.m_alg));
    out.population.generation = algpop.generation + 1;
    for (const auto& s : out.population.specs) out.survivor_ids.push_back(s.spec.id);

    if (!opts.synthesize_offspring) return out;

    std::size_t scored = 0;
    for (const auto& s : out.population.specs)
        if (s.score && !s.failed) ++scored;
    if (scored == 0) {
        out.failure = "no scored specs to evolve from";
        return out;
    }

    Rng mode_stream = rng.child(0);
    Rng parent_stream = rng.child(1);
    out.mode = choose_mode(out.population.generation, mode_stream, opts.mode_weights, scored);
    std::vector<const ScoredSpec*> parents = select_parents(out.population, out.mode, parent_stream);

    std::vector<const OperatorSpec*> parent_specs;
    std::vector<std::string> parent_features;
    for (const auto* p : parents) {
        parent_specs.push_back(&p->spec);
        auto it = by_id.find(p->spec.id);
        parent_features.push_back(it != by_id.end() && !it->second->failed
                                      ? render_features(it->second->features)
                                      : "");
        out.parent_ids.push_back(p->spec.id);
    }

    const Domain domain = parents.front()->spec.domain;
    DiagnosisOutcome diag = diagnose(out.mode, parent_specs, parent_features, backend, prompts,
                                     domain, rng.child(2), opts.controller);
    out.transcripts = diag.transcripts;
    out.gradient = diag.gradient;
    if (!diag.gradient) {
        out.failure = "diagnosis produced no verbal gradient";
        return out;
    }

    SynthesisOutcome synth =
        synthesize(out.mode, parent_specs, parent_features, diag.gradient, backend, prompts,
                   domain, "S" + std::to_string(next_spec_ordinal), rng.child(3), opts.controller);
    out.transcripts.insert(out.transcripts.end(), synth.transcripts.begin(),
                           synth.transcripts.end());
    if (!synth.spec) {
        out.failure = synth.failure;
        return out;
    }
    out.offspring = *synth.spec;

    ScoredSpec pending;
    pending.spec = std::move(*synth.spec);
    pending.birth = next_spec_ordinal;
    out.population.specs.push_back(std::move(pending));
    return out;
}

} // namespace dyace
