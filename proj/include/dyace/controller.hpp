#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dyace/dsl.hpp"
#include "dyace/probe.hpp"
#include "dyace/rng.hpp"

namespace dyace {

enum class ReasoningMode { Combine, Mutate, Explore };

std::string to_string(ReasoningMode m);

/// Natural-language diagnosis of the search state, parsed from the tagged
/// regions of a diagnosis reply.
struct VerbalGradient {
    std::string analysis;
    std::string direction;
    std::string features_snapshot;
};

struct BackendRequest {
    std::string prompt;
    double temperature = 0.7;
    int max_tokens = 2048;
};

struct BackendReply {
    bool ok = false;
    std::string text;
    std::string error;
};

/// Structured call context passed alongside the prompt. Prompt-driven
/// backends (HTTP) ignore it; the scripted controller reads only this, never
/// the prompt text, which keeps blind/full runs identical up to prompt bytes.
struct CallContext {
    enum class Stage { Diagnosis, Coding };
    Stage stage = Stage::Diagnosis;
    ReasoningMode mode = ReasoningMode::Mutate;
    Domain domain = Domain::Jssp;
    std::vector<const OperatorSpec*> parents;
    Rng rng{0};
    int attempt = 1;
};

class Backend {
public:
    virtual ~Backend() = default;
    virtual std::string name() const = 0;
    virtual BackendReply complete(const BackendRequest& request, const CallContext& ctx) = 0;
};

/// Deterministic controller that recombines catalog primitives without any
/// network. Default for CI and the acceptance suite.
class ScriptedBackend : public Backend {
public:
    std::string name() const override { return "scripted"; }
    BackendReply complete(const BackendRequest& request, const CallContext& ctx) override;
};

/// Canned-reply backend for tests. Records every request it sees.
class MockBackend : public Backend {
public:
    explicit MockBackend(std::vector<std::string> replies) : replies_(std::move(replies)) {}
    std::string name() const override { return "mock"; }
    BackendReply complete(const BackendRequest& request, const CallContext& ctx) override;

    const std::vector<BackendRequest>& requests() const { return requests_; }

private:
    std::vector<std::string> replies_;
    std::size_t next_ = 0;
    std::vector<BackendRequest> requests_;
};

/// Replays the reply stream recorded in a ControlTrace, in order.
class ReplayBackend : public Backend {
public:
    explicit ReplayBackend(std::vector<BackendReply> replies) : replies_(std::move(replies)) {}
    static ReplayBackend from_trace_file(const std::string& path);
    std::string name() const override { return "replay"; }
    BackendReply complete(const BackendRequest& request, const CallContext& ctx) override;

private:
    std::vector<BackendReply> replies_;
    std::size_t next_ = 0;
};

struct HttpBackendConfig {
    std::string base_url;                     // e.g. http://localhost:8000
    std::string path = "/v1/chat/completions";
    std::string model;
    std::string api_key_env = "DYACE_API_KEY";
    int timeout_s = 60;
};

/// JSON chat-completions client; no vendor lock beyond the wire format.
std::unique_ptr<Backend> make_http_backend(HttpBackendConfig config);

// ---------------------------------------------------------------------------
// Prompt assets
// ---------------------------------------------------------------------------

class PromptError : public std::runtime_error {
public:
    explicit PromptError(const std::string& what) : std::runtime_error(what) {}
};

/// Plain-text templates with {placeholder} substitution, loaded from a
/// directory of shipped assets.
class PromptLibrary {
public:
    static PromptLibrary load(const std::string& dir);

    const std::string& raw(const std::string& name) const;
    std::string render(const std::string& name,
                       const std::map<std::string, std::string>& subs) const;

    static std::uint64_t checksum(const std::string& text); // FNV-1a 64

private:
    std::map<std::string, std::string> templates_;
};

// ---------------------------------------------------------------------------
// Algorithm population and reasoning operations
// ---------------------------------------------------------------------------

struct ScoredSpec {
    OperatorSpec spec;
    std::optional<double> score; // pending offspring are unscored until probed
    bool failed = false;
    int birth = 0; // creation ordinal; smaller = older
};

struct AlgorithmPopulation {
    std::vector<ScoredSpec> specs;
    int generation = 0;

    const ScoredSpec* best_scored() const; // min score, ties by age
};

struct ModeWeights {
    double combine = 0.4;
    double mutate = 0.4;
    double explore = 0.2;
};

/// Sample a reasoning mode; Combine is excluded while fewer than two scored
/// specs exist.
ReasoningMode choose_mode(int meta_generation, Rng& rng, const ModeWeights& weights,
                          std::size_t algpop_size);

/// Combine: primary by fitness, secondary by maximal tree-edit distance to
/// the primary. Mutate/Explore: one parent by inverse-rank sampling.
std::vector<const ScoredSpec*> select_parents(const AlgorithmPopulation& algpop,
                                              ReasoningMode mode, Rng& rng);

struct ControllerOptions {
    int retries = 3;
    bool blind = false;
    double temperature_combine = 0.7; // shared by mutate
    double temperature_explore = 1.0;
    int max_tokens = 4096;
};

struct BackendTranscript {
    std::string stage;
    std::string mode;
    int attempt = 1;
    BackendRequest request;
    BackendReply reply;
};

struct DiagnosisOutcome {
    std::optional<VerbalGradient> gradient;
    std::vector<BackendTranscript> transcripts;
};

/// Phase I: render the mode's diagnosis template, query the backend and parse
/// the <analysis>/<direction> regions, retrying up to opts.retries attempts.
DiagnosisOutcome diagnose(ReasoningMode mode, const std::vector<const OperatorSpec*>& parents,
                          const std::vector<std::string>& parent_features, Backend& backend,
                          const PromptLibrary& prompts, Domain domain, Rng rng,
                          const ControllerOptions& opts);

struct SynthesisOutcome {
    std::optional<OperatorSpec> spec;
    std::string failure;
    std::vector<BackendTranscript> transcripts;
};

/// Phase II: render the mode's coding template (grammar reference included),
/// parse the three tagged sections and validate the document; validation
/// errors are appended to the re-prompt. Absent a gradient (blind runs) the
/// direction degrades to a generic instruction.
SynthesisOutcome synthesize(ReasoningMode mode, const std::vector<const OperatorSpec*>& parents,
                            const std::vector<std::string>& parent_features,
                            const std::optional<VerbalGradient>& gradient, Backend& backend,
                            const PromptLibrary& prompts, Domain domain, const std::string& new_id,
                            Rng rng, const ControllerOptions& opts);

struct EvolveOptions {
    int m_alg = 5;
    ControllerOptions controller;
    ModeWeights mode_weights;
    bool synthesize_offspring = true;
};

struct EvolveOutcome {
    AlgorithmPopulation population;
    std::vector<std::string> survivor_ids;
    std::optional<OperatorSpec> offspring; // pending, unscored
    ReasoningMode mode = ReasoningMode::Mutate;
    std::vector<std::string> parent_ids;
    std::optional<VerbalGradient> gradient;
    std::string failure;
    std::vector<BackendTranscript> transcripts;
};

/// One meta-generation: merge the report's scores into the population
/// (candidates are matched by id), keep the best m_alg, then synthesize one
/// offspring through choose_mode -> select_parents -> diagnose -> synthesize.
EvolveOutcome evolve_algorithms(const AlgorithmPopulation& algpop, const RolloutReport& report,
                                Backend& backend, const PromptLibrary& prompts, Rng rng,
                                const EvolveOptions& opts, int next_spec_ordinal);

/// Initial algorithm population from the shipped seed specs.
AlgorithmPopulation seed_population(Domain domain, int m_alg);

/// Human/prompt-facing rendering of one algorithm.
std::string render_parent(const OperatorSpec& spec);

} // namespace dyace
