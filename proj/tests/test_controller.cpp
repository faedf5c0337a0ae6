#include <doctest.h>

#include <fstream>
#include <thread>

#include <fmt/format.h>
#include <httplib.h>

#include "dyace/controller.hpp"
#include "dyace/engine.hpp"
#include "oracles.hpp"

using namespace dyace;
using nlohmann::json;

namespace {

std::string prompts_dir() { return std::string(DYACE_SOURCE_DIR) + "/assets/prompts"; }

const PromptLibrary& prompts() {
    static const PromptLibrary lib = PromptLibrary::load(prompts_dir());
    return lib;
}

ScoredSpec scored(Domain d, int variant, const std::string& id, int birth, double score_value) {
    ScoredSpec s;
    s.spec = seed_spec(d, variant);
    s.spec.id = id;
    s.birth = birth;
    s.score = score_value;
    return s;
}

std::string tagged_reply(const OperatorSpec& spec) {
    return fmt::format("<description>{}</description>\n<parameter>{}</parameter>\n<code>{}</code>",
                       spec.description, json(spec.params).dump(),
                       serialize_graph(spec.graph).dump());
}

} // namespace

TEST_CASE("choose_mode honours degenerate weights") {
    Rng rng(1);
    for (int i = 0; i < 200; ++i) {
        CHECK(choose_mode(i, rng, {1.0, 0.0, 0.0}, 5) == ReasoningMode::Combine);
        CHECK(choose_mode(i, rng, {0.0, 0.0, 1.0}, 5) == ReasoningMode::Explore);
        // Combine is excluded below two specs.
        CHECK(choose_mode(i, rng, {1.0, 0.0, 0.0}, 1) == ReasoningMode::Explore);
    }
}

TEST_CASE("choose_mode frequencies match the default weights") {
    Rng rng(42);
    int counts[3] = {0, 0, 0};
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) {
        switch (choose_mode(i, rng, {}, 5)) {
        case ReasoningMode::Combine: ++counts[0]; break;
        case ReasoningMode::Mutate: ++counts[1]; break;
        case ReasoningMode::Explore: ++counts[2]; break;
        }
    }
    CHECK(std::abs(counts[0] / static_cast<double>(draws) - 0.4) < 0.02);
    CHECK(std::abs(counts[1] / static_cast<double>(draws) - 0.4) < 0.02);
    CHECK(std::abs(counts[2] / static_cast<double>(draws) - 0.2) < 0.02);
}

TEST_CASE("combine parent selection is forced with two specs") {
    AlgorithmPopulation pop;
    pop.specs.push_back(scored(Domain::Tsp, 0, "S1", 1, 5.0));
    pop.specs.push_back(scored(Domain::Tsp, 1, "S2", 2, 9.0));
    Rng rng(3);
    auto parents = select_parents(pop, ReasoningMode::Combine, rng);
    REQUIRE(parents.size() == 2);
    CHECK(parents[0]->spec.id == "S1");
    CHECK(parents[1]->spec.id == "S2");
}

TEST_CASE("combine secondary maximizes tree-edit distance to the primary") {
    AlgorithmPopulation pop;
    for (int v = 0; v < 5; ++v)
        pop.specs.push_back(
            scored(Domain::Jssp, v, "S" + std::to_string(v + 1), v + 1, v == 2 ? 1.0 : 5.0 + v));
    Rng rng(4);
    auto parents = select_parents(pop, ReasoningMode::Combine, rng);
    REQUIRE(parents.size() == 2);
    CHECK(parents[0]->spec.id == "S3"); // the best score

    // Exhaustive check against the independent brute-force distance.
    int best_dist = -1;
    for (const auto& s : pop.specs) {
        if (s.spec.id == "S3") continue;
        best_dist =
            std::max(best_dist, oracles::brute_force_ted(parents[0]->spec.graph, s.spec.graph));
    }
    CHECK(oracles::brute_force_ted(parents[0]->spec.graph, parents[1]->spec.graph) == best_dist);
}

TEST_CASE("mutate with a single spec returns that spec; combine refuses") {
    AlgorithmPopulation pop;
    pop.specs.push_back(scored(Domain::Tsp, 0, "only", 1, 2.0));
    Rng rng(5);
    auto parents = select_parents(pop, ReasoningMode::Mutate, rng);
    REQUIRE(parents.size() == 1);
    CHECK(parents[0]->spec.id == "only");
    CHECK_THROWS_AS(select_parents(pop, ReasoningMode::Combine, rng), std::invalid_argument);
}

TEST_CASE("inverse-rank sampling prefers better scores") {
    AlgorithmPopulation pop;
    pop.specs.push_back(scored(Domain::Tsp, 0, "best", 1, 1.0));
    pop.specs.push_back(scored(Domain::Tsp, 1, "mid", 2, 5.0));
    pop.specs.push_back(scored(Domain::Tsp, 2, "worst", 3, 9.0));
    Rng rng(6);
    int best_picks = 0;
    const int draws = 3000;
    for (int i = 0; i < draws; ++i) {
        auto parents = select_parents(pop, ReasoningMode::Mutate, rng);
        best_picks += parents[0]->spec.id == "best";
    }
    // rank weight 1 over (1 + 1/2 + 1/3)
    CHECK(std::abs(best_picks / static_cast<double>(draws) - 6.0 / 11.0) < 0.03);
}

TEST_CASE("diagnose parses tagged replies from a mock backend") {
    const OperatorSpec parent = seed_spec(Domain::Tsp, 0);
    MockBackend mock({"<analysis>The parent converges slowly.</analysis>"
                      "<direction>Raise the mutation rate.</direction>"});
    auto outcome = diagnose(ReasoningMode::Mutate, {&parent}, {"velocity: 0.1000\n"}, mock,
                            prompts(), Domain::Tsp, Rng(1), {});
    REQUIRE(outcome.gradient.has_value());
    CHECK(outcome.gradient->analysis == "The parent converges slowly.");
    CHECK(outcome.gradient->direction == "Raise the mutation rate.");
    CHECK(outcome.transcripts.size() == 1);
    CHECK(mock.requests()[0].prompt.find("velocity: 0.1000") != std::string::npos);
}

TEST_CASE("a reply with an unterminated direction tag triggers one retry") {
    const OperatorSpec parent = seed_spec(Domain::Tsp, 0);
    MockBackend mock({"<analysis>a</analysis><direction>unterminated",
                      "<analysis>a</analysis><direction>d</direction>"});
    auto outcome =
        diagnose(ReasoningMode::Mutate, {&parent}, {""}, mock, prompts(), Domain::Tsp, Rng(2), {});
    REQUIRE(outcome.gradient.has_value());
    CHECK(outcome.gradient->direction == "d");
    REQUIRE(outcome.transcripts.size() == 2);
    CHECK(outcome.transcripts[0].attempt == 1);
    CHECK(outcome.transcripts[1].attempt == 2);
}

TEST_CASE("diagnosis fails after exhausting retries") {
    const OperatorSpec parent = seed_spec(Domain::Tsp, 0);
    MockBackend mock({"nothing", "still nothing", "nope"});
    ControllerOptions opts;
    opts.retries = 3;
    auto outcome = diagnose(ReasoningMode::Mutate, {&parent}, {""}, mock, prompts(), Domain::Tsp,
                            Rng(3), opts);
    CHECK_FALSE(outcome.gradient.has_value());
    CHECK(outcome.transcripts.size() == 3);
}

TEST_CASE("the blind flag removes every feature block from the prompt") {
    const OperatorSpec parent = seed_spec(Domain::Tsp, 0);
    const std::string features = "velocity: 0.5000\nacceleration: 0.0000\n";

    MockBackend full({"<analysis>a</analysis><direction>d</direction>"});
    diagnose(ReasoningMode::Mutate, {&parent}, {features}, full, prompts(), Domain::Tsp, Rng(4),
             {});
    CHECK(full.requests()[0].prompt.find("velocity:") != std::string::npos);

    MockBackend blind({"<analysis>a</analysis><direction>d</direction>"});
    ControllerOptions opts;
    opts.blind = true;
    diagnose(ReasoningMode::Mutate, {&parent}, {features}, blind, prompts(), Domain::Tsp, Rng(4),
             opts);
    CHECK(blind.requests()[0].prompt.find("velocity:") == std::string::npos);
}

TEST_CASE("synthesize round-trips a seed spec emitted by the backend") {
    const OperatorSpec parent = seed_spec(Domain::Jssp, 1);
    const OperatorSpec emitted = seed_spec(Domain::Jssp, 0);
    MockBackend mock({tagged_reply(emitted)});
    VerbalGradient gradient{"analysis", "direction", ""};
    auto outcome = synthesize(ReasoningMode::Mutate, {&parent}, {""}, gradient, mock, prompts(),
                              Domain::Jssp, "S9", Rng(5), {});
    REQUIRE(outcome.spec.has_value());
    CHECK(outcome.spec->id == "S9");
    CHECK(outcome.spec->lineage.mode == "mutate");
    CHECK(outcome.spec->lineage.parents == std::vector<std::string>{parent.id});
    CHECK(outcome.spec->graph == emitted.graph);
    CHECK(outcome.spec->params == emitted.params);
    CHECK(outcome.spec->description == emitted.description);
}

TEST_CASE("validation failures re-prompt with the error list appended") {
    const OperatorSpec parent = seed_spec(Domain::Tsp, 0);
    OperatorSpec bad = seed_spec(Domain::Tsp, 0);
    bad.params["pm"] = 1.7; // far out of bounds
    const OperatorSpec good = seed_spec(Domain::Tsp, 2);

    MockBackend mock({tagged_reply(bad), tagged_reply(good)});
    VerbalGradient gradient{"a", "d", ""};
    auto outcome = synthesize(ReasoningMode::Mutate, {&parent}, {""}, gradient, mock, prompts(),
                              Domain::Tsp, "S9", Rng(6), {});
    REQUIRE(outcome.spec.has_value());
    CHECK(outcome.spec->graph == good.graph);
    REQUIRE(mock.requests().size() == 2);
    CHECK(mock.requests()[1].prompt.find("out of bounds") != std::string::npos);
    CHECK(mock.requests()[1].prompt.find("failed validation") != std::string::npos);
}

TEST_CASE("synthesis gives up after the retry limit") {
    const OperatorSpec parent = seed_spec(Domain::Tsp, 0);
    MockBackend mock({"<code>not json</code>", "<code>not json</code>", "<code>not json</code>"});
    VerbalGradient gradient{"a", "d", ""};
    ControllerOptions opts;
    opts.retries = 3;
    auto outcome = synthesize(ReasoningMode::Mutate, {&parent}, {""}, gradient, mock, prompts(),
                              Domain::Tsp, "S9", Rng(7), opts);
    CHECK_FALSE(outcome.spec.has_value());
    CHECK_FALSE(outcome.failure.empty());
    CHECK(outcome.transcripts.size() == 3);
}

TEST_CASE("explore requests decode at a strictly higher temperature") {
    const OperatorSpec parent = seed_spec(Domain::Tsp, 0);
    const OperatorSpec other = seed_spec(Domain::Tsp, 1);
    const OperatorSpec emitted = seed_spec(Domain::Tsp, 2);
    VerbalGradient gradient{"a", "d", ""};

    MockBackend explore_mock({tagged_reply(emitted)});
    synthesize(ReasoningMode::Explore, {&parent}, {""}, gradient, explore_mock, prompts(),
               Domain::Tsp, "S9", Rng(8), {});
    MockBackend combine_mock({tagged_reply(emitted)});
    synthesize(ReasoningMode::Combine, {&parent, &other}, {"", ""}, gradient, combine_mock,
               prompts(), Domain::Tsp, "S9", Rng(8), {});

    CHECK(explore_mock.requests()[0].temperature == 1.0);
    CHECK(combine_mock.requests()[0].temperature == 0.7);
    CHECK(explore_mock.requests()[0].temperature > combine_mock.requests()[0].temperature);
}

TEST_CASE("the coding prompt embeds the grammar reference and direction") {
    const OperatorSpec parent = seed_spec(Domain::Tsp, 0);
    const OperatorSpec emitted = seed_spec(Domain::Tsp, 1);
    MockBackend mock({tagged_reply(emitted)});
    VerbalGradient gradient{"a", "push toward two-point crossover", ""};
    synthesize(ReasoningMode::Mutate, {&parent}, {""}, gradient, mock, prompts(), Domain::Tsp,
               "S9", Rng(9), {});
    const std::string& prompt = mock.requests()[0].prompt;
    CHECK(prompt.find("push toward two-point crossover") != std::string::npos);
    CHECK(prompt.find("exactly one selection node") != std::string::npos);
    CHECK(prompt.find("local_search") == std::string::npos); // tsp grammar has no local search
}

TEST_CASE("policy purity: identical inputs produce identical specs") {
    const OperatorSpec parent = seed_spec(Domain::Cvrp, 3);
    const OperatorSpec emitted = seed_spec(Domain::Cvrp, 4);
    VerbalGradient gradient{"a", "d", ""};
    MockBackend m1({tagged_reply(emitted)});
    MockBackend m2({tagged_reply(emitted)});
    auto a = synthesize(ReasoningMode::Mutate, {&parent}, {"f"}, gradient, m1, prompts(),
                        Domain::Cvrp, "S5", Rng(10), {});
    auto b = synthesize(ReasoningMode::Mutate, {&parent}, {"f"}, gradient, m2, prompts(),
                        Domain::Cvrp, "S5", Rng(10), {});
    REQUIRE(a.spec.has_value());
    REQUIRE(b.spec.has_value());
    CHECK(*a.spec == *b.spec);
}

TEST_CASE("scripted coding replies always validate on the first attempt") {
    for (Domain d : {Domain::Jssp, Domain::Tsp, Domain::Cvrp}) {
        const OperatorSpec p1 = seed_spec(d, 0);
        const OperatorSpec p2 = seed_spec(d, 4);
        ScriptedBackend backend;
        VerbalGradient gradient{"a", "d", ""};
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            for (ReasoningMode mode :
                 {ReasoningMode::Combine, ReasoningMode::Mutate, ReasoningMode::Explore}) {
                std::vector<const OperatorSpec*> parents = {&p1};
                std::vector<std::string> features = {""};
                if (mode == ReasoningMode::Combine) {
                    parents.push_back(&p2);
                    features.emplace_back();
                }
                auto outcome = synthesize(mode, parents, features, gradient, backend, prompts(), d,
                                          "S9", Rng(seed), {});
                REQUIRE_MESSAGE(outcome.spec.has_value(),
                                to_string(d) << " " << to_string(mode) << " seed " << seed << ": "
                                             << outcome.failure);
                CHECK(outcome.transcripts.size() == 1);
                CHECK(outcome.spec->domain == d);
                // Synthesized specs survive a serialization round trip intact.
                auto reparsed = validate_spec(serialize_spec(*outcome.spec), d);
                REQUIRE(reparsed.ok());
                CHECK(*reparsed.spec == *outcome.spec);
            }
        }
    }
}

TEST_CASE("scripted backends ignore prompt text entirely") {
    ScriptedBackend backend;
    const OperatorSpec p = seed_spec(Domain::Tsp, 0);
    CallContext ctx;
    ctx.stage = CallContext::Stage::Coding;
    ctx.mode = ReasoningMode::Mutate;
    ctx.domain = Domain::Tsp;
    ctx.parents = {&p};
    ctx.rng = Rng(3);
    ctx.attempt = 1;
    auto a = backend.complete({"prompt text one", 0.7, 100}, ctx);
    auto b = backend.complete({"completely different prompt", 1.0, 999}, ctx);
    CHECK(a.text == b.text);
}

TEST_CASE("evolve_algorithms truncation keeps the best m_alg") {
    const PromptLibrary& lib = prompts();
    ScriptedBackend backend;

    AlgorithmPopulation pop;
    pop.specs.push_back(scored(Domain::Tsp, 0, "S1", 1, 0.0));
    pop.specs.push_back(scored(Domain::Tsp, 1, "S2", 2, 0.0));
    ScoredSpec pending;
    pending.spec = seed_spec(Domain::Tsp, 2);
    pending.spec.id = "S3";
    pending.birth = 3;
    pop.specs.push_back(pending);

    auto report_with = [&](double s1, double s2, double s3) {
        RolloutReport r;
        r.t_probe = 5;
        r.m = 1;
        for (auto [id, sc] :
             {std::pair<const char*, double>{"S1", s1}, {"S2", s2}, {"S3", s3}}) {
            CandidateResult c;
            c.spec_id = id;
            c.score = sc;
            c.final_gaps = {sc};
            r.candidates.push_back(c);
        }
        return r;
    };

    EvolveOptions opts;
    opts.m_alg = 2;
    opts.synthesize_offspring = false;

    SUBCASE("offspring scoring worse leaves the population unchanged") {
        auto outcome =
            evolve_algorithms(pop, report_with(5.0, 6.0, 9.0), backend, lib, Rng(1), opts, 4);
        CHECK(outcome.survivor_ids == std::vector<std::string>{"S1", "S2"});
        CHECK(outcome.population.specs[0].score == 5.0);
        CHECK(outcome.population.specs[1].score == 6.0);
        CHECK(outcome.population.generation == 1);
    }
    SUBCASE("offspring scoring best enters and the worst leaves") {
        auto outcome =
            evolve_algorithms(pop, report_with(5.0, 6.0, 1.0), backend, lib, Rng(1), opts, 4);
        CHECK(outcome.survivor_ids == std::vector<std::string>{"S3", "S1"});
    }
    SUBCASE("score ties break by age, older first") {
        auto outcome =
            evolve_algorithms(pop, report_with(4.0, 4.0, 4.0), backend, lib, Rng(1), opts, 4);
        CHECK(outcome.survivor_ids == std::vector<std::string>{"S1", "S2"});
    }
    SUBCASE("with synthesis on, a pending offspring joins unscored") {
        EvolveOptions with_synth = opts;
        with_synth.synthesize_offspring = true;
        auto outcome =
            evolve_algorithms(pop, report_with(5.0, 6.0, 9.0), backend, lib, Rng(1), with_synth, 4);
        REQUIRE(outcome.offspring.has_value());
        CHECK(outcome.offspring->id == "S4");
        REQUIRE(outcome.population.specs.size() == 3);
        CHECK_FALSE(outcome.population.specs.back().score.has_value());
        CHECK(outcome.population.specs.back().birth == 4);
    }
}

TEST_CASE("failed candidates are dropped by truncation order") {
    const PromptLibrary& lib = prompts();
    ScriptedBackend backend;
    AlgorithmPopulation pop;
    pop.specs.push_back(scored(Domain::Tsp, 0, "S1", 1, 0.0));
    pop.specs.push_back(scored(Domain::Tsp, 1, "S2", 2, 0.0));

    RolloutReport report;
    report.t_probe = 5;
    report.m = 1;
    CandidateResult ok;
    ok.spec_id = "S1";
    ok.score = 3.0;
    ok.final_gaps = {3.0};
    CandidateResult failed;
    failed.spec_id = "S2";
    failed.failed = true;
    failed.failure = "interpreter budget exceeded";
    report.candidates = {ok, failed};

    EvolveOptions opts;
    opts.m_alg = 2;
    opts.synthesize_offspring = false;
    auto outcome = evolve_algorithms(pop, report, backend, lib, Rng(2), opts, 3);
    REQUIRE(outcome.population.specs.size() == 2);
    CHECK(outcome.population.specs[0].spec.id == "S1");
    CHECK(outcome.population.specs[1].failed);
    CHECK(outcome.population.best_scored()->spec.id == "S1");
}

TEST_CASE("scripted meta-evolution never worsens the best probe score") {
    static const ProblemInstance inst = oracles::two_by_two();
    const PromptLibrary& lib = prompts();

    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        ScriptedBackend backend;
        Population pop = init_population(inst, 8, Rng(seed));
        AlgorithmPopulation algpop = seed_population(Domain::Jssp, 3);
        int ordinal = 4;
        const Rng root(seed + 7000);

        EvolveOptions opts;
        opts.m_alg = 3;

        double last_best = std::numeric_limits<double>::infinity();
        for (int step = 1; step <= 30; ++step) {
            std::vector<OperatorSpec> cands;
            for (const auto& s : algpop.specs) cands.push_back(s.spec);
            const Rng step_base = root.child(static_cast<std::uint64_t>(step));
            RolloutReport report = probe(pop, cands, 6, 2, step_base.child(0));
            auto outcome =
                evolve_algorithms(algpop, report, backend, lib, step_base.child(1), opts, ordinal);
            algpop = std::move(outcome.population);
            if (outcome.offspring) ++ordinal;

            const ScoredSpec* best = algpop.best_scored();
            REQUIRE(best != nullptr);
            CHECK(*best->score <= last_best + 1e-12);
            last_best = std::min(last_best, *best->score);

            auto [next, window] = run_horizon(pop, best->spec, 1, step_base.child(2));
            pop = std::move(next);
        }
    }
}

TEST_CASE("prompt templates load and match their shipped checksums") {
    const PromptLibrary& lib = prompts();
    std::ifstream sums(std::string(DYACE_SOURCE_DIR) + "/assets/prompts.sum");
    REQUIRE(sums.good());
    std::string hex, name;
    int checked = 0;
    while (sums >> hex >> name) {
        const std::string stem = name.substr(0, name.find(".txt"));
        const std::uint64_t expected = std::stoull(hex, nullptr, 16);
        CHECK_MESSAGE(PromptLibrary::checksum(lib.raw(stem)) == expected, "drift in " << name);
        ++checked;
    }
    CHECK(checked == 7);
}

TEST_CASE("prompt placeholder substitution") {
    const std::string rendered =
        prompts().render("diagnosis_mutate", {{"problem_type", "Traveling Salesman Problem"},
                                              {"parent_algorithm", "ALGO"},
                                              {"parent_feature", "FEATS"}});
    CHECK(rendered.find("Traveling Salesman Problem") != std::string::npos);
    CHECK(rendered.find("ALGO") != std::string::npos);
    CHECK(rendered.find("FEATS") != std::string::npos);
    CHECK(rendered.find("{parent_algorithm}") == std::string::npos);
    CHECK_THROWS_AS(prompts().render("no_such_template", {}), PromptError);
}

TEST_CASE("http backend speaks the chat-completions wire format") {
    httplib::Server server;
    std::string seen_body;
    server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
        seen_body = req.body;
        const json reply = {
            {"choices", {{{"message", {{"content", "<analysis>ok</analysis>"}}}}}}};
        res.set_content(reply.dump(), "application/json");
    });
    const int port = server.bind_to_any_port("127.0.0.1");
    REQUIRE(port > 0);
    std::thread server_thread([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    HttpBackendConfig config;
    config.base_url = "http://127.0.0.1:" + std::to_string(port);
    config.model = "test-model";
    auto backend = make_http_backend(config);
    CallContext ctx;
    BackendReply reply = backend->complete({"hello world", 0.7, 64}, ctx);

    CHECK(reply.ok);
    CHECK(reply.text == "<analysis>ok</analysis>");
    const json body = json::parse(seen_body);
    CHECK(body["model"] == "test-model");
    CHECK(body["messages"][0]["content"] == "hello world");
    CHECK(body["temperature"] == 0.7);

    // Unknown path surfaces as a transport-level error, not a crash.
    HttpBackendConfig bad = config;
    bad.path = "/nope";
    auto bad_backend = make_http_backend(bad);
    BackendReply bad_reply = bad_backend->complete({"x", 0.7, 64}, ctx);
    CHECK_FALSE(bad_reply.ok);
    CHECK_FALSE(bad_reply.error.empty());

    server.stop();
    server_thread.join();
}
