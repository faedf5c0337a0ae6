#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <set>

#include "dyace/dsl.hpp"
#include "dyace/engine.hpp"
#include "dyace/interpreter.hpp"
#include "oracles.hpp"

using namespace dyace;
using nlohmann::json;

namespace {

json doc_with_graph(json graph, json params) {
    return json{{"version", 1},
                {"description", "test"},
                {"parameters", std::move(params)},
                {"graph", std::move(graph)}};
}

json leaf(const char* kind, const char* name, json params = json::object()) {
    json j{{"kind", kind}, {"name", name}};
    if (!params.empty()) j["params"] = params;
    return j;
}

json pipeline(std::vector<json> children) {
    return json{{"kind", "sequence"}, {"children", std::move(children)}};
}

bool has_error(const ValidationResult& r, const std::string& needle) {
    return std::any_of(r.errors.begin(), r.errors.end(), [&](const std::string& e) {
        return e.find(needle) != std::string::npos;
    });
}

} // namespace

TEST_CASE("catalog is domain-gated") {
    auto has_kind = [](Domain d, NodeKind k) {
        for (const auto& p : catalog_primitives(d))
            if (p.kind == k) return true;
        return false;
    };
    CHECK(has_kind(Domain::Jssp, NodeKind::LocalSearch));
    CHECK_FALSE(has_kind(Domain::Tsp, NodeKind::LocalSearch));
    CHECK_FALSE(has_kind(Domain::Cvrp, NodeKind::LocalSearch));

    bool gate_found = false;
    for (const auto& p : catalog_primitives(Domain::Tsp)) {
        if (p.kind != NodeKind::Gate) continue;
        gate_found = true;
        REQUIRE(p.params.size() == 1);
        CHECK(p.params[0].def == 0.0917);
        CHECK(p.params[0].lo == 0.0);
        CHECK(p.params[0].hi == 1.0);
    }
    CHECK(gate_found);

    bool ppx_in_tsp = false;
    for (const auto& p : catalog_primitives(Domain::Tsp))
        if (p.name == "uniform_precedence") ppx_in_tsp = true;
    CHECK_FALSE(ppx_in_tsp);
}

TEST_CASE("the published schema document stays in sync with the node kinds") {
    std::ifstream in(std::string(DYACE_SOURCE_DIR) + "/assets/operator_spec.schema.json");
    REQUIRE(in.good());
    const json schema = json::parse(in);
    std::set<std::string> schema_kinds;
    for (const auto& k : schema["definitions"]["node"]["properties"]["kind"]["enum"])
        schema_kinds.insert(k.get<std::string>());
    for (NodeKind k : {NodeKind::Selection, NodeKind::Crossover, NodeKind::Mutation,
                       NodeKind::LocalSearch, NodeKind::Sequence, NodeKind::Choice,
                       NodeKind::Gate})
        CHECK(schema_kinds.count(to_string(k)) == 1);
    CHECK(schema_kinds.size() == 7);
    CHECK(schema["properties"]["version"]["const"] == 1);
}

TEST_CASE("seed specs self-validate and round-trip through serialization") {
    for (Domain d : {Domain::Jssp, Domain::Tsp, Domain::Cvrp}) {
        for (int v = 0; v < 5; ++v) {
            OperatorSpec seed = seed_spec(d, v);
            seed.id = "S" + std::to_string(v + 1);
            ValidationResult r = validate_spec(serialize_spec(seed), d);
            REQUIRE_MESSAGE(r.ok(), "seed " << v << " domain " << to_string(d));
            CHECK(*r.spec == seed);
        }
    }
}

TEST_CASE("validation reports a missing parameter by name") {
    auto doc = doc_with_graph(
        pipeline({leaf("selection", "tournament", {{"size", "ts"}}),
                  leaf("crossover", "order", {{"rate", "px"}})}),
        {{"ts", 3}});
    auto r = validate_spec(doc, Domain::Tsp);
    CHECK_FALSE(r.ok());
    CHECK(has_error(r, "missing parameter px"));
}

TEST_CASE("local search under tsp is a domain-schema violation") {
    auto doc = doc_with_graph(
        pipeline({leaf("selection", "tournament", {{"size", "ts"}}),
                  leaf("local_search", "swap_hill_climb",
                       {{"iters", "it"}, {"tabu_tenure", "tt"}})}),
        {{"ts", 3}, {"it", 20}, {"tt", 0}});
    CHECK(validate_spec(doc, Domain::Jssp).ok());
    auto r = validate_spec(doc, Domain::Tsp);
    CHECK_FALSE(r.ok());
    CHECK(has_error(r, "domain-schema violation"));
}

TEST_CASE("validation collects every violation, not just the first") {
    auto doc = doc_with_graph(
        pipeline({leaf("selection", "nosuchthing", {{"size", "ts"}}),
                  leaf("crossover", "order", {{"rate", "px"}}),
                  leaf("mutation", "swap", {{"rate", "pm"}})}),
        {{"ts", 3}, {"pm", 1.7}});
    auto r = validate_spec(doc, Domain::Tsp);
    CHECK_FALSE(r.ok());
    CHECK(has_error(r, "unknown primitive name 'nosuchthing'"));
    CHECK(has_error(r, "missing parameter px"));
    CHECK(has_error(r, "out of bounds"));
    CHECK(r.errors.size() >= 3);
}

TEST_CASE("bounds: clamp within five percent of the range, reject beyond") {
    auto make = [&](double rate) {
        return doc_with_graph(pipeline({leaf("selection", "tournament", {{"size", "ts"}}),
                                        leaf("mutation", "swap", {{"rate", "pm"}})}),
                              {{"ts", 3}, {"pm", rate}});
    };
    auto clamped = validate_spec(make(1.03), Domain::Tsp);
    REQUIRE(clamped.ok());
    CHECK(clamped.spec->params.at("pm") == 1.0);

    auto low = validate_spec(make(-0.04), Domain::Tsp);
    REQUIRE(low.ok());
    CHECK(low.spec->params.at("pm") == 0.0);

    auto rejected = validate_spec(make(1.7), Domain::Tsp);
    CHECK_FALSE(rejected.ok());
    CHECK(has_error(rejected, "out of bounds"));
}

TEST_CASE("integer parameters are rounded at validation") {
    auto doc = doc_with_graph(pipeline({leaf("selection", "tournament", {{"size", "ts"}})}),
                              {{"ts", 3.4}});
    auto r = validate_spec(doc, Domain::Tsp);
    REQUIRE(r.ok());
    CHECK(r.spec->params.at("ts") == 3.0);
}

TEST_CASE("exactly one selection node is required") {
    auto none = doc_with_graph(pipeline({leaf("mutation", "swap", {{"rate", "pm"}})}),
                               {{"pm", 0.2}});
    CHECK(has_error(validate_spec(none, Domain::Tsp), "exactly one selection node"));

    auto two = doc_with_graph(pipeline({leaf("selection", "tournament", {{"size", "a"}}),
                                        leaf("selection", "rank", {{"pressure", "b"}})}),
                              {{"a", 3}, {"b", 1.5}});
    CHECK(has_error(validate_spec(two, Domain::Tsp), "exactly one selection node"));
}

TEST_CASE("depth and node-count caps") {
    json deep = leaf("selection", "tournament", {{"size", "ts"}});
    for (int i = 0; i < 9; ++i) deep = json{{"kind", "sequence"}, {"children", {deep}}};
    CHECK(has_error(validate_spec(doc_with_graph(deep, {{"ts", 3}}), Domain::Tsp),
                    "depth exceeds"));

    std::vector<json> many = {leaf("selection", "tournament", {{"size", "ts"}})};
    for (int i = 0; i < 64; ++i) many.push_back(leaf("mutation", "swap", {{"rate", "pm"}}));
    CHECK(has_error(
        validate_spec(doc_with_graph(pipeline(many), {{"ts", 3}, {"pm", 0.1}}), Domain::Tsp),
        "node count"));
}

TEST_CASE("choice weights are normalized at validation") {
    auto doc = doc_with_graph(
        pipeline({leaf("selection", "tournament", {{"size", "ts"}}),
                  json{{"kind", "choice"},
                       {"params", {{"w0", "wa"}, {"w1", "wb"}}},
                       {"children",
                        {leaf("mutation", "swap", {{"rate", "pm"}}),
                         leaf("mutation", "inversion", {{"rate", "pm"}})}}}}),
        {{"ts", 3}, {"pm", 0.2}, {"wa", 2.0}, {"wb", 6.0}});
    auto r = validate_spec(doc, Domain::Tsp);
    REQUIRE(r.ok());
    CHECK(r.spec->params.at("wa") == doctest::Approx(0.25));
    CHECK(r.spec->params.at("wb") == doctest::Approx(0.75));

    auto zero = doc;
    zero["parameters"]["wa"] = 0.0;
    zero["parameters"]["wb"] = 0.0;
    CHECK(has_error(validate_spec(zero, Domain::Tsp), "positive sum"));
}

TEST_CASE("version and malformed-document errors") {
    CHECK(has_error(validate_spec_text("{not json", Domain::Tsp), "not well-formed JSON"));
    auto doc = doc_with_graph(pipeline({leaf("selection", "tournament", {{"size", "ts"}})}),
                              {{"ts", 3}});
    doc["version"] = 9;
    CHECK(has_error(validate_spec(doc, Domain::Tsp), "unsupported spec version"));
    doc["version"] = 1;
    doc["domain"] = "jssp";
    CHECK(has_error(validate_spec(doc, Domain::Tsp), "does not match"));
}

// ---------------------------------------------------------------------------
// tree edit distance
// ---------------------------------------------------------------------------

TEST_CASE("tree edit distance basics") {
    GraphNode swap_node;
    swap_node.kind = NodeKind::Mutation;
    swap_node.name = "swap";
    GraphNode inversion = swap_node;
    inversion.name = "inversion";

    CHECK(tree_edit_distance(swap_node, swap_node) == 0);
    CHECK(tree_edit_distance(swap_node, inversion) == 1);

    const OperatorSpec a = seed_spec(Domain::Tsp, 0);
    OperatorSpec b = a;
    b.graph.children.push_back(swap_node); // one insertion
    CHECK(tree_edit_distance(a.graph, b.graph) == 1);
    CHECK(tree_edit_distance(a.graph, a.graph) == 0);
}

TEST_CASE("tree edit distance equals the brute-force mapping minimum") {
    Rng rng(2024);
    for (int rep = 0; rep < 100; ++rep) {
        const int na = 1 + static_cast<int>(rng.next_below(5));
        const int nb = 1 + static_cast<int>(rng.next_below(5));
        Rng ra = rng.child(static_cast<std::uint64_t>(rep) * 2);
        Rng rb = rng.child(static_cast<std::uint64_t>(rep) * 2 + 1);
        const GraphNode a = oracles::random_tree(na, ra);
        const GraphNode b = oracles::random_tree(nb, rb);
        CHECK(tree_edit_distance(a, b) == oracles::brute_force_ted(a, b));
    }
}

TEST_CASE("tree edit distance satisfies the metric axioms") {
    Rng rng(77);
    for (int rep = 0; rep < 60; ++rep) {
        Rng ra = rng.child(static_cast<std::uint64_t>(rep) * 3);
        Rng rb = rng.child(static_cast<std::uint64_t>(rep) * 3 + 1);
        Rng rc = rng.child(static_cast<std::uint64_t>(rep) * 3 + 2);
        const GraphNode a = oracles::random_tree(1 + static_cast<int>(ra.next_below(5)), ra);
        const GraphNode b = oracles::random_tree(1 + static_cast<int>(rb.next_below(5)), rb);
        const GraphNode c = oracles::random_tree(1 + static_cast<int>(rc.next_below(5)), rc);
        const int ab = tree_edit_distance(a, b);
        const int ba = tree_edit_distance(b, a);
        const int bc = tree_edit_distance(b, c);
        const int ac = tree_edit_distance(a, c);
        CHECK(tree_edit_distance(a, a) == 0);
        CHECK(ab == ba);
        CHECK(ac <= ab + bc);
        if (a == b) CHECK(ab == 0);
    }
}

// ---------------------------------------------------------------------------
// interpreter
// ---------------------------------------------------------------------------

namespace {

Population make_population(const ProblemInstance& inst, int n, std::uint64_t seed) {
    return init_population(inst, n, Rng(seed));
}

OperatorSpec noop_spec(Domain d) {
    json doc = doc_with_graph(
        pipeline({leaf("selection", "tournament", {{"size", "ts"}}),
                  leaf("crossover", "order", {{"rate", "pc"}}),
                  leaf("mutation", "swap", {{"rate", "pm"}})}),
        {{"ts", 2}, {"pc", 0.0}, {"pm", 0.0}});
    auto r = validate_spec(doc, d);
    REQUIRE(r.ok());
    r.spec->id = "noop";
    return *r.spec;
}

} // namespace

TEST_CASE("no-op operator reproduces its selected parents exactly") {
    static const ProblemInstance inst = oracles::random_tsp(8, 9, 40.0);
    Population pop = make_population(inst, 12, 5);
    const OperatorSpec spec = noop_spec(Domain::Tsp);

    OffspringSet off = apply_operator(spec, pop, Rng(77));
    REQUIRE(off.solutions.size() == pop.size());
    for (std::size_t i = 0; i < off.solutions.size(); ++i) {
        REQUIRE_FALSE(off.parents[i].empty());
        CHECK(off.solutions[i].perm == pop.members[off.parents[i].front()].sol.perm);
    }
}

TEST_CASE("seed jssp operator never beats the exhaustive optimum") {
    static const ProblemInstance inst = oracles::two_by_two();
    const auto sequences = oracles::all_sequences(std::get<JsspInstance>(inst));
    Population pop;
    pop.instance = &inst;
    for (const auto& seq : sequences) {
        Individual ind;
        ind.sol = {Domain::Jssp, seq, std::nullopt};
        ind.cost = evaluate(inst, ind.sol);
        pop.members.push_back(ind);
    }
    pop.best_ever = pop.best_member();

    OperatorSpec spec = seed_spec(Domain::Jssp, 0);
    spec.id = "seed";
    OffspringSet off = apply_operator(spec, pop, Rng(123));
    for (const auto& s : off.solutions) {
        const double cost = s.cached_cost ? *s.cached_cost : evaluate(inst, s);
        CHECK(cost >= oracles::jssp_optimum(std::get<JsspInstance>(inst)));
    }
}

TEST_CASE("degenerate choice weights never execute the dead branch") {
    json doc = doc_with_graph(
        pipeline({leaf("selection", "tournament", {{"size", "ts"}}),
                  json{{"kind", "choice"},
                       {"params", {{"w0", "wa"}, {"w1", "wb"}}},
                       {"children",
                        {leaf("mutation", "swap", {{"rate", "zero"}}),
                         leaf("mutation", "inversion", {{"rate", "one"}})}}}}),
        {{"ts", 2}, {"zero", 0.0}, {"one", 1.0}, {"wa", 1.0}, {"wb", 0.0}});
    auto r = validate_spec(doc, Domain::Tsp);
    REQUIRE(r.ok());

    static const ProblemInstance inst = oracles::random_tsp(10, 2, 50.0);
    Population pop = make_population(inst, 100, 3);
    // 100 applications x 100 offspring = 10,000 draws through the choice node.
    for (std::uint64_t rep = 0; rep < 100; ++rep) {
        OffspringSet off = apply_operator(*r.spec, pop, Rng(rep));
        for (std::size_t i = 0; i < off.solutions.size(); ++i)
            CHECK(off.solutions[i].perm == pop.members[off.parents[i].front()].sol.perm);
    }
}

TEST_CASE("gate routes on population diversity against the threshold") {
    auto gated = [&](double threshold) {
        json doc = doc_with_graph(
            pipeline({leaf("selection", "tournament", {{"size", "ts"}}),
                      json{{"kind", "gate"},
                           {"params", {{"threshold", "thr"}}},
                           {"children",
                            {leaf("mutation", "swap", {{"rate", "zero"}}),
                             leaf("mutation", "inversion", {{"rate", "one"}})}}}}),
            {{"ts", 2}, {"zero", 0.0}, {"one", 1.0}, {"thr", threshold}});
        auto r = validate_spec(doc, Domain::Tsp);
        REQUIRE(r.ok());
        return *r.spec;
    };

    static const ProblemInstance inst = oracles::random_tsp(10, 8, 50.0);
    Population pop = make_population(inst, 10, 4);

    // threshold 1.0: diversity < 1 so the identity branch runs.
    OffspringSet calm = apply_operator(gated(1.0), pop, Rng(5));
    for (std::size_t i = 0; i < calm.solutions.size(); ++i)
        CHECK(calm.solutions[i].perm == pop.members[calm.parents[i].front()].sol.perm);

    // threshold 0.0: diversity >= 0 so the always-invert branch runs.
    OffspringSet stirred = apply_operator(gated(0.0), pop, Rng(5));
    int changed = 0;
    for (std::size_t i = 0; i < stirred.solutions.size(); ++i)
        changed += stirred.solutions[i].perm != pop.members[stirred.parents[i].front()].sol.perm;
    CHECK(changed > 0);
}

TEST_CASE("interpreter is deterministic and multiset-safe for every seed spec") {
    static const ProblemInstance jssp = oracles::random_jssp(3, 3, 77);
    static const ProblemInstance tsp = oracles::random_tsp(9, 78, 60.0);
    for (const auto* inst : {&jssp, &tsp}) {
        Population pop = make_population(*inst, 10, 6);
        for (int v = 0; v < 5; ++v) {
            OperatorSpec spec = seed_spec(domain_of(*inst), v);
            spec.id = "s";
            OffspringSet a = apply_operator(spec, pop, Rng(900 + v));
            OffspringSet b = apply_operator(spec, pop, Rng(900 + v));
            REQUIRE(a.solutions.size() == b.solutions.size());
            for (std::size_t i = 0; i < a.solutions.size(); ++i) {
                CHECK(a.solutions[i].perm == b.solutions[i].perm);
                CHECK(encoding_valid(*inst, a.solutions[i]));
            }
        }
    }
}

TEST_CASE("pathological graphs trip the interpreter budget") {
    OperatorSpec spec = seed_spec(Domain::Jssp, 0);
    spec.id = "hungry";
    static const ProblemInstance inst = oracles::random_jssp(2, 2, 3);
    Population pop = make_population(inst, 4, 2);
    CHECK_THROWS_AS(apply_operator(spec, pop, Rng(1), 10), InterpreterError);
}

TEST_CASE("uniform precedence crossover preserves the operation multiset") {
    static const ProblemInstance inst = oracles::random_jssp(3, 3, 15);
    json doc = doc_with_graph(
        pipeline({leaf("selection", "tournament", {{"size", "ts"}}),
                  leaf("crossover", "uniform_precedence", {{"rate", "pc"}})}),
        {{"ts", 2}, {"pc", 1.0}});
    auto r = validate_spec(doc, Domain::Jssp);
    REQUIRE(r.ok());
    Population pop = make_population(inst, 8, 61);
    OffspringSet off = apply_operator(*r.spec, pop, Rng(62));
    for (const auto& s : off.solutions) CHECK(encoding_valid(inst, s));
}
