#include "dyace/dsl.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <sstream>

namespace dyace {

using nlohmann::json;

namespace {

const std::vector<Domain> kAllDomains = {Domain::Jssp, Domain::Tsp, Domain::Cvrp};
const std::vector<Domain> kJsspOnly = {Domain::Jssp};

const std::vector<PrimitiveDescriptor>& full_catalog() {
    static const std::vector<PrimitiveDescriptor> catalog = {
        {NodeKind::Selection, "tournament",
         {{"size", true, 2, 16, 3}},
         kAllDomains, "pick the best of `size` uniformly drawn members"},
        {NodeKind::Selection, "rank",
         {{"pressure", false, 1.0, 2.0, 1.7}},
         kAllDomains, "linear ranking; expected copies of the best = pressure"},
        {NodeKind::Selection, "diversity_fitness_dual",
         {{"diversity_fraction", false, 0.1, 1.0, 0.5}},
         kAllDomains, "keep the most diverse fraction, then rank-select by fitness"},

        {NodeKind::Crossover, "order",
         {{"rate", false, 0.0, 1.0, 0.9}},
         kAllDomains, "copy a segment from parent 1, fill cyclically in parent-2 order"},
        {NodeKind::Crossover, "one_point",
         {{"rate", false, 0.0, 1.0, 0.9}},
         kAllDomains, "prefix from parent 1, remainder in parent-2 order"},
        {NodeKind::Crossover, "two_point",
         {{"rate", false, 0.0, 1.0, 0.9}},
         kAllDomains, "inner segment from parent 1, outside filled in parent-2 order"},
        {NodeKind::Crossover, "uniform_precedence",
         {{"rate", false, 0.0, 1.0, 0.9}},
         kJsspOnly, "per position, take the next unused operation of a random parent"},

        {NodeKind::Mutation, "swap",
         {{"rate", false, 0.0, 1.0, 0.2}},
         kAllDomains, "exchange two random positions"},
        {NodeKind::Mutation, "multi_swap",
         {{"rate", false, 0.0, 1.0, 0.2}, {"count", true, 2, 8, 3}},
         kAllDomains, "apply `count` independent position swaps"},
        {NodeKind::Mutation, "inversion",
         {{"rate", false, 0.0, 1.0, 0.2}},
         kAllDomains, "reverse a random segment"},
        {NodeKind::Mutation, "insertion",
         {{"rate", false, 0.0, 1.0, 0.2}},
         kAllDomains, "remove one element and reinsert it elsewhere"},

        {NodeKind::LocalSearch, "swap_hill_climb",
         {{"iters", true, 1, 200, 50}, {"tabu_tenure", true, 0, 50, 0}},
         kJsspOnly, "first-improvement swap neighborhood walk with optional tabu list"},

        {NodeKind::Sequence, "sequence", {}, kAllDomains, "apply children in order"},
        {NodeKind::Choice, "choice", {}, kAllDomains,
         "pick one child per invocation by branch weights w0..wk"},
        {NodeKind::Gate, "gate",
         {{"threshold", false, 0.0, 1.0, 0.0917}},
         kAllDomains,
         "run child 0 while population diversity < threshold, child 1 otherwise"},
    };
    return catalog;
}

bool domain_allows(const PrimitiveDescriptor& p, Domain d) {
    return std::find(p.domains.begin(), p.domains.end(), d) != p.domains.end();
}

bool is_leaf_kind(NodeKind k) {
    return k == NodeKind::Selection || k == NodeKind::Crossover || k == NodeKind::Mutation ||
           k == NodeKind::LocalSearch;
}

std::optional<NodeKind> kind_from_string(const std::string& s) {
    if (s == "selection") return NodeKind::Selection;
    if (s == "crossover") return NodeKind::Crossover;
    if (s == "mutation") return NodeKind::Mutation;
    if (s == "local_search") return NodeKind::LocalSearch;
    if (s == "sequence") return NodeKind::Sequence;
    if (s == "choice") return NodeKind::Choice;
    if (s == "gate") return NodeKind::Gate;
    return std::nullopt;
}

struct Validator {
    Domain domain;
    const json& params_doc;
    std::vector<std::string> errors;
    std::map<std::string, double> params;
    std::map<std::string, int> param_uses; // how many graph slots reference each key
    int node_count = 0;
    int selection_count = 0;
    std::vector<std::string> weight_groups_pending; // choice weight keys, normalized at the end

    void error(const std::string& msg) { errors.push_back(msg); }

    // Checks one slot binding and clamps/rejects the bound value.
    void check_param(const GraphNode& node, const ParamDescriptor& d) {
        auto slot = node.params.find(d.name);
        if (slot == node.params.end()) {
            error("node '" + node.label() + "': missing parameter " + d.name);
            return;
        }
        const std::string& key = slot->second;
        ++param_uses[key];
        auto it = params.find(key);
        if (it == params.end()) {
            error("missing parameter " + key);
            return;
        }
        const double tol = 0.05 * (d.hi - d.lo);
        double v = it->second;
        if (v < d.lo - tol || v > d.hi + tol) {
            error(fmt::format("parameter '{}' value {} out of bounds [{:g}, {:g}]", key, v, d.lo,
                              d.hi));
            return;
        }
        v = std::clamp(v, d.lo, d.hi);
        if (d.integer) v = static_cast<double>(std::llround(v));
        it->second = v;
    }

    GraphNode parse_node(const json& j, int depth) {
        GraphNode node;
        ++node_count;
        if (depth > kMaxGraphDepth) {
            error(fmt::format("graph depth exceeds cap of {}", kMaxGraphDepth));
            return node;
        }
        if (!j.is_object()) {
            error("graph node must be a JSON object");
            return node;
        }
        if (!j.contains("kind") || !j["kind"].is_string()) {
            error("graph node is missing a string 'kind'");
            return node;
        }
        auto kind = kind_from_string(j["kind"].get<std::string>());
        if (!kind) {
            error("unknown node kind '" + j["kind"].get<std::string>() + "'");
            return node;
        }
        node.kind = *kind;
        node.name = j.value("name", to_string(node.kind));
        if (node.kind == NodeKind::Selection) ++selection_count;

        if (j.contains("params")) {
            if (!j["params"].is_object()) {
                error("node '" + node.name + "': 'params' must be an object of slot -> key");
            } else {
                for (auto& [slot, key] : j["params"].items()) {
                    if (!key.is_string()) {
                        error("node '" + node.name + "': slot '" + slot + "' must name a parameter");
                        continue;
                    }
                    node.params[slot] = key.get<std::string>();
                }
            }
        }
        if (j.contains("children")) {
            if (!j["children"].is_array()) {
                error("node '" + node.name + "': 'children' must be an array");
            } else {
                for (const auto& c : j["children"]) node.children.push_back(parse_node(c, depth + 1));
            }
        }

        check_node(node);
        return node;
    }

    void check_node(GraphNode& node) {
        if (is_leaf_kind(node.kind)) {
            const PrimitiveDescriptor* prim = find_primitive(node.kind, node.name);
            if (prim == nullptr) {
                error("unknown primitive name '" + node.name + "' for kind " +
                      to_string(node.kind));
                return;
            }
            if (!domain_allows(*prim, domain)) {
                error("domain-schema violation: " + node.label() + " is not allowed for domain " +
                      to_string(domain));
                return;
            }
            if (!node.children.empty())
                error("primitive node '" + node.name + "' cannot have children");
            for (const auto& d : prim->params) check_param(node, d);
            for (const auto& [slot, key] : node.params) {
                bool known = std::any_of(prim->params.begin(), prim->params.end(),
                                         [&](const ParamDescriptor& d) { return d.name == slot; });
                if (!known) error("node '" + node.name + "': unknown parameter slot '" + slot + "'");
            }
            return;
        }

        switch (node.kind) {
        case NodeKind::Sequence:
            if (node.children.empty()) error("sequence node needs at least one child");
            if (!node.params.empty()) error("sequence node takes no parameters");
            break;
        case NodeKind::Choice: {
            if (node.children.size() < 2 || node.children.size() > 4) {
                error("choice node needs 2..4 children");
                break;
            }
            double sum = 0.0;
            bool complete = true;
            std::vector<std::string> keys;
            for (std::size_t b = 0; b < node.children.size(); ++b) {
                const std::string slot = "w" + std::to_string(b);
                auto it = node.params.find(slot);
                if (it == node.params.end()) {
                    error("choice node: missing parameter " + slot);
                    complete = false;
                    continue;
                }
                ++param_uses[it->second];
                auto p = params.find(it->second);
                if (p == params.end()) {
                    error("missing parameter " + it->second);
                    complete = false;
                    continue;
                }
                if (p->second < 0.0) {
                    error(fmt::format("parameter '{}' value {} out of bounds [0, 1]", it->second,
                                      p->second));
                    complete = false;
                    continue;
                }
                sum += p->second;
                keys.push_back(it->second);
            }
            if (node.params.size() > node.children.size())
                error("choice node: more weights than children");
            if (complete) {
                if (sum <= 0.0) {
                    error("choice node: branch weights must have a positive sum");
                } else {
                    for (const auto& k : keys) params[k] /= sum;
                    weight_groups_pending.insert(weight_groups_pending.end(), keys.begin(),
                                                 keys.end());
                }
            }
            break;
        }
        case NodeKind::Gate: {
            if (node.children.size() != 2) error("gate node needs exactly 2 children");
            static const ParamDescriptor thr{"threshold", false, 0.0, 1.0, 0.0917};
            check_param(node, thr);
            for (const auto& [slot, key] : node.params)
                if (slot != "threshold")
                    error("gate node: unknown parameter slot '" + slot + "'");
            break;
        }
        default:
            break;
        }
    }
};

void render_primitive_lines(std::ostringstream& out, Domain domain, NodeKind kind) {
    for (const auto& p : catalog_primitives(domain)) {
        if (p.kind != kind) continue;
        out << "  - " << p.name;
        if (!p.params.empty()) {
            out << " (";
            for (std::size_t i = 0; i < p.params.size(); ++i) {
                const auto& d = p.params[i];
                if (i) out << ", ";
                out << d.name << (d.integer ? " int " : " real ") << "[" << d.lo << ".." << d.hi
                    << "] default " << d.def;
            }
            out << ")";
        }
        out << ": " << p.summary << "\n";
    }
}

} // namespace

std::string to_string(NodeKind k) {
    switch (k) {
    case NodeKind::Selection: return "selection";
    case NodeKind::Crossover: return "crossover";
    case NodeKind::Mutation: return "mutation";
    case NodeKind::LocalSearch: return "local_search";
    case NodeKind::Sequence: return "sequence";
    case NodeKind::Choice: return "choice";
    case NodeKind::Gate: return "gate";
    }
    return "?";
}

std::vector<PrimitiveDescriptor> catalog_primitives(Domain domain) {
    std::vector<PrimitiveDescriptor> out;
    for (const auto& p : full_catalog())
        if (domain_allows(p, domain)) out.push_back(p);
    return out;
}

const PrimitiveDescriptor* find_primitive(NodeKind kind, const std::string& name) {
    for (const auto& p : full_catalog())
        if (p.kind == kind && p.name == name) return &p;
    return nullptr;
}

int graph_size(const GraphNode& node) {
    int n = 1;
    for (const auto& c : node.children) n += graph_size(c);
    return n;
}

ValidationResult validate_spec(const json& document, Domain domain) {
    ValidationResult result;
    if (!document.is_object()) {
        result.errors.push_back("spec document must be a JSON object");
        return result;
    }
    if (document.contains("version") &&
        (!document["version"].is_number_integer() || document["version"].get<int>() != 1)) {
        result.errors.push_back("unsupported spec version");
        return result;
    }
    if (document.contains("domain")) {
        try {
            if (domain_from_string(document["domain"].get<std::string>()) != domain) {
                result.errors.push_back("domain-schema violation: document domain '" +
                                        document["domain"].get<std::string>() +
                                        "' does not match expected '" + to_string(domain) + "'");
                return result;
            }
        } catch (const std::exception&) {
            result.errors.push_back("malformed 'domain' field");
            return result;
        }
    }
    if (!document.contains("graph")) {
        result.errors.push_back("spec document is missing 'graph'");
        return result;
    }
    if (!document.contains("parameters") || !document["parameters"].is_object()) {
        result.errors.push_back("spec document is missing a 'parameters' object");
        return result;
    }

    Validator v{domain, document["parameters"], {}, {}, {}, 0, 0, {}};
    for (auto& [key, value] : document["parameters"].items()) {
        if (!value.is_number()) {
            v.error("parameter '" + key + "' must be numeric");
            continue;
        }
        v.params[key] = value.get<double>();
    }

    GraphNode root = v.parse_node(document["graph"], 1);

    if (v.node_count > kMaxGraphNodes)
        v.error(fmt::format("graph node count {} exceeds cap of {}", v.node_count, kMaxGraphNodes));
    if (v.selection_count != 1)
        v.error(fmt::format("graph must contain exactly one selection node, found {}",
                            v.selection_count));
    for (const auto& key : v.weight_groups_pending)
        if (v.param_uses[key] > 1)
            v.error("choice weight parameter '" + key + "' is referenced by more than one slot");

    result.errors = std::move(v.errors);
    if (!result.errors.empty()) return result;

    OperatorSpec spec;
    spec.domain = domain;
    spec.id = document.value("id", "");
    spec.description = document.value("description", "");
    if (document.contains("lineage")) {
        const auto& lin = document["lineage"];
        spec.lineage.mode = lin.value("mode", "");
        if (lin.contains("parents"))
            for (const auto& p : lin["parents"]) spec.lineage.parents.push_back(p.get<std::string>());
    }
    spec.params = std::move(v.params);
    spec.graph = std::move(root);
    result.spec = std::move(spec);
    return result;
}

ValidationResult validate_spec_text(const std::string& text, Domain domain) {
    json doc = json::parse(text, nullptr, false);
    if (doc.is_discarded()) {
        ValidationResult r;
        r.errors.push_back("document is not well-formed JSON");
        return r;
    }
    return validate_spec(doc, domain);
}

json serialize_graph(const GraphNode& node) {
    json j;
    j["kind"] = to_string(node.kind);
    j["name"] = node.name;
    if (!node.params.empty()) j["params"] = node.params;
    if (!node.children.empty()) {
        j["children"] = json::array();
        for (const auto& c : node.children) j["children"].push_back(serialize_graph(c));
    }
    return j;
}

json serialize_spec(const OperatorSpec& spec) {
    json j;
    j["version"] = 1;
    j["id"] = spec.id;
    j["domain"] = to_string(spec.domain);
    j["description"] = spec.description;
    j["lineage"] = {{"mode", spec.lineage.mode}, {"parents", spec.lineage.parents}};
    j["parameters"] = spec.params;
    j["graph"] = serialize_graph(spec.graph);
    return j;
}

// ---------------------------------------------------------------------------
// Tree edit distance (Zhang-Shasha, unit costs)
// ---------------------------------------------------------------------------

namespace {

// Postorder flattening with leftmost-leaf-descendant indices.
struct FlatTree {
    std::vector<std::string> labels; // postorder
    std::vector<int> lld;            // leftmost leaf descendant, postorder index
    std::vector<int> keyroots;
};

int flatten(const GraphNode& node, FlatTree& t) {
    int first_leaf = -1;
    for (const auto& c : node.children) {
        int child_lld = flatten(c, t);
        if (first_leaf < 0) first_leaf = child_lld;
    }
    const int index = static_cast<int>(t.labels.size());
    t.labels.push_back(node.label());
    t.lld.push_back(first_leaf < 0 ? index : first_leaf);
    return t.lld.back();
}

FlatTree flat_tree(const GraphNode& root) {
    FlatTree t;
    flatten(root, t);
    const int n = static_cast<int>(t.labels.size());
    // Keyroots: nodes that are not on the leftmost path from any proper
    // ancestor, i.e. the highest node for each distinct lld value.
    std::map<int, int> highest;
    for (int i = 0; i < n; ++i) highest[t.lld[i]] = i;
    for (auto& [lld, i] : highest) t.keyroots.push_back(i);
    std::sort(t.keyroots.begin(), t.keyroots.end());
    return t;
}

} // namespace

int tree_edit_distance(const GraphNode& a, const GraphNode& b) {
    const FlatTree ta = flat_tree(a);
    const FlatTree tb = flat_tree(b);
    const int n = static_cast<int>(ta.labels.size());
    const int m = static_cast<int>(tb.labels.size());

    std::vector<std::vector<int>> treedist(n, std::vector<int>(m, 0));
    // Forest distance table, indexed 0..n and 0..m (0 = empty forest).
    std::vector<std::vector<int>> fd(n + 1, std::vector<int>(m + 1, 0));

    for (int i : ta.keyroots) {
        for (int j : tb.keyroots) {
            const int li = ta.lld[i];
            const int lj = tb.lld[j];
            fd[li][lj] = 0;
            for (int x = li; x <= i; ++x) fd[x + 1][lj] = fd[x][lj] + 1;
            for (int y = lj; y <= j; ++y) fd[li][y + 1] = fd[li][y] + 1;
            for (int x = li; x <= i; ++x) {
                for (int y = lj; y <= j; ++y) {
                    if (ta.lld[x] == li && tb.lld[y] == lj) {
                        const int relabel = ta.labels[x] == tb.labels[y] ? 0 : 1;
                        fd[x + 1][y + 1] = std::min({fd[x][y + 1] + 1, fd[x + 1][y] + 1,
                                                     fd[x][y] + relabel});
                        treedist[x][y] = fd[x + 1][y + 1];
                    } else {
                        fd[x + 1][y + 1] =
                            std::min({fd[x][y + 1] + 1, fd[x + 1][y] + 1,
                                      fd[ta.lld[x]][tb.lld[y]] + treedist[x][y]});
                    }
                }
            }
        }
    }
    return treedist[n - 1][m - 1];
}

// ---------------------------------------------------------------------------
// Seed algorithms
// ---------------------------------------------------------------------------

namespace {

GraphNode leaf(NodeKind kind, std::string name, std::map<std::string, std::string> params = {}) {
    GraphNode n;
    n.kind = kind;
    n.name = std::move(name);
    n.params = std::move(params);
    return n;
}

GraphNode seq(std::vector<GraphNode> children) {
    GraphNode n;
    n.kind = NodeKind::Sequence;
    n.name = "sequence";
    n.children = std::move(children);
    return n;
}

} // namespace

OperatorSpec seed_spec(Domain domain, int variant) {
    const bool jssp = domain == Domain::Jssp;
    OperatorSpec s;
    s.domain = domain;
    s.lineage.mode = "seed";
    const int v = ((variant % 5) + 5) % 5;
    switch (v) {
    case 0: {
        s.description = "Tournament selection with order crossover, swap mutation" +
                        std::string(jssp ? " and a swap-neighborhood local search." : ".");
        s.params = {{"ts", 3}, {"pc", 0.9}, {"pm", 0.2}};
        std::vector<GraphNode> stages = {
            leaf(NodeKind::Selection, "tournament", {{"size", "ts"}}),
            leaf(NodeKind::Crossover, "order", {{"rate", "pc"}}),
            leaf(NodeKind::Mutation, "swap", {{"rate", "pm"}}),
        };
        if (jssp) {
            s.params["ls_iters"] = 50;
            s.params["tenure"] = 0;
            stages.push_back(leaf(NodeKind::LocalSearch, "swap_hill_climb",
                                  {{"iters", "ls_iters"}, {"tabu_tenure", "tenure"}}));
        }
        s.graph = seq(std::move(stages));
        break;
    }
    case 1: {
        s.description = "Rank selection with two-point crossover and inversion mutation.";
        s.params = {{"press", 1.7}, {"pc", 0.9}, {"pm", 0.25}};
        std::vector<GraphNode> stages = {
            leaf(NodeKind::Selection, "rank", {{"pressure", "press"}}),
            leaf(NodeKind::Crossover, "two_point", {{"rate", "pc"}}),
            leaf(NodeKind::Mutation, "inversion", {{"rate", "pm"}}),
        };
        if (jssp) {
            s.params["ls_iters"] = 30;
            s.params["tenure"] = 7;
            stages.push_back(leaf(NodeKind::LocalSearch, "swap_hill_climb",
                                  {{"iters", "ls_iters"}, {"tabu_tenure", "tenure"}}));
        }
        s.graph = seq(std::move(stages));
        break;
    }
    case 2: {
        s.description = "Large-tournament selection with one-point crossover and insertion "
                        "mutation.";
        s.params = {{"ts", 5}, {"pc", 0.85}, {"pm", 0.2}};
        s.graph = seq({
            leaf(NodeKind::Selection, "tournament", {{"size", "ts"}}),
            leaf(NodeKind::Crossover, "one_point", {{"rate", "pc"}}),
            leaf(NodeKind::Mutation, "insertion", {{"rate", "pm"}}),
        });
        break;
    }
    case 3: {
        s.description = "Rank selection with order crossover and a multi-swap mutation burst.";
        s.params = {{"press", 1.5}, {"pc", 0.95}, {"pm", 0.3}, {"k", 3}};
        s.graph = seq({
            leaf(NodeKind::Selection, "rank", {{"pressure", "press"}}),
            leaf(NodeKind::Crossover, "order", {{"rate", "pc"}}),
            leaf(NodeKind::Mutation, "multi_swap", {{"rate", "pm"}, {"count", "k"}}),
        });
        break;
    }
    default: {
        s.description = "Diversity-fitness dual selection with a stochastic choice between "
                        "order and two-point crossover.";
        s.params = {{"frac", 0.5}, {"pc", 0.9}, {"pm", 0.15}, {"w_ox", 0.5}, {"w_tp", 0.5}};
        GraphNode pick;
        pick.kind = NodeKind::Choice;
        pick.name = "choice";
        pick.params = {{"w0", "w_ox"}, {"w1", "w_tp"}};
        pick.children = {
            leaf(NodeKind::Crossover, "order", {{"rate", "pc"}}),
            leaf(NodeKind::Crossover, "two_point", {{"rate", "pc"}}),
        };
        s.graph = seq({
            leaf(NodeKind::Selection, "diversity_fitness_dual", {{"diversity_fraction", "frac"}}),
            std::move(pick),
            leaf(NodeKind::Mutation, "swap", {{"rate", "pm"}}),
        });
        break;
    }
    }
    return s;
}

std::string dsl_grammar_reference(Domain domain) {
    std::ostringstream out;
    out << "Operator documents are JSON objects with keys \"version\" (1), \"parameters\" "
           "(name -> number) and \"graph\".\n"
        << "Graph nodes: {\"kind\": ..., \"name\": ..., \"params\": {slot: parameter name}, "
           "\"children\": [...]}.\n"
        << "Kinds: selection, crossover, mutation"
        << (domain == Domain::Jssp ? ", local_search" : "") << ", sequence, choice, gate.\n"
        << "Rules: exactly one selection node; depth <= " << kMaxGraphDepth << "; at most "
        << kMaxGraphNodes << " nodes; choice nodes bind weight slots w0..wk; "
        << "gate runs child 0 while population diversity < threshold, child 1 otherwise.\n"
        << "Primitives for " << to_string(domain) << ":\n";
    render_primitive_lines(out, domain, NodeKind::Selection);
    render_primitive_lines(out, domain, NodeKind::Crossover);
    render_primitive_lines(out, domain, NodeKind::Mutation);
    if (domain == Domain::Jssp) render_primitive_lines(out, domain, NodeKind::LocalSearch);
    render_primitive_lines(out, domain, NodeKind::Gate);
    return out.str();
}

} // namespace dyace
