#pragma once

#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "dyace/problem.hpp"

namespace dyace {

/// Node kinds of the operator graph. Leaves are search primitives; sequence,
/// choice and gate combine them.
enum class NodeKind { Selection, Crossover, Mutation, LocalSearch, Sequence, Choice, Gate };

std::string to_string(NodeKind k);

struct GraphNode {
    NodeKind kind = NodeKind::Sequence;
    std::string name; // primitive name; combinators use the kind string
    std::map<std::string, std::string> params; // slot -> parameter key
    std::vector<GraphNode> children;

    bool operator==(const GraphNode&) const = default;

    /// Label used by the tree edit distance: kind plus primitive name,
    /// parameter bindings excluded.
    std::string label() const { return to_string(kind) + ":" + name; }
};

struct Lineage {
    std::vector<std::string> parents;
    std::string mode; // "seed", "combine", "mutate" or "explore"

    bool operator==(const Lineage&) const = default;
};

/// The evolved algorithm triple: description, operator graph and parameters.
struct OperatorSpec {
    std::string id;
    Domain domain = Domain::Jssp;
    std::string description;
    Lineage lineage;
    std::map<std::string, double> params;
    GraphNode graph;

    bool operator==(const OperatorSpec&) const = default;
};

struct ParamDescriptor {
    std::string name;
    bool integer = false;
    double lo = 0.0;
    double hi = 1.0;
    double def = 0.0;
};

struct PrimitiveDescriptor {
    NodeKind kind;
    std::string name;
    std::vector<ParamDescriptor> params;
    std::vector<Domain> domains; // domains the primitive is legal in
    std::string summary;
};

/// Closed primitive set for a domain. Local-search primitives appear only
/// for JSSP.
std::vector<PrimitiveDescriptor> catalog_primitives(Domain domain);

/// nullptr when (kind, name) is not in the catalog.
const PrimitiveDescriptor* find_primitive(NodeKind kind, const std::string& name);

constexpr int kMaxGraphDepth = 8;
constexpr int kMaxGraphNodes = 64;

struct ValidationResult {
    std::optional<OperatorSpec> spec;
    std::vector<std::string> errors;

    bool ok() const { return spec.has_value(); }
};

/// Schema- and bounds-check a serialized spec document against a domain.
/// Collects every violation instead of stopping at the first. Values within
/// 5% of a parameter bound (relative to the bound range) are clamped;
/// anything further out is rejected as out of bounds. Probabilistic-choice
/// branch weights are normalized to sum 1.
ValidationResult validate_spec(const nlohmann::json& document, Domain domain);

/// Same, from raw text; JSON syntax errors land in the error list.
ValidationResult validate_spec_text(const std::string& text, Domain domain);

nlohmann::json serialize_spec(const OperatorSpec& spec);
nlohmann::json serialize_graph(const GraphNode& node);

/// Minimum number of node insertions, deletions and relabels (unit cost)
/// turning ordered tree `a` into `b`. Labels are (kind, primitive name).
int tree_edit_distance(const GraphNode& a, const GraphNode& b);

/// Shipped default algorithms, cycled by index. Variant 0 for JSSP is
/// tournament selection + order crossover + swap mutation + swap-neighborhood
/// local search; TSP/CVRP variants drop the local-search stage.
OperatorSpec seed_spec(Domain domain, int variant);

/// Total node count of a graph.
int graph_size(const GraphNode& node);

/// Plain-text grammar and catalog reference inserted into coding prompts.
std::string dsl_grammar_reference(Domain domain);

} // namespace dyace
