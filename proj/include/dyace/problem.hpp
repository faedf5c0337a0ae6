#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "dyace/rng.hpp"

namespace dyace {

enum class Domain { Jssp, Tsp, Cvrp };

std::string to_string(Domain d);
Domain domain_from_string(const std::string& s);

/// Raised on malformed instance files, registry misses and domain mismatches.
class ProblemError : public std::runtime_error {
public:
    explicit ProblemError(const std::string& what) : std::runtime_error(what) {}
};

/// One operation of a job: the machine it runs on and its processing time.
struct JsspOp {
    int machine;
    int time;
};

struct JsspInstance {
    std::string name;
    int num_jobs = 0;
    int num_machines = 0;
    std::vector<std::vector<JsspOp>> routing; // routing[job] in processing order
    double bks = 0.0;
    std::string bks_metric; // "exact", "rounded" or "bound"
};

struct TspInstance {
    std::string name;
    int num_nodes = 0;
    std::vector<std::array<double, 2>> coords;
    double bks = 0.0;
    std::string bks_metric;
};

struct CvrpInstance {
    std::string name;
    int num_nodes = 0; // depot + customers
    int depot = 0;
    std::vector<std::array<double, 2>> coords;
    std::vector<int> demands; // demands[depot] == 0
    int capacity = 0;
    double bks = 0.0;
    std::string bks_metric;
};

using ProblemInstance = std::variant<JsspInstance, TspInstance, CvrpInstance>;

Domain domain_of(const ProblemInstance& inst);
const std::string& name_of(const ProblemInstance& inst);
double bks_of(const ProblemInstance& inst);

/// Permutation-encoded candidate solution.
///
/// JSSP: job-repetition list of length num_jobs*num_machines, the k-th
/// occurrence of job j is its k-th operation. TSP: node permutation.
/// CVRP: giant tour over customers; routes come from the greedy capacity
/// split in evaluate().
struct Solution {
    Domain domain;
    std::vector<int> perm;
    std::optional<double> cached_cost;
};

/// BKS sidecar registry: one "name cost metric" triple per line, '#' comments.
class BksRegistry {
public:
    static BksRegistry parse(const std::string& text);
    static BksRegistry load(const std::string& path);

    struct Entry {
        double cost;
        std::string metric;
    };

    /// Throws ProblemError when the instance has no entry.
    const Entry& lookup(const std::string& name) const;
    bool contains(const std::string& name) const { return entries_.count(name) > 0; }

private:
    std::map<std::string, Entry> entries_;
};

/// Parse one benchmark file. `fallback_name` keys the BKS lookup for formats
/// without an embedded name (Taillard); TSPLIB/CVRPLIB NAME fields win.
ProblemInstance parse_instance(const std::string& text, const std::string& format,
                               const BksRegistry& registry,
                               const std::string& fallback_name = "");

/// Cost of a solution: JSSP semi-active makespan, TSP closed-tour length,
/// CVRP total route length after greedy capacity split. Pure and
/// deterministic in (instance, encoding).
double evaluate(const ProblemInstance& inst, const Solution& s);

/// Routes recovered from a CVRP giant tour by the greedy left-to-right split.
std::vector<std::vector<int>> split_routes(const CvrpInstance& inst,
                                           const std::vector<int>& giant_tour);

struct FeasibilityReport {
    bool feasible = true;
    struct Violation {
        int route_index;
        int load;
        int capacity;
    };
    std::vector<Violation> violations;
};

/// Audit explicit routes against the capacity constraint.
FeasibilityReport check_feasible(const CvrpInstance& inst,
                                 const std::vector<std::vector<int>>& routes);

/// Audit the greedy split of a giant-tour solution (feasible by construction).
FeasibilityReport check_feasible(const CvrpInstance& inst, const Solution& s);

/// 100 * (cost - bks) / bks. Negative when a new best is found.
double optimality_gap(double cost, double bks);

/// Uniformly random valid encoding for the instance's domain.
Solution random_solution(const ProblemInstance& inst, Rng& rng);

/// Length of a valid encoding for this instance.
std::size_t encoding_length(const ProblemInstance& inst);

/// True when the encoding satisfies the Solution invariants for `inst`.
bool encoding_valid(const ProblemInstance& inst, const Solution& s);

} // namespace dyace
