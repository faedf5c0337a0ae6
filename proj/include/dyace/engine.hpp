#pragma once

#include <string>
#include <vector>

#include "dyace/dsl.hpp"
#include "dyace/problem.hpp"
#include "dyace/rng.hpp"

namespace dyace {

struct Individual {
    Solution sol;
    double cost = 0.0;
};

/// Value-semantic population snapshot. step() never mutates its input, so
/// shadow environments can branch freely from any generation.
struct Population {
    const ProblemInstance* instance = nullptr;
    int generation = 0;
    std::vector<Individual> members;
    Individual best_ever;

    Domain domain() const { return domain_of(*instance); }
    std::size_t size() const { return members.size(); }
    const Individual& best_member() const;
};

struct GenRecord {
    int generation = 0;
    double best_cost = 0.0;
    double mean_cost = 0.0;
    double diversity = 0.0;
    int successes = 0;      // offspring strictly better than their best parent
    double total_gain = 0.0; // summed cost improvement of successful offspring
};

struct GenerationTrace {
    int pop_size = 0;
    std::vector<GenRecord> records;

    void append(const GenerationTrace& other);
};

Population init_population(const ProblemInstance& instance, int n, Rng rng);

/// One generation: offspring via the operator graph, then (mu+lambda)
/// truncation survival with stable (cost, insertion order) tie-breaking.
/// The elite survives by construction, so best cost never increases.
std::pair<Population, GenRecord> step(const Population& pop, const OperatorSpec& spec,
                                      Rng gen_stream);

/// h consecutive steps. Generation g always consumes base_stream.child(g),
/// so splitting a horizon in two reproduces the unsplit run exactly.
std::pair<Population, GenerationTrace> run_horizon(const Population& pop, const OperatorSpec& spec,
                                                   int h, const Rng& base_stream);

/// Gap of the lowest best-cost over all recorded generations.
double trajectory_metric(const GenerationTrace& trace, const ProblemInstance& instance);

/// CSV with header generation,best_cost,mean_cost,diversity,successes,total_gain.
/// Doubles are printed with round-trip precision.
std::string trace_to_csv(const GenerationTrace& trace);

/// FNV-1a over the encodings and generation index; used for iso-state checks.
std::uint64_t population_hash(const Population& pop);

} // namespace dyace
