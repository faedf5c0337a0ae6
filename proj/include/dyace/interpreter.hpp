#pragma once

#include <stdexcept>
#include <vector>

#include "dyace/dsl.hpp"
#include "dyace/engine.hpp"

namespace dyace {

/// Signals a pathological graph whose evaluation exceeded the node budget.
class InterpreterError : public std::runtime_error {
public:
    explicit InterpreterError(const std::string& what) : std::runtime_error(what) {}
};

struct OffspringSet {
    std::vector<Solution> solutions;
    /// Members of `pop` each offspring was built from, in draw order.
    std::vector<std::vector<int>> parents;
};

constexpr std::uint64_t kDefaultNodeBudget = 100000;

/// Interpret the operator graph to produce exactly pop.size() offspring.
///
/// Each offspring is built by evaluating the graph once with its own derived
/// stream: the unique selection node defines the parent-draw rule, crossover
/// draws its mate through that rule, and mutation/local-search transform the
/// flowing individual. A transform that runs before any selection leaf draws
/// its input implicitly through the same rule. Deterministic in
/// (spec, pop, rng), whatever thread runs it.
OffspringSet apply_operator(const OperatorSpec& spec, const Population& pop, const Rng& rng,
                            std::uint64_t node_budget = kDefaultNodeBudget);

} // namespace dyace
