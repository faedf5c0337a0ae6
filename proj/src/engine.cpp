#include "dyace/engine.hpp"

#include <algorithm>
#include <fmt/format.h>
#include <limits>
#include <numeric>
#include <sstream>

#include "dyace/interpreter.hpp"
#include "dyace/probe.hpp"

namespace dyace {

const Individual& Population::best_member() const {
    const Individual* best = &members.front();
    for (const auto& m : members)
        if (m.cost < best->cost) best = &m;
    return *best;
}

void GenerationTrace::append(const GenerationTrace& other) {
    pop_size = other.pop_size;
    records.insert(records.end(), other.records.begin(), other.records.end());
}

Population init_population(const ProblemInstance& instance, int n, Rng rng) {
    if (n < 2) throw std::invalid_argument("init_population: need n >= 2");
    Population pop;
    pop.instance = &instance;
    pop.generation = 0;
    pop.members.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        Rng member_stream = rng.child(static_cast<std::uint64_t>(i));
        Individual ind;
        ind.sol = random_solution(instance, member_stream);
        ind.cost = evaluate(instance, ind.sol);
        ind.sol.cached_cost = ind.cost;
        pop.members.push_back(std::move(ind));
    }
    pop.best_ever = pop.best_member();
    return pop;
}

std::pair<Population, GenRecord> step(const Population& pop, const OperatorSpec& spec,
                                      Rng gen_stream) {
    const ProblemInstance& inst = *pop.instance;
    OffspringSet offspring = apply_operator(spec, pop, gen_stream.child(0));

    const std::size_t n = pop.size();
    GenRecord rec;
    rec.generation = pop.generation + 1;

    std::vector<Individual> pool;
    pool.reserve(2 * n);
    pool.insert(pool.end(), pop.members.begin(), pop.members.end());
    for (std::size_t i = 0; i < offspring.solutions.size(); ++i) {
        Individual child;
        child.sol = std::move(offspring.solutions[i]);
        child.cost = child.sol.cached_cost ? *child.sol.cached_cost : evaluate(inst, child.sol);
        child.sol.cached_cost = child.cost;

        double best_parent = std::numeric_limits<double>::infinity();
        for (int p : offspring.parents[i]) best_parent = std::min(best_parent, pop.members[p].cost);
        if (!offspring.parents[i].empty() && child.cost < best_parent) {
            ++rec.successes;
            rec.total_gain += best_parent - child.cost;
        }
        pool.push_back(std::move(child));
    }

    // (mu+lambda) truncation; stable sort keeps insertion order on cost ties,
    // which also pins the elite deterministically.
    std::vector<std::size_t> order(pool.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return pool[a].cost < pool[b].cost; });

    Population next;
    next.instance = pop.instance;
    next.generation = pop.generation + 1;
    next.members.reserve(n);
    for (std::size_t i = 0; i < n; ++i) next.members.push_back(std::move(pool[order[i]]));
    next.best_ever =
        next.members.front().cost < pop.best_ever.cost ? next.members.front() : pop.best_ever;

    double sum = 0.0;
    for (const auto& m : next.members) sum += m.cost;
    rec.best_cost = next.members.front().cost;
    rec.mean_cost = sum / static_cast<double>(n);
    rec.diversity = population_diversity(next, gen_stream.child(1));
    return {std::move(next), rec};
}

std::pair<Population, GenerationTrace> run_horizon(const Population& pop, const OperatorSpec& spec,
                                                   int h, const Rng& base_stream) {
    if (h < 1) throw std::invalid_argument("run_horizon: need h >= 1");
    GenerationTrace trace;
    trace.pop_size = static_cast<int>(pop.size());
    Population current = pop;
    for (int i = 0; i < h; ++i) {
        auto [next, rec] = step(current, spec,
                                base_stream.child(static_cast<std::uint64_t>(current.generation)));
        current = std::move(next);
        trace.records.push_back(rec);
    }
    return {std::move(current), std::move(trace)};
}

double trajectory_metric(const GenerationTrace& trace, const ProblemInstance& instance) {
    if (trace.records.empty()) throw std::invalid_argument("trajectory_metric: empty trace");
    double best = trace.records.front().best_cost;
    for (const auto& r : trace.records) best = std::min(best, r.best_cost);
    return optimality_gap(best, bks_of(instance));
}

std::string trace_to_csv(const GenerationTrace& trace) {
    std::ostringstream out;
    out << "generation,best_cost,mean_cost,diversity,successes,total_gain\n";
    for (const auto& r : trace.records)
        out << fmt::format("{},{:.17g},{:.17g},{:.17g},{},{:.17g}\n", r.generation, r.best_cost,
                           r.mean_cost, r.diversity, r.successes, r.total_gain);
    return out.str();
}

std::uint64_t population_hash(const Population& pop) {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&](std::uint64_t v) {
        h ^= v;
        h *= 1099511628211ULL;
    };
    mix(static_cast<std::uint64_t>(pop.generation));
    for (const auto& m : pop.members) {
        for (int e : m.sol.perm) mix(static_cast<std::uint64_t>(e) + 0x9E3779B9ULL);
        mix(0xFEEDFACEULL);
    }
    return h;
}

} // namespace dyace
