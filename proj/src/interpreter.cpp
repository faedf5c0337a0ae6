#include "dyace/interpreter.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>

#include "dyace/probe.hpp"

namespace dyace {

namespace {

double pval(const OperatorSpec& spec, const GraphNode& node, const std::string& slot) {
    return spec.params.at(node.params.at(slot));
}

int pint(const OperatorSpec& spec, const GraphNode& node, const std::string& slot) {
    return static_cast<int>(std::llround(pval(spec, node, slot)));
}

const GraphNode* find_selection(const GraphNode& node) {
    if (node.kind == NodeKind::Selection) return &node;
    for (const auto& c : node.children)
        if (const GraphNode* s = find_selection(c)) return s;
    return nullptr;
}

// Positional disagreement in [0,1] between two equal-length encodings.
double positional_distance(const std::vector<int>& a, const std::vector<int>& b) {
    std::size_t same = 0;
    for (std::size_t i = 0; i < a.size(); ++i) same += a[i] == b[i];
    return 1.0 - static_cast<double>(same) / static_cast<double>(a.size());
}

// Shared, lazily filled per-application state: ranking tables and the
// population diversity consumed by gate nodes.
struct SharedContext {
    const OperatorSpec& spec;
    const Population& pop;
    Rng context_stream;

    std::optional<double> diversity;
    std::optional<std::vector<int>> by_cost; // member indices, best first
    std::optional<std::vector<double>> contribution; // diversity contribution per member

    double pop_diversity() {
        if (!diversity) diversity = population_diversity(pop, context_stream.child(0));
        return *diversity;
    }

    const std::vector<int>& cost_order() {
        if (!by_cost) {
            std::vector<int> idx(pop.size());
            std::iota(idx.begin(), idx.end(), 0);
            std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
                return pop.members[a].cost < pop.members[b].cost;
            });
            by_cost = std::move(idx);
        }
        return *by_cost;
    }

    // Mean positional distance to a fixed sample of other members.
    const std::vector<double>& diversity_contribution() {
        if (!contribution) {
            Rng s = context_stream.child(1);
            const std::size_t n = pop.size();
            const std::size_t probes = std::min<std::size_t>(8, n - 1);
            std::vector<double> c(n, 0.0);
            for (std::size_t i = 0; i < n; ++i) {
                double total = 0.0;
                for (std::size_t k = 0; k < probes; ++k) {
                    std::size_t j = s.next_below(n - 1);
                    if (j >= i) ++j;
                    total += positional_distance(pop.members[i].sol.perm, pop.members[j].sol.perm);
                }
                c[i] = probes ? total / static_cast<double>(probes) : 0.0;
            }
            contribution = std::move(c);
        }
        return *contribution;
    }
};

// Per-offspring evaluation state.
struct EvalContext {
    SharedContext& shared;
    Rng stream;
    std::optional<Solution> current;
    std::vector<int> parents;
    std::uint64_t budget;

    void charge(std::uint64_t units = 1) {
        if (units >= budget)
            throw InterpreterError("interpreter budget exceeded: pathological operator graph");
        budget -= units;
    }
};

int rank_draw(EvalContext& ctx, const std::vector<int>& order, double pressure) {
    // Baker linear ranking: expected copies of the best = pressure in [1,2].
    const std::size_t n = order.size();
    if (n == 1) return order[0];
    const double u = ctx.stream.next_double();
    double cum = 0.0;
    const double total = static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r) {
        const double w =
            (2.0 - pressure) + 2.0 * (pressure - 1.0) *
                                   static_cast<double>(n - 1 - r) / static_cast<double>(n - 1);
        cum += w / total;
        if (u < cum) return order[r];
    }
    return order[n - 1];
}

int select_parent(EvalContext& ctx, const GraphNode& sel) {
    const Population& pop = ctx.shared.pop;
    const OperatorSpec& spec = ctx.shared.spec;
    const std::size_t n = pop.size();

    if (sel.name == "tournament") {
        const int k = std::max(1, pint(spec, sel, "size"));
        std::size_t best = ctx.stream.next_below(n);
        for (int t = 1; t < k; ++t) {
            const std::size_t c = ctx.stream.next_below(n);
            if (pop.members[c].cost < pop.members[best].cost ||
                (pop.members[c].cost == pop.members[best].cost && c < best))
                best = c;
        }
        return static_cast<int>(best);
    }
    if (sel.name == "rank") {
        return rank_draw(ctx, ctx.shared.cost_order(), pval(spec, sel, "pressure"));
    }
    // diversity_fitness_dual: keep the most diverse fraction, rank-select inside.
    const double frac = pval(spec, sel, "diversity_fraction");
    const auto& contrib = ctx.shared.diversity_contribution();
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](int a, int b) { return contrib[a] > contrib[b]; });
    const std::size_t keep = std::max<std::size_t>(1, static_cast<std::size_t>(
                                                          std::ceil(frac * static_cast<double>(n))));
    idx.resize(keep);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
        return ctx.shared.pop.members[a].cost < ctx.shared.pop.members[b].cost;
    });
    return rank_draw(ctx, idx, 1.7);
}

Solution draw(EvalContext& ctx, const GraphNode& sel) {
    const int i = select_parent(ctx, sel);
    ctx.parents.push_back(i);
    return ctx.shared.pop.members[i].sol;
}

Solution take_input(EvalContext& ctx, const GraphNode& sel) {
    if (ctx.current) {
        Solution s = std::move(*ctx.current);
        ctx.current.reset();
        return s;
    }
    return draw(ctx, sel);
}

// --- crossovers (multiset-safe: they preserve element counts) --------------

using Counts = std::map<int, int>;

Counts count_elements(const std::vector<int>& v) {
    Counts c;
    for (int e : v) ++c[e];
    return c;
}

std::vector<int> cross_order(const std::vector<int>& a, const std::vector<int>& b, Rng& s) {
    const std::size_t len = a.size();
    std::size_t i = s.next_below(len);
    std::size_t j = s.next_below(len);
    if (i > j) std::swap(i, j);
    std::vector<int> child(len, -1);
    Counts avail = count_elements(a);
    for (std::size_t p = i; p < j; ++p) {
        child[p] = a[p];
        --avail[a[p]];
    }
    std::size_t pos = j % len;
    std::size_t to_fill = len - (j - i);
    for (std::size_t t = 0; t < len && to_fill > 0; ++t) {
        const int e = b[(j + t) % len];
        if (avail[e] > 0) {
            child[pos] = e;
            --avail[e];
            pos = (pos + 1) % len;
            --to_fill;
        }
    }
    return child;
}

std::vector<int> fill_gaps_in_order(std::vector<int> child, const std::vector<int>& b,
                                    Counts avail) {
    std::size_t src = 0;
    for (std::size_t p = 0; p < child.size(); ++p) {
        if (child[p] != -1) continue;
        while (avail[b[src]] == 0) ++src;
        child[p] = b[src];
        --avail[b[src]];
        ++src;
    }
    return child;
}

std::vector<int> cross_one_point(const std::vector<int>& a, const std::vector<int>& b, Rng& s) {
    const std::size_t len = a.size();
    const std::size_t cut = s.next_below(len + 1);
    std::vector<int> child(len, -1);
    Counts avail = count_elements(a);
    for (std::size_t p = 0; p < cut; ++p) {
        child[p] = a[p];
        --avail[a[p]];
    }
    return fill_gaps_in_order(std::move(child), b, std::move(avail));
}

std::vector<int> cross_two_point(const std::vector<int>& a, const std::vector<int>& b, Rng& s) {
    const std::size_t len = a.size();
    std::size_t i = s.next_below(len);
    std::size_t j = s.next_below(len);
    if (i > j) std::swap(i, j);
    std::vector<int> child(len, -1);
    Counts avail = count_elements(a);
    for (std::size_t p = i; p < j; ++p) {
        child[p] = a[p];
        --avail[a[p]];
    }
    return fill_gaps_in_order(std::move(child), b, std::move(avail));
}

std::vector<int> cross_uniform_precedence(const std::vector<int>& a, const std::vector<int>& b,
                                          Rng& s) {
    const std::size_t len = a.size();
    Counts avail = count_elements(a);
    std::vector<int> child;
    child.reserve(len);
    std::size_t pa = 0;
    std::size_t pb = 0;
    for (std::size_t p = 0; p < len; ++p) {
        const bool from_a = s.next_double() < 0.5;
        const std::vector<int>& src = from_a ? a : b;
        std::size_t& ptr = from_a ? pa : pb;
        while (avail[src[ptr]] == 0) ++ptr;
        child.push_back(src[ptr]);
        --avail[src[ptr]];
        ++ptr;
    }
    return child;
}

// --- mutations --------------------------------------------------------------

void mutate_swap(std::vector<int>& v, Rng& s) {
    const std::size_t len = v.size();
    if (len < 2) return;
    const std::size_t i = s.next_below(len);
    const std::size_t j = (i + 1 + s.next_below(len - 1)) % len;
    std::swap(v[i], v[j]);
}

void mutate_inversion(std::vector<int>& v, Rng& s) {
    const std::size_t len = v.size();
    if (len < 2) return;
    std::size_t i = s.next_below(len);
    std::size_t j = s.next_below(len);
    if (i > j) std::swap(i, j);
    std::reverse(v.begin() + static_cast<long>(i), v.begin() + static_cast<long>(j) + 1);
}

void mutate_insertion(std::vector<int>& v, Rng& s) {
    const std::size_t len = v.size();
    if (len < 2) return;
    const std::size_t i = s.next_below(len);
    const int e = v[i];
    v.erase(v.begin() + static_cast<long>(i));
    const std::size_t j = s.next_below(len);
    v.insert(v.begin() + static_cast<long>(j), e);
}

// --- local search -----------------------------------------------------------

Solution hill_climb(EvalContext& ctx, const GraphNode& node, Solution s) {
    const OperatorSpec& spec = ctx.shared.spec;
    const ProblemInstance& inst = *ctx.shared.pop.instance;
    const int iters = pint(spec, node, "iters");
    const int tenure = pint(spec, node, "tabu_tenure");
    const std::size_t len = s.perm.size();
    if (len < 2) return s;

    double cur_cost = evaluate(inst, s);
    double best_cost = cur_cost;
    std::vector<std::pair<std::size_t, std::size_t>> tabu;
    std::size_t tabu_head = 0;
    if (tenure > 0) tabu.assign(static_cast<std::size_t>(tenure), {len, len});

    for (int it = 0; it < iters; ++it) {
        ctx.charge();
        std::size_t i = ctx.stream.next_below(len);
        std::size_t j = (i + 1 + ctx.stream.next_below(len - 1)) % len;
        if (i > j) std::swap(i, j);
        const bool is_tabu =
            tenure > 0 &&
            std::find(tabu.begin(), tabu.end(), std::make_pair(i, j)) != tabu.end();

        std::swap(s.perm[i], s.perm[j]);
        const double cand = evaluate(inst, s);
        // Aspiration: a tabu move is allowed when it beats everything seen.
        const bool accept = cand < cur_cost && (!is_tabu || cand < best_cost);
        if (accept) {
            cur_cost = cand;
            best_cost = std::min(best_cost, cand);
            if (tenure > 0) {
                tabu[tabu_head] = {i, j};
                tabu_head = (tabu_head + 1) % tabu.size();
            }
        } else {
            std::swap(s.perm[i], s.perm[j]);
        }
    }
    s.cached_cost = cur_cost;
    return s;
}

// --- graph evaluation ---------------------------------------------------------

void eval_node(EvalContext& ctx, const GraphNode& node, const GraphNode& sel) {
    ctx.charge();
    const OperatorSpec& spec = ctx.shared.spec;
    switch (node.kind) {
    case NodeKind::Selection:
        ctx.current = draw(ctx, node);
        break;
    case NodeKind::Crossover: {
        Solution a = take_input(ctx, sel);
        if (ctx.stream.next_double() < pval(spec, node, "rate")) {
            Solution b = draw(ctx, sel);
            Solution child = a;
            child.cached_cost.reset();
            if (node.name == "order")
                child.perm = cross_order(a.perm, b.perm, ctx.stream);
            else if (node.name == "one_point")
                child.perm = cross_one_point(a.perm, b.perm, ctx.stream);
            else if (node.name == "two_point")
                child.perm = cross_two_point(a.perm, b.perm, ctx.stream);
            else
                child.perm = cross_uniform_precedence(a.perm, b.perm, ctx.stream);
            ctx.current = std::move(child);
        } else {
            ctx.current = std::move(a);
        }
        break;
    }
    case NodeKind::Mutation: {
        Solution a = take_input(ctx, sel);
        if (ctx.stream.next_double() < pval(spec, node, "rate")) {
            a.cached_cost.reset();
            if (node.name == "swap") {
                mutate_swap(a.perm, ctx.stream);
            } else if (node.name == "multi_swap") {
                const int k = pint(spec, node, "count");
                for (int t = 0; t < k; ++t) mutate_swap(a.perm, ctx.stream);
            } else if (node.name == "inversion") {
                mutate_inversion(a.perm, ctx.stream);
            } else {
                mutate_insertion(a.perm, ctx.stream);
            }
        }
        ctx.current = std::move(a);
        break;
    }
    case NodeKind::LocalSearch:
        ctx.current = hill_climb(ctx, node, take_input(ctx, sel));
        break;
    case NodeKind::Sequence:
        for (const auto& c : node.children) eval_node(ctx, c, sel);
        break;
    case NodeKind::Choice: {
        const double u = ctx.stream.next_double();
        double cum = 0.0;
        std::size_t pick = node.children.size() - 1;
        for (std::size_t b = 0; b < node.children.size(); ++b) {
            cum += spec.params.at(node.params.at("w" + std::to_string(b)));
            if (u < cum) {
                pick = b;
                break;
            }
        }
        eval_node(ctx, node.children[pick], sel);
        break;
    }
    case NodeKind::Gate: {
        const double threshold = pval(spec, node, "threshold");
        const bool below = ctx.shared.pop_diversity() < threshold;
        eval_node(ctx, node.children[below ? 0 : 1], sel);
        break;
    }
    }
}

} // namespace

OffspringSet apply_operator(const OperatorSpec& spec, const Population& pop, const Rng& rng,
                            std::uint64_t node_budget) {
    if (spec.domain != pop.domain())
        throw std::invalid_argument("apply_operator: spec domain " + to_string(spec.domain) +
                                    " does not match population domain " +
                                    to_string(pop.domain()));
    const GraphNode* sel = find_selection(spec.graph);
    if (sel == nullptr) throw std::invalid_argument("apply_operator: graph has no selection node");

    SharedContext shared{spec, pop, rng.child(0), {}, {}, {}};
    OffspringSet out;
    out.solutions.reserve(pop.size());
    out.parents.reserve(pop.size());

    for (std::size_t i = 0; i < pop.size(); ++i) {
        EvalContext ctx{shared, rng.child(1 + i), std::nullopt, {}, node_budget};
        eval_node(ctx, spec.graph, *sel);
        Solution result = ctx.current ? std::move(*ctx.current) : draw(ctx, *sel);
        out.solutions.push_back(std::move(result));
        out.parents.push_back(std::move(ctx.parents));
    }
    return out;
}

} // namespace dyace
