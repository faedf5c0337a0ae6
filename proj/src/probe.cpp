#include "dyace/probe.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <future>

#include "dyace/interpreter.hpp"

namespace dyace {

using nlohmann::json;

namespace {

constexpr std::uint64_t kAuxStreamChild = 0xFFFFFFFF00000001ULL;

double positional_distance(const std::vector<int>& a, const std::vector<int>& b) {
    std::size_t same = 0;
    for (std::size_t i = 0; i < a.size(); ++i) same += a[i] == b[i];
    return 1.0 - static_cast<double>(same) / static_cast<double>(a.size());
}

// Baseline row for the shared starting snapshot; rollout traces are this row
// plus one record per probed generation, so t_probe >= 2 already yields the
// three points the kinematics need.
GenRecord snapshot_record(const Population& pop, Rng div_stream) {
    GenRecord rec;
    rec.generation = pop.generation;
    rec.best_cost = pop.best_member().cost;
    double sum = 0.0;
    for (const auto& m : pop.members) sum += m.cost;
    rec.mean_cost = sum / static_cast<double>(pop.size());
    rec.diversity = population_diversity(pop, div_stream);
    return rec;
}

struct RolloutOutcome {
    bool failed = false;
    std::string failure;
    double final_gap = 0.0;
    TrajectoryFeatures features;
};

RolloutOutcome run_one_rollout(const Population& pop, const OperatorSpec& spec, int t_probe,
                               const Rng& stream, const GenRecord& baseline,
                               std::chrono::steady_clock::time_point deadline, bool has_deadline) {
    RolloutOutcome out;
    GenerationTrace trace;
    trace.pop_size = static_cast<int>(pop.size());
    trace.records.push_back(baseline);
    Population current = pop;
    try {
        for (int g = 0; g < t_probe; ++g) {
            if (has_deadline && std::chrono::steady_clock::now() > deadline) {
                out.failed = true;
                out.failure = "rollout time limit exceeded";
                return out;
            }
            auto [next, rec] =
                step(current, spec, stream.child(static_cast<std::uint64_t>(current.generation)));
            current = std::move(next);
            trace.records.push_back(rec);
        }
    } catch (const InterpreterError& e) {
        out.failed = true;
        out.failure = e.what();
        return out;
    }
    out.final_gap = optimality_gap(current.best_member().cost, bks_of(*pop.instance));
    out.features = extract_features(trace, *pop.instance);
    return out;
}

TrajectoryFeatures mean_features(const std::vector<TrajectoryFeatures>& fs) {
    TrajectoryFeatures mean;
    if (fs.empty()) return mean;
    const double n = static_cast<double>(fs.size());
    for (const auto& f : fs) {
        mean.velocity += f.velocity / n;
        mean.acceleration += f.acceleration / n;
        mean.diversity += f.diversity / n;
        mean.diversity_loss_rate += f.diversity_loss_rate / n;
        mean.operator_precision += f.operator_precision / n;
        mean.operator_impact += f.operator_impact / n;
        mean.stagnation_len += f.stagnation_len / n;
    }
    return mean;
}

} // namespace

RolloutReport probe(const Population& pop, const std::vector<OperatorSpec>& candidates,
                    int t_probe, int m, const Rng& rng, const GenerationTrace* anchor_trace,
                    const ProbeOptions& options) {
    if (candidates.empty()) throw std::invalid_argument("probe: no candidates");
    if (t_probe < 2) throw std::invalid_argument("probe: t_probe must be >= 2");
    if (m < 1) throw std::invalid_argument("probe: m must be >= 1");

    RolloutReport report;
    report.pop_hash = population_hash(pop);
    report.t_probe = t_probe;
    report.m = m;

    const GenRecord baseline = snapshot_record(pop, rng.child(kAuxStreamChild));
    const bool has_deadline = options.rollout_time_limit.count() > 0;

    // All rollouts read the same snapshot; each owns a clone and a stream
    // derived from (candidate index, rollout index).
    std::vector<std::vector<RolloutOutcome>> outcomes(candidates.size());
    auto run_cell = [&](std::size_t k, int j) {
        const auto deadline = std::chrono::steady_clock::now() + options.rollout_time_limit;
        return run_one_rollout(pop, candidates[k], t_probe,
                               rng.child(k).child(static_cast<std::uint64_t>(j)), baseline,
                               deadline, has_deadline);
    };

    if (options.threads > 1) {
        std::vector<std::future<RolloutOutcome>> futures;
        futures.reserve(candidates.size() * static_cast<std::size_t>(m));
        for (std::size_t k = 0; k < candidates.size(); ++k)
            for (int j = 0; j < m; ++j)
                futures.push_back(std::async(std::launch::async, run_cell, k, j));
        for (std::size_t k = 0; k < candidates.size(); ++k) {
            outcomes[k].resize(static_cast<std::size_t>(m));
            for (int j = 0; j < m; ++j)
                outcomes[k][static_cast<std::size_t>(j)] =
                    futures[k * static_cast<std::size_t>(m) + static_cast<std::size_t>(j)].get();
        }
    } else {
        for (std::size_t k = 0; k < candidates.size(); ++k)
            for (int j = 0; j < m; ++j) outcomes[k].push_back(run_cell(k, j));
    }

    for (std::size_t k = 0; k < candidates.size(); ++k) {
        CandidateResult result;
        result.spec_id = candidates[k].id;
        std::vector<TrajectoryFeatures> fs;
        for (const auto& o : outcomes[k]) {
            if (o.failed) {
                result.failed = true;
                result.failure = o.failure;
                break;
            }
            result.final_gaps.push_back(o.final_gap);
            fs.push_back(o.features);
        }
        if (!result.failed) {
            result.score = score(result.final_gaps);
            result.features = mean_features(fs);
        } else {
            result.final_gaps.clear();
        }
        report.candidates.push_back(std::move(result));
    }

    if (anchor_trace != nullptr && anchor_trace->records.size() >= 3)
        report.anchor_real = extract_features(*anchor_trace, *pop.instance);
    return report;
}

double score(const std::vector<double>& gaps) {
    if (gaps.empty()) throw std::invalid_argument("score: empty gap list");
    double sum = 0.0;
    for (double g : gaps) sum += g;
    return sum / static_cast<double>(gaps.size());
}

TrajectoryFeatures extract_features(const GenerationTrace& trace,
                                    const ProblemInstance& instance) {
    const auto& recs = trace.records;
    const std::size_t n = recs.size();
    if (n < 3) throw std::invalid_argument("extract_features: trace too short (need >= 3 records)");
    const double bks = bks_of(instance);

    std::vector<double> gap(n);
    for (std::size_t i = 0; i < n; ++i) gap[i] = optimality_gap(recs[i].best_cost, bks);

    TrajectoryFeatures f;
    for (std::size_t i = 1; i < n; ++i) f.velocity += gap[i - 1] - gap[i];
    f.velocity /= static_cast<double>(n - 1);
    for (std::size_t i = 2; i < n; ++i) f.acceleration += gap[i] - 2.0 * gap[i - 1] + gap[i - 2];
    f.acceleration /= static_cast<double>(n - 2);

    f.diversity = recs.back().diversity;
    for (std::size_t i = 1; i < n; ++i)
        f.diversity_loss_rate += recs[i - 1].diversity - recs[i].diversity;
    f.diversity_loss_rate /= static_cast<double>(n - 1);

    double successes = 0.0;
    double gain = 0.0;
    for (const auto& r : recs) {
        successes += r.successes;
        gain += r.total_gain;
    }
    const double offspring = static_cast<double>(trace.pop_size) * static_cast<double>(n);
    f.operator_precision = offspring > 0.0 ? successes / offspring : 0.0;
    f.operator_impact = successes > 0.0 ? (gain / successes) * 100.0 / bks : 0.0;

    std::size_t last_improvement = 0;
    for (std::size_t i = 1; i < n; ++i)
        if (recs[i].best_cost < recs[i - 1].best_cost) last_improvement = i;
    f.stagnation_len = static_cast<double>(n - 1 - last_improvement);
    return f;
}

double population_diversity(const Population& pop, Rng rng) {
    const std::size_t n = pop.size();
    if (n < 2) return 0.0;
    double total = 0.0;
    std::size_t pairs = 0;
    if (n <= 32) {
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) {
                total += positional_distance(pop.members[i].sol.perm, pop.members[j].sol.perm);
                ++pairs;
            }
    } else {
        constexpr std::size_t kSamplePairs = 200;
        for (std::size_t t = 0; t < kSamplePairs; ++t) {
            const std::size_t i = rng.next_below(n);
            const std::size_t j = (i + 1 + rng.next_below(n - 1)) % n;
            total += positional_distance(pop.members[i].sol.perm, pop.members[j].sol.perm);
            ++pairs;
        }
    }
    return total / static_cast<double>(pairs);
}

std::string render_features(const TrajectoryFeatures& f) {
    return fmt::format("velocity: {:.4f}\n"
                       "acceleration: {:.4f}\n"
                       "diversity: {:.4f}\n"
                       "diversity_loss_rate: {:.4f}\n"
                       "operator_precision: {:.4f}\n"
                       "operator_impact: {:.4f}\n"
                       "stagnation_len: {:.4f}\n",
                       f.velocity, f.acceleration, f.diversity, f.diversity_loss_rate,
                       f.operator_precision, f.operator_impact, f.stagnation_len);
}

json features_to_json(const TrajectoryFeatures& f) {
    return json{{"velocity", f.velocity},
                {"acceleration", f.acceleration},
                {"diversity", f.diversity},
                {"diversity_loss_rate", f.diversity_loss_rate},
                {"operator_precision", f.operator_precision},
                {"operator_impact", f.operator_impact},
                {"stagnation_len", f.stagnation_len}};
}

json report_to_json(const RolloutReport& r) {
    json j;
    j["pop_hash"] = r.pop_hash;
    j["t_probe"] = r.t_probe;
    j["m"] = r.m;
    j["candidates"] = json::array();
    for (const auto& c : r.candidates) {
        json cj;
        cj["spec_id"] = c.spec_id;
        if (c.failed) {
            cj["failed"] = true;
            cj["failure"] = c.failure;
        } else {
            cj["failed"] = false;
            cj["score"] = c.score;
            cj["final_gaps"] = c.final_gaps;
            cj["features"] = features_to_json(c.features);
        }
        j["candidates"].push_back(std::move(cj));
    }
    if (r.anchor_real) j["anchor_real"] = features_to_json(*r.anchor_real);
    return j;
}

} // namespace dyace
