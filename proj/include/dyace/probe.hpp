#pragma once

#include <chrono>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dyace/engine.hpp"

namespace dyace {

/// The compact state vector distilled from a search trajectory.
/// Sign convention: positive velocity means the gap is shrinking.
struct TrajectoryFeatures {
    double velocity = 0.0;            // mean per-generation best-gap decrease (%/gen)
    double acceleration = 0.0;        // mean second difference of the best gap (%/gen^2)
    double diversity = 0.0;           // final-generation population diversity in [0,1]
    double diversity_loss_rate = 0.0; // mean per-generation diversity decrease
    double operator_precision = 0.0;  // offspring strictly better than their best parent
    double operator_impact = 0.0;     // mean gain of improving offspring, % of BKS
    double stagnation_len = 0.0;      // generations since the last best-cost improvement

    bool operator==(const TrajectoryFeatures&) const = default;
};

struct CandidateResult {
    std::string spec_id;
    bool failed = false;
    std::string failure;            // set when failed
    double score = 0.0;             // mean of final_gaps; meaningless when failed
    std::vector<double> final_gaps; // one per completed rollout
    TrajectoryFeatures features;    // field-wise mean over the candidate's rollouts
};

/// Outcome of one iso-state look-ahead evaluation round.
struct RolloutReport {
    std::uint64_t pop_hash = 0; // hash of the shared starting snapshot
    int t_probe = 0;
    int m = 0;
    std::vector<CandidateResult> candidates;
    /// Features of the incumbent's recent real-trajectory window, when one
    /// was supplied. Probe-side features live in the candidate entries.
    std::optional<TrajectoryFeatures> anchor_real;
};

struct ProbeOptions {
    int threads = 1;
    /// Wall-clock limit per rollout; expiring marks the candidate failed.
    std::chrono::milliseconds rollout_time_limit{0}; // 0 = unlimited
};

/// Run m short rollouts of t_probe generations for every candidate, all from
/// a byte-identical snapshot of `pop`. Candidate k rollout j consumes
/// rng.child(k).child(j), so reports for a prefix of the rollout count match
/// the standalone shorter run. Failed candidates are flagged, never averaged.
RolloutReport probe(const Population& pop, const std::vector<OperatorSpec>& candidates,
                    int t_probe, int m, const Rng& rng,
                    const GenerationTrace* anchor_trace = nullptr,
                    const ProbeOptions& options = {});

/// Arithmetic mean of per-rollout final gaps. Throws on empty input.
double score(const std::vector<double>& gaps);

/// Distill a trace of >= 3 records into the feature vector.
TrajectoryFeatures extract_features(const GenerationTrace& trace, const ProblemInstance& instance);

/// Mean normalized positional disagreement over member pairs: all pairs when
/// the population has <= 32 members, otherwise a fixed-size sample drawn from
/// the dedicated stream.
double population_diversity(const Population& pop, Rng rng);

/// Prompt-facing rendering: stable key order, fixed 4-decimal formatting,
/// reproducible byte-for-byte.
std::string render_features(const TrajectoryFeatures& f);

nlohmann::json features_to_json(const TrajectoryFeatures& f);
nlohmann::json report_to_json(const RolloutReport& r);

} // namespace dyace
