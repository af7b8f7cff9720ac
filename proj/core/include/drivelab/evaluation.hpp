#pragma once

#include <optional>
#include <string>
#include <vector>

#include "drivelab/dataset.hpp"
#include "drivelab/policy.hpp"

namespace drivelab::eval {

enum class ControllerKind { Reference, Naive, Safe };

const char* to_string(ControllerKind k);

struct EvalConfig {
    int laps_target = 3;
    int traffic_cars = 0;  // 0 = traffic off
    ControllerKind strategy = ControllerKind::Naive;
    std::uint64_t seed = 1;
    int threads = 1;  // track evaluations are independent
};

struct TrackEval {
    std::string track_id;
    double laps = 0;  // fractional, capped at laps_target
    std::int64_t damage = 0;
    double damage_per_lap = 0;
    std::optional<double> steering_mse;  // absent when no policy-driven steps
    double takeover_fraction = 0;
    std::int64_t steps = 0;
    sim::Halt halted = sim::Halt::Running;
};

struct EvalReport {
    double avg_laps = 0;
    double damage_per_lap = 0;                 // total damage / total laps
    std::optional<double> steering_mse;        // over policy-driven steps only
    double takeover_fraction = 0;
    std::vector<TrackEval> per_track;
    std::uint64_t metric_queries = 0;    // reference comparisons for the MSE
    std::uint64_t takeover_queries = 0;  // test-time takeovers (kept out of training costs)
};

// Drives the configured controller on each track for up to laps_target laps
// (halting off-road, as the sim does) and aggregates the metric suite.
// `safety` may be null except under the safe strategy. When `trajectories_out`
// is given it receives one trajectory per track, in track order.
EvalReport evaluate(const policies::PrimaryPolicy* primary, const policies::SafetyPolicy* safety,
                    const std::vector<const sim::Track*>& tracks, const EvalConfig& cfg,
                    std::vector<sim::Trajectory>* trajectories_out = nullptr);

struct RankedExample {
    std::size_t index = 0;
    double p_safe = 0;
};

// All examples sorted ascending by p(safe), stable in input order.
std::vector<RankedExample> rank_observations(const imitation::Dataset& dataset,
                                             const policies::PrimaryPolicy& primary,
                                             const policies::SafetyPolicy& safety);

// Exports the N lowest and N highest ranked examples (2N rows when available)
// as CSV rows: p_safe, provenance fields, the twelve labels, then the
// observation cells.
void export_ranked_csv(const std::filesystem::path& path, const imitation::Dataset& dataset,
                       const std::vector<RankedExample>& ranked, int top_n);

// One metric curve point per (iteration, strategy, traffic condition).
struct CurvePoint {
    int iteration = 0;
    std::string strategy;  // naive | safe
    bool traffic = false;
    EvalReport report;
};

// Writes curve CSV plus SVG line plots (laps, damage per lap, steering mse,
// takeover fraction) into out_dir with the given file prefix.
void summarize_run(const std::vector<CurvePoint>& points,
                   const std::filesystem::path& out_dir, const std::string& prefix);

}  // namespace drivelab::eval
