#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "drivelab/dataset.hpp"
#include "drivelab/evaluation.hpp"
#include "drivelab/policy.hpp"

namespace drivelab::imitation {

// Shipped tracks, split into training and test sets.
struct TrackLibrary {
    std::vector<sim::Track> tracks;
    std::vector<std::size_t> train_indices;
    std::vector<std::size_t> test_indices;

    static TrackLibrary load(const std::filesystem::path& dir);

    std::vector<const sim::Track*> train() const;
    std::vector<const sim::Track*> test() const;
    std::vector<const sim::Track*> all() const;
};

enum class CollectStrategy { ReferenceOnly, NaivePrimary, Mixture, Safe };

struct CollectedState {
    perception::Observation obs;
    sim::WorldState snapshot;
    sim::ControllerTag tag = sim::ControllerTag::Reference;
    std::uint32_t episode_id = 0;
    std::uint32_t step_in_episode = 0;
};

struct CollectParams {
    CollectStrategy strategy = CollectStrategy::ReferenceOnly;
    double beta = 0.0;  // mixture strategy only
    int n_examples = 0;
    int traffic_cars = 0;
    std::uint64_t stage_seed = 0;
    std::uint32_t episode_id_base = 0;
    int episode_cap = 3000;
    // Diagnostic mode: the safe-strategy gate always hands control to the
    // primary and subset selection is skipped, reproducing plain aggregation.
    bool safety_bypass = false;
};

// Runs seeded episodes round-robin over `tracks` until n_examples states are
// recorded (one per simulator step, snapshot taken before acting). Reference
// takeovers during safe/mixture driving are billed to the ledger.
std::vector<CollectedState> collect(const CollectParams& params,
                                    const policies::PrimaryPolicy* primary,
                                    const policies::SafetyPolicy* safety,
                                    const std::vector<const sim::Track*>& tracks,
                                    reference::QueryLedger& ledger);

struct SubsetResult {
    std::vector<CollectedState> selected;  // states the safety policy called unsafe
    double selection_fraction = 0;
};

SubsetResult subset_select(const std::vector<CollectedState>& raw,
                           const policies::PrimaryPolicy& primary,
                           const policies::SafetyPolicy& safety);

// One label query per state; fills the reference action and the full label
// vector (s_c/i_b from that same query).
Dataset label_with_reference(const std::vector<CollectedState>& states,
                             reference::QueryLedger& ledger, std::uint32_t source_iteration);

struct SafetyLabels {
    std::vector<std::uint8_t> label;  // aligned with the dataset; meaningful where valid
    std::vector<std::uint8_t> valid;  // 0 when the t+k example is missing
    std::size_t n_valid = 0;
    std::size_t n_unsafe = 0;
};

// Optimal safety labels against the given primary. With lookahead_steps k > 0
// the deviation is evaluated k recorded steps later in the same episode;
// examples without that successor are dropped (valid = 0).
SafetyLabels make_safety_labels(const Dataset& dataset, const policies::PrimaryPolicy& primary,
                                double tau, int lookahead_steps);

struct SupervisedLossValue {
    double composite = 0;   // training objective: control terms + w_aux * auxiliaries
    double control_sq = 0;  // squared control error alone (steer + brake probability)
};

SupervisedLossValue supervised_loss(const policies::PrimaryPolicy& policy,
                                    std::span<const LabeledExample> batch, double w_aux);

struct IterationPlan {
    std::uint64_t seed = 1;
    int n_iterations = 3;
    int d0_size = 3000;
    int dsafe_size = 1000;
    std::vector<int> iteration_sizes = {3000, 3000, 1000};  // raw collection per iteration
    std::vector<double> beta_schedule;  // dagger; empty = 0 for every iteration >= 1
    double dagger_oversample = 1.0;     // raw = size * oversample, uniform down-select
    double tau = 0.0;                   // > 0 fixes the threshold; 0 calibrates it
    double target_safe_fraction = 0.8;  // calibration target on the initial deviations
    int lookahead_steps = 0;            // 0 = label the current state
    int traffic_cars = 8;
    double validation_fraction = 0.1;
    bool reduction_mode = false;        // run safedagger as its plain-aggregation reduction
    std::vector<int> primary_hidden = {128, 64};
    std::vector<int> safety_hidden = {32, 32};
    nn::TrainConfig train;
    double w_aux = 0.5;
    bool evaluate_each_iteration = true;
    std::vector<int> eval_traffic = {0, 8};  // one eval per condition (cars; 0 = off)
    int eval_laps = 3;
    int episode_cap = 3000;
    int threads = 1;

    void validate() const;
    double beta_for(int iteration) const;  // iteration >= 1
};

struct IterationReport {
    int iteration = 0;
    int raw_collected = 0;
    int new_examples = 0;
    int dataset_size = 0;  // |D_i|
    double collect_takeover_fraction = 0;
    double selection_fraction = 1.0;
    reference::QueryCounts queries_iter;
    reference::QueryCounts queries_cum;
    double tau = 0;
    double achieved_safe_fraction = std::nan("");
    double safety_holdout_accuracy = std::nan("");
    double safety_unsafe_share = std::nan("");
    int primary_epochs = 0;
    double primary_best_valid = 0;
    double control_sq_valid = 0;
    std::vector<eval::CurvePoint> evals;
};

struct RunReport {
    std::string regime;
    std::uint64_t seed = 0;
    std::vector<IterationReport> iterations;
    reference::QueryCounts total_queries;  // training-time only
};

// run_report.csv: one row per iteration, byte-stable for a given config+seed.
void write_run_report_csv(const RunReport& report, const std::filesystem::path& path);
void write_run_summary_text(const RunReport& report, const std::filesystem::path& path);

struct SupervisedRunResult {
    policies::PrimaryPolicy primary;
    Dataset dataset;
    RunReport report;
};

struct DaggerRunResult {
    std::vector<policies::PrimaryPolicy> primaries;  // one per iteration, 0..M
    Dataset dataset;                                 // final D_M
    RunReport report;

    const policies::PrimaryPolicy& final_primary() const { return primaries.back(); }
};

struct SafeDaggerRunResult {
    std::vector<policies::PrimaryPolicy> primaries;
    std::vector<policies::SafetyPolicy> safeties;
    Dataset dataset;  // final D_M (primary training data)
    Dataset dsafe;
    RunReport report;

    const policies::PrimaryPolicy& final_primary() const { return primaries.back(); }
    const policies::SafetyPolicy& final_safety() const { return safeties.back(); }
};

SupervisedRunResult run_supervised(const IterationPlan& plan, const TrackLibrary& library);
DaggerRunResult run_dagger(const IterationPlan& plan, const TrackLibrary& library);
SafeDaggerRunResult run_safedagger(const IterationPlan& plan, const TrackLibrary& library);

}  // namespace drivelab::imitation
