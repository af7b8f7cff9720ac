#include "drivelab/imitation.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace drivelab::imitation {

// ---------------------------------------------------------------------------
// track library

TrackLibrary TrackLibrary::load(const std::filesystem::path& dir) {
    TrackLibrary lib;
    for (const auto& spec : sim::load_track_dir(dir)) lib.tracks.push_back(sim::build_track(spec));
    for (std::size_t i = 0; i < lib.tracks.size(); ++i) {
        if (lib.tracks[i].spec().is_test) lib.test_indices.push_back(i);
        else lib.train_indices.push_back(i);
    }
    if (lib.tracks.empty()) throw std::runtime_error("no .track files in " + dir.string());
    return lib;
}

namespace {

std::vector<const sim::Track*> gather(const std::vector<sim::Track>& tracks,
                                      const std::vector<std::size_t>& idx) {
    std::vector<const sim::Track*> out;
    out.reserve(idx.size());
    for (std::size_t i : idx) out.push_back(&tracks[i]);
    return out;
}

}  // namespace

std::vector<const sim::Track*> TrackLibrary::train() const { return gather(tracks, train_indices); }
std::vector<const sim::Track*> TrackLibrary::test() const { return gather(tracks, test_indices); }
std::vector<const sim::Track*> TrackLibrary::all() const {
    std::vector<const sim::Track*> out;
    for (const auto& t : tracks) out.push_back(&t);
    return out;
}

// ---------------------------------------------------------------------------
// collection

std::vector<CollectedState> collect(const CollectParams& params,
                                    const policies::PrimaryPolicy* primary,
                                    const policies::SafetyPolicy* safety,
                                    const std::vector<const sim::Track*>& tracks,
                                    reference::QueryLedger& ledger) {
    if (params.n_examples <= 0) throw std::invalid_argument("collect: n_examples must be > 0");
    if (tracks.empty()) throw std::invalid_argument("collect: no tracks");
    const bool needs_primary = params.strategy != CollectStrategy::ReferenceOnly;
    if (needs_primary && primary == nullptr)
        throw std::invalid_argument("collect: strategy requires a primary policy");
    if (params.strategy == CollectStrategy::Safe && !params.safety_bypass && safety == nullptr)
        throw std::invalid_argument("collect: safe strategy requires a safety policy");

    std::vector<CollectedState> out;
    out.reserve(static_cast<std::size_t>(params.n_examples));
    std::uint32_t episode = 0;
    while (out.size() < static_cast<std::size_t>(params.n_examples)) {
        const sim::Track& track = *tracks[episode % tracks.size()];
        const std::uint64_t episode_seed = derive_seed(params.stage_seed, "episode", episode);
        Rng ego_rng(derive_seed(episode_seed, "ego"));
        const double ego_arc = ego_rng.uniform(0.0, track.length());
        const double ego_speed = track.speed_limit() * ego_rng.uniform(0.4, 0.9);
        std::vector<sim::CarState> traffic;
        if (params.traffic_cars > 0)
            traffic = sim::spawn_traffic(track, params.traffic_cars,
                                         derive_seed(episode_seed, "traffic"), ego_arc);
        sim::WorldState world = sim::make_world(track, ego_arc, track.lane_count() / 2,
                                                ego_speed, std::move(traffic));
        Rng mix_rng(derive_seed(episode_seed, "mixture"));

        for (int t = 0; t < params.episode_cap && world.running(); ++t) {
            const auto obs = perception::observe(world);
            policies::StrategyDecision d;
            switch (params.strategy) {
                case CollectStrategy::ReferenceOnly: {
                    const auto rd = reference::reference_decide(world, reference::kEgoIndex);
                    d.action = rd.action;
                    d.tag = sim::ControllerTag::Reference;
                    d.latched_lane = rd.target_lane;
                    break;
                }
                case CollectStrategy::NaivePrimary:
                    d.action = policies::primary_act(*primary, obs).action;
                    d.tag = sim::ControllerTag::Primary;
                    break;
                case CollectStrategy::Mixture:
                    d = policies::mixture_act(*primary, params.beta, obs, world, mix_rng,
                                              ledger);
                    break;
                case CollectStrategy::Safe:
                    if (params.safety_bypass) {
                        d.action = policies::primary_act(*primary, obs).action;
                        d.tag = sim::ControllerTag::Primary;
                    } else {
                        d = policies::safe_strategy_act(*primary, *safety, obs, world, ledger);
                    }
                    break;
            }
            out.push_back({obs, world, d.tag, params.episode_id_base + episode,
                           static_cast<std::uint32_t>(t)});
            if (out.size() >= static_cast<std::size_t>(params.n_examples)) break;
            // keep the reference's lane-change latch when it drove this step
            if (d.tag == sim::ControllerTag::Reference && d.latched_lane >= 0)
                world.ego.lane_index = d.latched_lane;
            sim::step(world, d.action);
        }
        ++episode;
    }
    return out;
}

SubsetResult subset_select(const std::vector<CollectedState>& raw,
                           const policies::PrimaryPolicy& primary,
                           const policies::SafetyPolicy& safety) {
    SubsetResult r;
    for (const auto& cs : raw) {
        const auto act = policies::primary_act(primary, cs.obs);
        const auto v = policies::safety_classify(safety, act.features);
        if (!v.safe) r.selected.push_back(cs);
    }
    r.selection_fraction =
        raw.empty() ? 0.0 : static_cast<double>(r.selected.size()) / static_cast<double>(raw.size());
    return r;
}

Dataset label_with_reference(const std::vector<CollectedState>& states,
                             reference::QueryLedger& ledger, std::uint32_t source_iteration) {
    Dataset ds;
    ds.examples.reserve(states.size());
    for (const auto& cs : states) {
        const sim::Action action =
            reference::query_reference(cs.snapshot, ledger, reference::QueryKind::Label);
        perception::LabelVector labels = perception::extract_labels(cs.snapshot);
        labels.s_c = action.steer;
        labels.i_b = action.brake ? 1.0 : 0.0;
        LabeledExample ex;
        ex.obs = cs.obs;
        ex.ref_action = action;
        ex.labels = labels;
        ex.source_iteration = source_iteration;
        ex.controller_tag = cs.tag;
        ex.episode_id = cs.episode_id;
        ex.step_in_episode = cs.step_in_episode;
        ds.examples.push_back(std::move(ex));
    }
    return ds;
}

namespace {

std::uint64_t example_key(std::uint32_t iter, std::uint32_t episode, std::uint32_t step) {
    return (static_cast<std::uint64_t>(iter) << 56) |
           (static_cast<std::uint64_t>(episode & 0xffffffu) << 32) |
           static_cast<std::uint64_t>(step);
}

}  // namespace

SafetyLabels make_safety_labels(const Dataset& dataset, const policies::PrimaryPolicy& primary,
                                double tau, int lookahead_steps) {
    if (lookahead_steps < 0)
        throw std::invalid_argument("make_safety_labels: lookahead must be >= 0");
    const std::size_t n = dataset.size();
    SafetyLabels out;
    out.label.assign(n, 0);
    out.valid.assign(n, 0);

    // primary steering at every example, for deviations at the target step
    std::vector<double> steer(n);
    for (std::size_t i = 0; i < n; ++i)
        steer[i] = policies::primary_act(primary, dataset.examples[i].obs).action.steer;

    std::unordered_map<std::uint64_t, std::size_t> index;
    index.reserve(n * 2);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& ex = dataset.examples[i];
        index[example_key(ex.source_iteration, ex.episode_id, ex.step_in_episode)] = i;
    }

    for (std::size_t i = 0; i < n; ++i) {
        const auto& ex = dataset.examples[i];
        const auto it = index.find(example_key(
            ex.source_iteration, ex.episode_id,
            ex.step_in_episode + static_cast<std::uint32_t>(lookahead_steps)));
        if (it == index.end()) continue;
        const std::size_t j = it->second;
        const double eps =
            policies::deviation(sim::Action(steer[j], false), dataset.examples[j].ref_action);
        const int label = policies::optimal_safety_label(eps, tau);
        out.label[i] = static_cast<std::uint8_t>(label);
        out.valid[i] = 1;
        ++out.n_valid;
        if (label == 0) ++out.n_unsafe;
    }
    return out;
}

SupervisedLossValue supervised_loss(const policies::PrimaryPolicy& policy,
                                    std::span<const LabeledExample> batch, double w_aux) {
    if (batch.empty()) throw std::invalid_argument("supervised_loss: empty batch");
    constexpr double kFloor = 1e-12;
    auto bce = [&](double p, double t) {
        p = std::clamp(p, kFloor, 1.0 - kFloor);
        return -(t * std::log(p) + (1.0 - t) * std::log(1.0 - p));
    };
    SupervisedLossValue total;
    for (const auto& ex : batch) {
        const auto input = policies::observation_input(ex.obs);
        const auto fwd = nn::forward(policy.spec, policy.params, input);
        const auto target = policies::primary_target(ex.ref_action, ex.labels);
        const auto& y = fwd.outputs;
        double composite = 0;
        const double steer_err = (y[0] - target[0]) * (y[0] - target[0]);
        composite += steer_err;            // steer, squared
        composite += bce(y[1], target[1]); // brake
        for (int h = 2; h < 7; ++h) composite += w_aux * bce(y[static_cast<std::size_t>(h)], target[static_cast<std::size_t>(h)]);
        for (int h = 7; h < 12; ++h) {
            const double d = y[static_cast<std::size_t>(h)] - target[static_cast<std::size_t>(h)];
            composite += w_aux * d * d;
        }
        total.composite += composite;
        const double brake_err = (y[1] - target[1]) * (y[1] - target[1]);
        total.control_sq += steer_err + brake_err;
    }
    total.composite /= static_cast<double>(batch.size());
    total.control_sq /= static_cast<double>(batch.size());
    return total;
}

// ---------------------------------------------------------------------------
// plan

void IterationPlan::validate() const {
    if (n_iterations < 0) throw std::invalid_argument("plan: n_iterations must be >= 0");
    if (d0_size <= 0) throw std::invalid_argument("plan: d0_size must be > 0");
    if (dsafe_size <= 0) throw std::invalid_argument("plan: dsafe_size must be > 0");
    if (static_cast<int>(iteration_sizes.size()) < n_iterations)
        throw std::invalid_argument("plan: iteration_sizes must cover n_iterations");
    for (int s : iteration_sizes)
        if (s <= 0) throw std::invalid_argument("plan: iteration sizes must be > 0");
    for (double b : beta_schedule)
        if (b < 0 || b > 1) throw std::invalid_argument("plan: beta values must be in [0, 1]");
    if (dagger_oversample < 1.0)
        throw std::invalid_argument("plan: dagger_oversample must be >= 1");
    if (tau < 0) throw std::invalid_argument("plan: tau must be >= 0");
    if (target_safe_fraction <= 0 || target_safe_fraction >= 1)
        throw std::invalid_argument("plan: target_safe_fraction must be in (0, 1)");
    if (lookahead_steps < 0) throw std::invalid_argument("plan: lookahead_steps must be >= 0");
    if (traffic_cars < 0) throw std::invalid_argument("plan: traffic_cars must be >= 0");
    if (validation_fraction <= 0 || validation_fraction >= 0.5)
        throw std::invalid_argument("plan: validation_fraction must be in (0, 0.5)");
    if (primary_hidden.empty()) throw std::invalid_argument("plan: primary_hidden empty");
    if (episode_cap < 10) throw std::invalid_argument("plan: episode_cap too small");
    train.validate();
}

double IterationPlan::beta_for(int iteration) const {
    if (beta_schedule.empty()) return 0.0;
    const std::size_t idx = static_cast<std::size_t>(
        std::min<int>(iteration - 1, static_cast<int>(beta_schedule.size()) - 1));
    return beta_schedule[idx];
}

// ---------------------------------------------------------------------------
// fitting helpers

namespace {

struct Split {
    std::vector<std::size_t> train;
    std::vector<std::size_t> valid;
};

Split split_validation(const Dataset& ds, double fraction, std::uint64_t seed) {
    std::map<std::uint32_t, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < ds.size(); ++i)
        groups[ds.examples[i].source_iteration].push_back(i);
    Rng rng(seed);
    Split split;
    for (auto& [iter, idx] : groups) {
        for (std::size_t i = idx.size(); i > 1; --i)
            std::swap(idx[i - 1], idx[rng.uniform_int(i)]);
        std::size_t n_val =
            idx.size() >= 2
                ? std::max<std::size_t>(
                      1, static_cast<std::size_t>(std::llround(fraction * static_cast<double>(idx.size()))))
                : 0;
        n_val = std::min(n_val, idx.size() - 1);
        for (std::size_t i = 0; i < idx.size(); ++i)
            (i < n_val ? split.valid : split.train).push_back(idx[i]);
    }
    std::sort(split.train.begin(), split.train.end());
    std::sort(split.valid.begin(), split.valid.end());
    return split;
}

nn::Example to_nn_example(const LabeledExample& ex) {
    return {policies::observation_input(ex.obs),
            policies::primary_target(ex.ref_action, ex.labels)};
}

struct PrimaryFit {
    policies::PrimaryPolicy policy;
    nn::TrainingHistory history;
    double control_sq_valid = 0;
};

PrimaryFit fit_primary(const Dataset& ds, const IterationPlan& plan, int iteration) {
    const Split split =
        split_validation(ds, plan.validation_fraction,
                         derive_seed(plan.seed, "valsplit-primary", static_cast<std::uint64_t>(iteration)));
    std::vector<nn::Example> train_ex, valid_ex;
    train_ex.reserve(split.train.size());
    valid_ex.reserve(split.valid.size());
    for (std::size_t i : split.train) train_ex.push_back(to_nn_example(ds.examples[i]));
    for (std::size_t i : split.valid) valid_ex.push_back(to_nn_example(ds.examples[i]));

    nn::NetSpec spec = policies::primary_net_spec(
        plan.primary_hidden, derive_seed(plan.seed, "primary-init", static_cast<std::uint64_t>(iteration)));
    nn::TrainConfig cfg = plan.train;
    cfg.shuffle_seed = derive_seed(plan.seed, "primary-shuffle", static_cast<std::uint64_t>(iteration));
    const nn::LossSpec loss = policies::primary_loss_spec(spec, plan.w_aux);

    auto fr = nn::fit(train_ex, valid_ex, spec, cfg, loss);
    PrimaryFit out;
    out.policy = {std::move(spec), std::move(fr.params)};
    out.history = std::move(fr.history);

    std::vector<LabeledExample> valid_copy;
    valid_copy.reserve(split.valid.size());
    for (std::size_t i : split.valid) valid_copy.push_back(ds.examples[i]);
    out.control_sq_valid = supervised_loss(out.policy, valid_copy, plan.w_aux).control_sq;
    return out;
}

struct SafetyFit {
    policies::SafetyPolicy policy;
    double holdout_accuracy = 0;
    double unsafe_share = 0;
};

SafetyFit fit_safety(const Dataset& safety_ds, const policies::PrimaryPolicy& primary,
                     double tau, const IterationPlan& plan, int iteration) {
    const SafetyLabels labels =
        make_safety_labels(safety_ds, primary, tau, plan.lookahead_steps);
    std::vector<nn::Example> ex;
    ex.reserve(labels.n_valid);
    for (std::size_t i = 0; i < safety_ds.size(); ++i) {
        if (!labels.valid[i]) continue;
        auto act = policies::primary_act(primary, safety_ds.examples[i].obs);
        ex.push_back({std::move(act.features), {static_cast<double>(labels.label[i])}});
    }
    if (ex.size() < 10)
        throw std::runtime_error("fit_safety: not enough valid safety examples (" +
                                 std::to_string(ex.size()) + ")");

    // deterministic holdout; doubles as the fit validation set and the
    // accuracy probe
    std::vector<std::size_t> order(ex.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(plan.seed, "safety-split", static_cast<std::uint64_t>(iteration)));
    for (std::size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[rng.uniform_int(i)]);
    std::size_t n_hold = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(ex.size()))));
    n_hold = std::min(n_hold, ex.size() - 1);
    std::vector<nn::Example> train_ex, hold_ex;
    for (std::size_t i = 0; i < order.size(); ++i)
        (i < n_hold ? hold_ex : train_ex).push_back(ex[order[i]]);

    nn::NetSpec spec = policies::safety_net_spec(
        static_cast<int>(ex.front().input.size()), plan.safety_hidden,
        derive_seed(plan.seed, "safety-init", static_cast<std::uint64_t>(iteration)));
    nn::TrainConfig cfg = plan.train;
    cfg.shuffle_seed = derive_seed(plan.seed, "safety-shuffle", static_cast<std::uint64_t>(iteration));
    const nn::LossSpec loss = {{nn::LossKind::Bce, 1.0}};
    auto fr = nn::fit(train_ex, hold_ex, spec, cfg, loss);

    SafetyFit out;
    out.policy = {std::move(spec), std::move(fr.params), tau};
    std::size_t correct = 0;
    for (const auto& h : hold_ex) {
        const auto v = policies::safety_classify(out.policy, h.input);
        const int predicted = v.safe ? 1 : 0;
        if (predicted == static_cast<int>(h.target[0])) ++correct;
    }
    out.holdout_accuracy = static_cast<double>(correct) / static_cast<double>(hold_ex.size());
    out.unsafe_share = labels.n_valid
                           ? static_cast<double>(labels.n_unsafe) / static_cast<double>(labels.n_valid)
                           : 0.0;
    return out;
}

double takeover_fraction(const std::vector<CollectedState>& raw) {
    if (raw.empty()) return 0.0;
    std::size_t ref = 0;
    for (const auto& cs : raw)
        if (cs.tag == sim::ControllerTag::Reference) ++ref;
    return static_cast<double>(ref) / static_cast<double>(raw.size());
}

std::vector<eval::CurvePoint> run_evals(int iteration, const policies::PrimaryPolicy& primary,
                                        const policies::SafetyPolicy* safety,
                                        const TrackLibrary& library, const IterationPlan& plan) {
    std::vector<eval::CurvePoint> points;
    const auto test_tracks = library.test();
    for (int cond : plan.eval_traffic) {
        eval::EvalConfig cfg;
        cfg.laps_target = plan.eval_laps;
        cfg.traffic_cars = cond;
        cfg.seed = derive_seed(plan.seed, "eval");
        cfg.threads = plan.threads;
        cfg.strategy = eval::ControllerKind::Naive;
        points.push_back({iteration, "naive", cond > 0,
                          eval::evaluate(&primary, nullptr, test_tracks, cfg)});
        if (safety != nullptr) {
            cfg.strategy = eval::ControllerKind::Safe;
            points.push_back({iteration, "safe", cond > 0,
                              eval::evaluate(&primary, safety, test_tracks, cfg)});
        }
    }
    return points;
}

std::vector<CollectedState> downselect(std::vector<CollectedState> raw, int keep,
                                       std::uint64_t seed) {
    if (static_cast<int>(raw.size()) <= keep) return raw;
    std::vector<std::size_t> order(raw.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed);
    for (std::size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[rng.uniform_int(i)]);
    order.resize(static_cast<std::size_t>(keep));
    std::sort(order.begin(), order.end());
    std::vector<CollectedState> kept;
    kept.reserve(order.size());
    for (std::size_t i : order) kept.push_back(std::move(raw[i]));
    return kept;
}

double achieved_safe_fraction(const Dataset& d0, const policies::PrimaryPolicy& primary,
                              double tau) {
    if (d0.size() == 0) return std::nan("");
    std::size_t safe = 0;
    for (const auto& ex : d0.examples) {
        const auto act = policies::primary_act(primary, ex.obs);
        if (policies::deviation(act.action, ex.ref_action) <= tau) ++safe;
    }
    return static_cast<double>(safe) / static_cast<double>(d0.size());
}

constexpr std::uint32_t kD0EpisodeBase = 0;
constexpr std::uint32_t kDsafeEpisodeBase = 500000;
constexpr std::uint32_t kIterEpisodeStride = 1000000;

}  // namespace

// ---------------------------------------------------------------------------
// regimes

SupervisedRunResult run_supervised(const IterationPlan& plan, const TrackLibrary& library) {
    plan.validate();
    reference::QueryLedger ledger;
    ledger.set_iteration(0);

    CollectParams cp;
    cp.strategy = CollectStrategy::ReferenceOnly;
    cp.n_examples = plan.d0_size;
    cp.traffic_cars = plan.traffic_cars;
    cp.stage_seed = derive_seed(plan.seed, "collect-d0");
    cp.episode_id_base = kD0EpisodeBase;
    cp.episode_cap = plan.episode_cap;
    auto raw = collect(cp, nullptr, nullptr, library.train(), ledger);
    Dataset d0 = label_with_reference(raw, ledger, 0);

    auto fit = fit_primary(d0, plan, 0);

    SupervisedRunResult result;
    result.report.regime = "supervised";
    result.report.seed = plan.seed;
    IterationReport ir;
    ir.iteration = 0;
    ir.raw_collected = static_cast<int>(raw.size());
    ir.new_examples = static_cast<int>(d0.size());
    ir.dataset_size = static_cast<int>(d0.size());
    ir.collect_takeover_fraction = takeover_fraction(raw);
    ir.queries_iter = ledger.iteration_counts(0);
    ir.queries_cum = ledger.totals();
    ir.primary_epochs = static_cast<int>(fit.history.epochs.size());
    ir.primary_best_valid = fit.history.best_valid_loss;
    ir.control_sq_valid = fit.control_sq_valid;
    if (plan.evaluate_each_iteration)
        ir.evals = run_evals(0, fit.policy, nullptr, library, plan);
    result.report.iterations.push_back(std::move(ir));
    result.report.total_queries = ledger.totals();
    result.primary = std::move(fit.policy);
    result.dataset = std::move(d0);
    return result;
}

DaggerRunResult run_dagger(const IterationPlan& plan, const TrackLibrary& library) {
    plan.validate();
    reference::QueryLedger ledger;
    ledger.set_iteration(0);

    DaggerRunResult result;
    result.report.regime = "dagger";
    result.report.seed = plan.seed;

    CollectParams cp;
    cp.strategy = CollectStrategy::ReferenceOnly;
    cp.n_examples = plan.d0_size;
    cp.traffic_cars = plan.traffic_cars;
    cp.stage_seed = derive_seed(plan.seed, "collect-d0");
    cp.episode_id_base = kD0EpisodeBase;
    cp.episode_cap = plan.episode_cap;
    auto raw0 = collect(cp, nullptr, nullptr, library.train(), ledger);
    Dataset dataset = label_with_reference(raw0, ledger, 0);

    auto fit0 = fit_primary(dataset, plan, 0);
    result.primaries.push_back(fit0.policy);

    {
        IterationReport ir;
        ir.iteration = 0;
        ir.raw_collected = static_cast<int>(raw0.size());
        ir.new_examples = static_cast<int>(dataset.size());
        ir.dataset_size = static_cast<int>(dataset.size());
        ir.collect_takeover_fraction = takeover_fraction(raw0);
        ir.queries_iter = ledger.iteration_counts(0);
        ir.queries_cum = ledger.totals();
        ir.primary_epochs = static_cast<int>(fit0.history.epochs.size());
        ir.primary_best_valid = fit0.history.best_valid_loss;
        ir.control_sq_valid = fit0.control_sq_valid;
        if (plan.evaluate_each_iteration)
            ir.evals = run_evals(0, result.primaries.back(), nullptr, library, plan);
        result.report.iterations.push_back(std::move(ir));
    }

    for (int i = 1; i <= plan.n_iterations; ++i) {
        ledger.set_iteration(i);
        const int kept_size = plan.iteration_sizes[static_cast<std::size_t>(i - 1)];
        const int raw_budget = static_cast<int>(
            std::llround(kept_size * plan.dagger_oversample));

        CollectParams ci;
        ci.strategy = CollectStrategy::Mixture;
        ci.beta = plan.beta_for(i);
        ci.n_examples = raw_budget;
        ci.traffic_cars = plan.traffic_cars;
        ci.stage_seed = derive_seed(plan.seed, "collect-iter", static_cast<std::uint64_t>(i));
        ci.episode_id_base = kIterEpisodeStride * static_cast<std::uint32_t>(i);
        ci.episode_cap = plan.episode_cap;
        auto raw = collect(ci, &result.primaries.back(), nullptr, library.train(), ledger);
        auto kept = downselect(std::move(raw), kept_size,
                               derive_seed(plan.seed, "downselect", static_cast<std::uint64_t>(i)));

        Dataset fresh = label_with_reference(kept, ledger, static_cast<std::uint32_t>(i));
        dataset.append(fresh);

        auto fit = fit_primary(dataset, plan, i);
        result.primaries.push_back(fit.policy);

        IterationReport ir;
        ir.iteration = i;
        ir.raw_collected = raw_budget;
        ir.new_examples = static_cast<int>(fresh.size());
        ir.dataset_size = static_cast<int>(dataset.size());
        ir.collect_takeover_fraction = takeover_fraction(kept);
        ir.queries_iter = ledger.iteration_counts(i);
        ir.queries_cum = ledger.totals();
        ir.primary_epochs = static_cast<int>(fit.history.epochs.size());
        ir.primary_best_valid = fit.history.best_valid_loss;
        ir.control_sq_valid = fit.control_sq_valid;
        if (plan.evaluate_each_iteration)
            ir.evals = run_evals(i, result.primaries.back(), nullptr, library, plan);
        result.report.iterations.push_back(std::move(ir));
    }
    result.report.total_queries = ledger.totals();
    result.dataset = std::move(dataset);
    return result;
}

SafeDaggerRunResult run_safedagger(const IterationPlan& plan, const TrackLibrary& library) {
    plan.validate();
    reference::QueryLedger ledger;
    ledger.set_iteration(0);

    SafeDaggerRunResult result;
    result.report.regime = "safedagger";
    result.report.seed = plan.seed;

    // line 1: D_0 with the reference policy
    CollectParams cp;
    cp.strategy = CollectStrategy::ReferenceOnly;
    cp.n_examples = plan.d0_size;
    cp.traffic_cars = plan.traffic_cars;
    cp.stage_seed = derive_seed(plan.seed, "collect-d0");
    cp.episode_id_base = kD0EpisodeBase;
    cp.episode_cap = plan.episode_cap;
    auto raw0 = collect(cp, nullptr, nullptr, library.train(), ledger);
    Dataset dataset = label_with_reference(raw0, ledger, 0);

    // line 2: D_safe with the reference policy
    CollectParams cs = cp;
    cs.n_examples = plan.dsafe_size;
    cs.stage_seed = derive_seed(plan.seed, "collect-dsafe");
    cs.episode_id_base = kDsafeEpisodeBase;
    auto raws = collect(cs, nullptr, nullptr, library.train(), ledger);
    Dataset dsafe = label_with_reference(raws, ledger, 0);

    // line 3: pi_0
    auto fit0 = fit_primary(dataset, plan, 0);
    result.primaries.push_back(fit0.policy);

    // threshold: fixed by the plan or calibrated on the initial deviations
    double tau = plan.tau;
    double achieved = std::nan("");
    if (tau <= 0) {
        std::vector<double> deviations;
        deviations.reserve(dataset.size());
        for (const auto& ex : dataset.examples) {
            const auto act = policies::primary_act(result.primaries[0], ex.obs);
            deviations.push_back(policies::deviation(act.action, ex.ref_action));
        }
        const auto calib = policies::calibrate_tau(std::move(deviations), plan.target_safe_fraction);
        tau = calib.tau;
        achieved = calib.safe_fraction;
    } else {
        achieved = achieved_safe_fraction(dataset, result.primaries[0], tau);
    }

    // line 4: safety_0 on D_safe u D_0
    Dataset safety_train = dsafe;
    safety_train.append(dataset);
    auto sfit0 = fit_safety(safety_train, result.primaries[0], tau, plan, 0);
    result.safeties.push_back(sfit0.policy);

    {
        IterationReport ir;
        ir.iteration = 0;
        ir.raw_collected = static_cast<int>(raw0.size() + raws.size());
        ir.new_examples = static_cast<int>(dataset.size() + dsafe.size());
        ir.dataset_size = static_cast<int>(dataset.size());
        ir.collect_takeover_fraction = 1.0;  // reference-driven bootstrap
        ir.queries_iter = ledger.iteration_counts(0);
        ir.queries_cum = ledger.totals();
        ir.tau = tau;
        ir.achieved_safe_fraction = achieved;
        ir.safety_holdout_accuracy = sfit0.holdout_accuracy;
        ir.safety_unsafe_share = sfit0.unsafe_share;
        ir.primary_epochs = static_cast<int>(fit0.history.epochs.size());
        ir.primary_best_valid = fit0.history.best_valid_loss;
        ir.control_sq_valid = fit0.control_sq_valid;
        if (plan.evaluate_each_iteration)
            ir.evals = run_evals(0, result.primaries.back(), &result.safeties.back(), library, plan);
        result.report.iterations.push_back(std::move(ir));
    }

    for (int i = 1; i <= plan.n_iterations; ++i) {
        ledger.set_iteration(i);
        const int raw_size = plan.iteration_sizes[static_cast<std::size_t>(i - 1)];

        // line 6: collect with the safe strategy
        CollectParams ci;
        ci.strategy = CollectStrategy::Safe;
        ci.n_examples = raw_size;
        ci.traffic_cars = plan.traffic_cars;
        ci.stage_seed = derive_seed(plan.seed, "collect-iter", static_cast<std::uint64_t>(i));
        ci.episode_id_base = kIterEpisodeStride * static_cast<std::uint32_t>(i);
        ci.episode_cap = plan.episode_cap;
        ci.safety_bypass = plan.reduction_mode;
        auto raw = collect(ci, &result.primaries.back(), &result.safeties.back(),
                           library.train(), ledger);

        const double collect_takeover = takeover_fraction(raw);

        // line 7: subset selection (skipped in the reduction mode, which keeps all)
        std::vector<CollectedState> selected;
        double selection_fraction = 1.0;
        if (plan.reduction_mode) {
            selected = std::move(raw);
        } else {
            auto sub = subset_select(raw, result.primaries.back(), result.safeties.back());
            selected = std::move(sub.selected);
            selection_fraction = sub.selection_fraction;
        }

        // line 8: aggregate
        Dataset fresh = label_with_reference(selected, ledger, static_cast<std::uint32_t>(i));
        dataset.append(fresh);

        // line 9: refit the primary from scratch
        auto fit = fit_primary(dataset, plan, i);
        result.primaries.push_back(fit.policy);

        // line 10: refit the safety policy against the new primary
        Dataset strain = dsafe;
        strain.append(dataset);
        auto sfit = fit_safety(strain, result.primaries.back(), tau, plan, i);
        result.safeties.push_back(sfit.policy);

        IterationReport ir;
        ir.iteration = i;
        ir.raw_collected = raw_size;
        ir.new_examples = static_cast<int>(fresh.size());
        ir.dataset_size = static_cast<int>(dataset.size());
        ir.collect_takeover_fraction = collect_takeover;
        ir.selection_fraction = selection_fraction;
        ir.queries_iter = ledger.iteration_counts(i);
        ir.queries_cum = ledger.totals();
        ir.tau = tau;
        ir.achieved_safe_fraction = achieved;
        ir.safety_holdout_accuracy = sfit.holdout_accuracy;
        ir.safety_unsafe_share = sfit.unsafe_share;
        ir.primary_epochs = static_cast<int>(fit.history.epochs.size());
        ir.primary_best_valid = fit.history.best_valid_loss;
        ir.control_sq_valid = fit.control_sq_valid;
        if (plan.evaluate_each_iteration)
            ir.evals = run_evals(i, result.primaries.back(), &result.safeties.back(), library, plan);
        result.report.iterations.push_back(std::move(ir));
    }

    result.report.total_queries = ledger.totals();
    result.dataset = std::move(dataset);
    result.dsafe = std::move(dsafe);
    return result;
}

// ---------------------------------------------------------------------------
// report files

namespace {

std::string fmt(double v) {
    if (std::isnan(v)) return "nan";
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string eval_col_prefix(const eval::CurvePoint& p) {
    return p.strategy + std::string(p.traffic ? "_on" : "_off");
}

}  // namespace

void write_run_report_csv(const RunReport& report, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_run_report_csv: cannot open " + path.string());
    std::ostringstream header;
    header << "iteration,raw_collected,new_examples,dataset_size,collect_takeover_fraction,"
              "selection_fraction,label_queries_iter,takeover_queries_iter,label_queries_cum,"
              "takeover_queries_cum,tau,achieved_safe_fraction,safety_holdout_accuracy,"
              "safety_unsafe_share,primary_epochs,primary_best_valid,control_sq_valid";
    if (!report.iterations.empty()) {
        for (const auto& p : report.iterations.front().evals) {
            const std::string pre = eval_col_prefix(p);
            header << ',' << pre << "_laps," << pre << "_damage_per_lap," << pre << "_mse,"
                   << pre << "_takeover";
        }
    }
    out << header.str() << '\n';
    for (const auto& ir : report.iterations) {
        out << ir.iteration << ',' << ir.raw_collected << ',' << ir.new_examples << ','
            << ir.dataset_size << ',' << fmt(ir.collect_takeover_fraction) << ','
            << fmt(ir.selection_fraction) << ',' << ir.queries_iter.label << ','
            << ir.queries_iter.takeover << ',' << ir.queries_cum.label << ','
            << ir.queries_cum.takeover << ',' << fmt(ir.tau) << ','
            << fmt(ir.achieved_safe_fraction) << ',' << fmt(ir.safety_holdout_accuracy) << ','
            << fmt(ir.safety_unsafe_share) << ',' << ir.primary_epochs << ','
            << fmt(ir.primary_best_valid) << ',' << fmt(ir.control_sq_valid);
        for (const auto& p : ir.evals) {
            out << ',' << fmt(p.report.avg_laps) << ',' << fmt(p.report.damage_per_lap) << ','
                << (p.report.steering_mse ? fmt(*p.report.steering_mse) : std::string("nan"))
                << ',' << fmt(p.report.takeover_fraction);
        }
        out << '\n';
    }
}

void write_run_summary_text(const RunReport& report, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_run_summary_text: cannot open " + path.string());
    out << "regime: " << report.regime << "\n";
    out << "seed: " << report.seed << "\n";
    out << "total label queries: " << report.total_queries.label << "\n";
    out << "total takeover queries: " << report.total_queries.takeover << "\n\n";
    for (const auto& ir : report.iterations) {
        out << "iteration " << ir.iteration << ":\n";
        out << "  examples: +" << ir.new_examples << " (dataset " << ir.dataset_size
            << ", raw " << ir.raw_collected << ")\n";
        out << "  label queries: " << ir.queries_iter.label
            << " (cumulative " << ir.queries_cum.label << ")\n";
        out << "  takeover queries: " << ir.queries_iter.takeover
            << " (cumulative " << ir.queries_cum.takeover << ")\n";
        out << "  collection takeover fraction: " << fmt(ir.collect_takeover_fraction) << "\n";
        if (report.regime == "safedagger") {
            out << "  selection fraction (unsafe): " << fmt(ir.selection_fraction) << "\n";
            out << "  tau: " << fmt(ir.tau)
                << " (safe fraction at calibration: " << fmt(ir.achieved_safe_fraction) << ")\n";
            out << "  safety holdout accuracy: " << fmt(ir.safety_holdout_accuracy)
                << ", unsafe share: " << fmt(ir.safety_unsafe_share) << "\n";
        }
        out << "  primary: " << ir.primary_epochs
            << " epochs, best validation loss " << fmt(ir.primary_best_valid)
            << ", control sq error " << fmt(ir.control_sq_valid) << "\n";
        for (const auto& p : ir.evals) {
            out << "  eval " << p.strategy << (p.traffic ? " (traffic)" : " (clear)") << ": laps "
                << fmt(p.report.avg_laps) << ", damage/lap " << fmt(p.report.damage_per_lap)
                << ", steering mse "
                << (p.report.steering_mse ? fmt(*p.report.steering_mse) : std::string("n/a"))
                << ", takeover " << fmt(p.report.takeover_fraction) << "\n";
        }
        out << "\n";
    }
}

}  // namespace drivelab::imitation
