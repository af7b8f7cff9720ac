#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "drivelab/imitation.hpp"

using namespace drivelab;
using namespace drivelab::imitation;

namespace {

const TrackLibrary& library() {
    static TrackLibrary lib = TrackLibrary::load(DRIVELAB_TRACKS_DIR);
    return lib;
}

IterationPlan mini_plan(std::uint64_t seed) {
    IterationPlan plan;
    plan.seed = seed;
    plan.n_iterations = 2;
    plan.d0_size = 200;
    plan.dsafe_size = 80;
    plan.iteration_sizes = {120, 80};
    plan.traffic_cars = 4;
    plan.primary_hidden = {32, 16};
    plan.safety_hidden = {8, 8};
    plan.train.max_epochs = 6;
    plan.evaluate_each_iteration = false;
    plan.episode_cap = 400;
    return plan;
}

policies::PrimaryPolicy tiny_primary(std::uint64_t seed) {
    policies::PrimaryPolicy p;
    p.spec = policies::primary_net_spec({32, 16}, seed);
    p.params = nn::init_params(p.spec);
    return p;
}

policies::SafetyPolicy fixed_safety(int features, double p_safe) {
    policies::SafetyPolicy s;
    s.spec = policies::safety_net_spec(features, {4}, 1);
    s.params.values.assign(s.spec.param_count(), 0.0);
    const nn::ParamLayout layout(s.spec);
    s.params.values[layout.bias_index(layout.layer_count() - 1, 0)] =
        std::log(p_safe / (1.0 - p_safe));
    return s;
}

}  // namespace

TEST_CASE("supervised_loss: exact-prediction zero, steer term, batch linearity") {
    // rig a net whose outputs are achievable targets: saturate the sigmoids,
    // match the linear biases, and read the tanh output back as its target
    policies::PrimaryPolicy p = tiny_primary(3);
    p.params.values.assign(p.spec.param_count(), 0.0);
    const nn::ParamLayout layout(p.spec);
    const int last = layout.layer_count() - 1;
    p.params.values[layout.bias_index(last, 1)] = 60.0;  // brake head -> 1
    for (int h = 2; h < 7; ++h) p.params.values[layout.bias_index(last, h)] = -60.0;  // -> 0
    p.params.values[layout.bias_index(last, 7)] = 0.25;  // d_cl linear

    perception::Observation obs{};
    LabeledExample ex;
    ex.obs = obs;
    const auto act = policies::primary_act(p, obs);
    ex.ref_action = sim::Action(act.action.steer, true);
    perception::LabelVector lv;
    lv.i_ll = lv.i_lr = lv.i_cl = lv.i_cm = lv.i_cr = 0.0;
    lv.d_cl = 0.25;
    lv.d_cm = 0.0;
    lv.d_cr = 0.0;
    lv.p_c = 0.0;
    lv.a_c = 0.0;
    lv.s_c = act.action.steer;
    lv.i_b = 1.0;
    ex.labels = lv;

    const auto exact = supervised_loss(p, std::vector<LabeledExample>{ex}, 0.5);
    CHECK(exact.composite == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(exact.control_sq == doctest::Approx(0.0).epsilon(1e-9));

    // steer off by 0.1: the steer term contributes exactly 0.01
    LabeledExample off = ex;
    off.ref_action = sim::Action(act.action.steer - 0.1, true);
    off.labels.s_c = off.ref_action.steer;
    const auto shifted = supervised_loss(p, std::vector<LabeledExample>{off}, 0.5);
    CHECK(shifted.composite - exact.composite == doctest::Approx(0.01).epsilon(1e-9));

    // batch loss is the mean of the single-example losses
    std::vector<LabeledExample> batch = {ex, off};
    const auto both = supervised_loss(p, batch, 0.5);
    CHECK(both.composite ==
          doctest::Approx(0.5 * (exact.composite + shifted.composite)).epsilon(1e-12));
}

TEST_CASE("supervised_loss composite equals the nn training objective") {
    const auto p = tiny_primary(9);
    reference::QueryLedger ledger;
    CollectParams cp;
    cp.strategy = CollectStrategy::ReferenceOnly;
    cp.n_examples = 40;
    cp.traffic_cars = 3;
    cp.stage_seed = 12;
    cp.episode_cap = 200;
    const auto raw = collect(cp, nullptr, nullptr, library().train(), ledger);
    const Dataset ds = label_with_reference(raw, ledger, 0);
    std::vector<nn::Example> nn_batch;
    for (const auto& ex : ds.examples)
        nn_batch.push_back({policies::observation_input(ex.obs),
                            policies::primary_target(ex.ref_action, ex.labels)});
    const double via_nn =
        nn::batch_loss(p.spec, p.params, nn_batch, policies::primary_loss_spec(p.spec, 0.5));
    const double via_sup = supervised_loss(p, ds.examples, 0.5).composite;
    CHECK(via_sup == doctest::Approx(via_nn).epsilon(1e-12));
}

TEST_CASE("collect: reference-only gathers the exact count, all reference-tagged") {
    reference::QueryLedger ledger;
    CollectParams cp;
    cp.strategy = CollectStrategy::ReferenceOnly;
    cp.n_examples = 100;
    cp.traffic_cars = 4;
    cp.stage_seed = 21;
    cp.episode_cap = 300;
    const auto raw = collect(cp, nullptr, nullptr, library().train(), ledger);
    REQUIRE(raw.size() == 100);
    for (const auto& cs : raw) CHECK(cs.tag == sim::ControllerTag::Reference);
    CHECK(ledger.totals().total() == 0);  // driving alone queries nothing

    const Dataset ds = label_with_reference(raw, ledger, 0);
    CHECK(ds.size() == 100);
    CHECK(ledger.totals().label == 100);  // one query per labeled state
}

TEST_CASE("collect twice with the same seeds is identical") {
    auto run_once = [&] {
        reference::QueryLedger ledger;
        CollectParams cp;
        cp.strategy = CollectStrategy::ReferenceOnly;
        cp.n_examples = 60;
        cp.traffic_cars = 5;
        cp.stage_seed = 33;
        cp.episode_cap = 150;
        const auto raw = collect(cp, nullptr, nullptr, library().train(), ledger);
        return label_with_reference(raw, ledger, 0);
    };
    const Dataset a = run_once();
    const Dataset b = run_once();
    CHECK(canonical_records(a) == canonical_records(b));
}

TEST_CASE("safe collection with an always-unsafe gate degenerates to reference driving") {
    const auto primary = tiny_primary(7);
    const auto safety = fixed_safety(16, 0.01);
    reference::QueryLedger ledger;
    CollectParams cp;
    cp.strategy = CollectStrategy::Safe;
    cp.n_examples = 50;
    cp.traffic_cars = 0;
    cp.stage_seed = 44;
    cp.episode_cap = 200;
    const auto raw = collect(cp, &primary, &safety, library().train(), ledger);
    for (const auto& cs : raw) CHECK(cs.tag == sim::ControllerTag::Reference);
    CHECK(ledger.totals().takeover == 50);
}

TEST_CASE("subset_select keeps exactly the unsafe-classified states") {
    const auto primary = tiny_primary(13);
    reference::QueryLedger ledger;
    CollectParams cp;
    cp.strategy = CollectStrategy::NaivePrimary;
    cp.n_examples = 60;
    cp.traffic_cars = 3;
    cp.stage_seed = 50;
    cp.episode_cap = 100;
    const auto raw = collect(cp, &primary, nullptr, library().train(), ledger);

    SUBCASE("always safe selects nothing") {
        const auto sub = subset_select(raw, primary, fixed_safety(16, 0.99));
        CHECK(sub.selected.empty());
        CHECK(sub.selection_fraction == 0.0);
    }
    SUBCASE("always unsafe selects everything") {
        const auto sub = subset_select(raw, primary, fixed_safety(16, 0.01));
        CHECK(sub.selected.size() == raw.size());
        CHECK(sub.selection_fraction == 1.0);
    }
    SUBCASE("a trained-shape classifier matches per-state enumeration") {
        policies::SafetyPolicy safety;
        safety.spec = policies::safety_net_spec(16, {8}, 99);
        safety.params = nn::init_params(safety.spec);
        const auto sub = subset_select(raw, primary, safety);
        std::size_t expected = 0;
        for (const auto& cs : raw) {
            const auto act = policies::primary_act(primary, cs.obs);
            if (!policies::safety_classify(safety, act.features).safe) ++expected;
        }
        CHECK(sub.selected.size() == expected);
    }
}

TEST_CASE("label_with_reference: accounting and label invariants") {
    reference::QueryLedger ledger;
    CHECK(label_with_reference({}, ledger, 0).size() == 0);
    CHECK(ledger.totals().label == 0);

    CollectParams cp;
    cp.strategy = CollectStrategy::ReferenceOnly;
    cp.n_examples = 80;
    cp.traffic_cars = 6;
    cp.stage_seed = 60;
    cp.episode_cap = 200;
    const auto raw = collect(cp, nullptr, nullptr, library().train(), ledger);
    const Dataset ds = label_with_reference(raw, ledger, 2);
    CHECK(ledger.totals().label == 80);
    for (const auto& ex : ds.examples) {
        CHECK(ex.source_iteration == 2);
        CHECK(std::abs(ex.ref_action.steer) <= 1.0);
        CHECK(ex.labels.s_c == ex.ref_action.steer);
        CHECK(ex.labels.i_b == (ex.ref_action.brake ? 1.0 : 0.0));
        CHECK((ex.labels.d_cm < 1.0) == (ex.labels.i_cm == 1.0));
        if (ex.labels.i_ll == 0.0) CHECK(ex.labels.i_cl == 0.0);
        if (ex.labels.i_lr == 0.0) CHECK(ex.labels.i_cr == 0.0);
    }
}

TEST_CASE("make_safety_labels: k = 0 degenerate cases") {
    const auto primary = tiny_primary(21);
    reference::QueryLedger ledger;
    CollectParams cp;
    cp.strategy = CollectStrategy::ReferenceOnly;
    cp.n_examples = 50;
    cp.traffic_cars = 2;
    cp.stage_seed = 70;
    cp.episode_cap = 200;
    const auto raw = collect(cp, nullptr, nullptr, library().train(), ledger);
    Dataset ds = label_with_reference(raw, ledger, 0);

    SUBCASE("primary equal to the reference labels everything safe") {
        Dataset matched = ds;
        for (auto& ex : matched.examples) {
            const double s = policies::primary_act(primary, ex.obs).action.steer;
            ex.ref_action = sim::Action(s, ex.ref_action.brake);
            ex.labels.s_c = s;
        }
        const auto labels = make_safety_labels(matched, primary, 0.0025, 0);
        CHECK(labels.n_valid == matched.size());
        CHECK(labels.n_unsafe == 0);
    }
    SUBCASE("a threshold below every deviation labels everything unsafe") {
        double min_dev = 1e9;
        for (const auto& ex : ds.examples) {
            const auto act = policies::primary_act(primary, ex.obs);
            min_dev = std::min(min_dev, policies::deviation(act.action, ex.ref_action));
        }
        REQUIRE(min_dev > 0);
        const auto labels = make_safety_labels(ds, primary, min_dev * 0.5, 0);
        CHECK(labels.n_valid == ds.size());
        CHECK(labels.n_unsafe == ds.size());
    }
}

TEST_CASE("make_safety_labels with lookahead drops tail states and keeps both classes") {
    const auto primary = tiny_primary(22);
    reference::QueryLedger ledger;
    CollectParams cp;
    cp.strategy = CollectStrategy::ReferenceOnly;
    cp.n_examples = 300;
    cp.traffic_cars = 6;
    cp.stage_seed = 80;
    cp.episode_cap = 120;
    const auto raw = collect(cp, nullptr, nullptr, library().train(), ledger);
    const Dataset ds = label_with_reference(raw, ledger, 0);

    const int k = 30;  // one second at 30 Hz
    // independent count of states whose episode successor at t + k exists
    std::set<std::pair<std::uint32_t, std::uint32_t>> present;
    for (const auto& ex : ds.examples) present.insert({ex.episode_id, ex.step_in_episode});
    std::size_t expected_valid = 0;
    for (const auto& ex : ds.examples)
        if (present.count({ex.episode_id, ex.step_in_episode + k})) ++expected_valid;
    REQUIRE(expected_valid > 0);
    REQUIRE(expected_valid < ds.size());

    // median-deviation threshold guarantees both classes among valid states
    std::vector<double> devs;
    for (const auto& ex : ds.examples) {
        const auto act = policies::primary_act(primary, ex.obs);
        devs.push_back(policies::deviation(act.action, ex.ref_action));
    }
    std::sort(devs.begin(), devs.end());
    const double tau = devs[devs.size() / 2];

    const auto labels = make_safety_labels(ds, primary, tau, k);
    CHECK(labels.n_valid == expected_valid);
    CHECK(labels.n_unsafe > 0);
    CHECK(labels.n_unsafe < labels.n_valid);
}

TEST_CASE("run_supervised: learns steering, audits queries, reruns identically") {
    IterationPlan plan = mini_plan(1001);
    plan.d0_size = 400;
    plan.train.max_epochs = 12;
    auto r = run_supervised(plan, library());

    CHECK(r.report.regime == "supervised");
    REQUIRE(r.report.iterations.size() == 1);
    // one label query per collected example, train + validation
    CHECK(r.report.total_queries.label == static_cast<std::uint64_t>(plan.d0_size));
    CHECK(r.report.total_queries.takeover == 0);
    CHECK(r.dataset.size() == static_cast<std::size_t>(plan.d0_size));

    // steering MSE on a held-out reference-collected set
    reference::QueryLedger ledger;
    CollectParams cp;
    cp.strategy = CollectStrategy::ReferenceOnly;
    cp.n_examples = 200;
    cp.traffic_cars = plan.traffic_cars;
    cp.stage_seed = derive_seed(9009, "heldout");
    cp.episode_cap = 300;
    const auto held = collect(cp, nullptr, nullptr, library().train(), ledger);
    const Dataset held_ds = label_with_reference(held, ledger, 0);
    double mse = 0;
    for (const auto& ex : held_ds.examples) {
        const auto act = policies::primary_act(r.primary, ex.obs);
        const double d = act.action.steer - ex.ref_action.steer;
        mse += d * d;
    }
    mse /= static_cast<double>(held_ds.size());
    CHECK(mse < 0.01);

    // byte-identical rerun
    auto r2 = run_supervised(plan, library());
    CHECK(r2.primary.params.values == r.primary.params.values);
    const auto dir = std::filesystem::temp_directory_path();
    write_run_report_csv(r.report, dir / "dl_rep_a.csv");
    write_run_report_csv(r2.report, dir / "dl_rep_b.csv");
    std::ifstream fa(dir / "dl_rep_a.csv"), fb(dir / "dl_rep_b.csv");
    const std::string ba((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
    const std::string bb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
    CHECK(ba == bb);
    std::filesystem::remove(dir / "dl_rep_a.csv");
    std::filesystem::remove(dir / "dl_rep_b.csv");
}

TEST_CASE("run_dagger: cost identity and pure-primary collection after iteration 0") {
    IterationPlan plan = mini_plan(1002);
    auto r = run_dagger(plan, library());

    REQUIRE(r.report.iterations.size() == 3);
    const std::uint64_t expected =
        static_cast<std::uint64_t>(plan.d0_size + plan.iteration_sizes[0] + plan.iteration_sizes[1]);
    CHECK(r.report.total_queries.label == expected);
    CHECK(r.dataset.size() == static_cast<std::size_t>(expected));
    CHECK(r.primaries.size() == 3);

    // beta defaults to 0 after the bootstrap: primary-tagged collections
    for (const auto& ex : r.dataset.examples)
        if (ex.source_iteration >= 1) CHECK(ex.controller_tag == sim::ControllerTag::Primary);
    CHECK(r.report.iterations[1].collect_takeover_fraction == 0.0);
    CHECK(r.report.total_queries.takeover == 0);

    // aggregation is monotone
    CHECK(r.report.iterations[1].dataset_size > r.report.iterations[0].dataset_size);
    CHECK(r.report.iterations[2].dataset_size > r.report.iterations[1].dataset_size);
}

TEST_CASE("run_safedagger: line-faithful bookkeeping and query audit") {
    IterationPlan plan = mini_plan(1003);
    auto r = run_safedagger(plan, library());

    REQUIRE(r.report.iterations.size() == 3);
    CHECK(r.primaries.size() == 3);
    CHECK(r.safeties.size() == 3);
    CHECK(r.dsafe.size() == static_cast<std::size_t>(plan.dsafe_size));

    // cost identity: bootstrap sets plus the selected subsets
    std::uint64_t expected = static_cast<std::uint64_t>(plan.d0_size + plan.dsafe_size);
    for (std::size_t i = 1; i < r.report.iterations.size(); ++i)
        expected += static_cast<std::uint64_t>(r.report.iterations[i].new_examples);
    CHECK(r.report.total_queries.label == expected);

    // selected subsets are never larger than the raw collections
    for (std::size_t i = 1; i < r.report.iterations.size(); ++i) {
        const auto& ir = r.report.iterations[i];
        CHECK(ir.new_examples <= ir.raw_collected);
        CHECK(ir.selection_fraction ==
              doctest::Approx(static_cast<double>(ir.new_examples) / ir.raw_collected));
    }

    // tau fixed across iterations, reported with its calibration fraction
    const double tau = r.report.iterations[0].tau;
    CHECK(tau > 0);
    for (const auto& ir : r.report.iterations) CHECK(ir.tau == tau);
    CHECK(r.safeties.back().tau == tau);

    // the safety training refresh tracks the current primary: classifying
    // with iteration i's safety net uses features from iteration i's primary
    CHECK(std::isfinite(r.report.iterations.back().safety_holdout_accuracy));
}

TEST_CASE("reduction mode reproduces dagger with beta 0 exactly") {
    IterationPlan plan = mini_plan(1004);
    plan.n_iterations = 2;

    IterationPlan reduction = plan;
    reduction.reduction_mode = true;

    auto dag = run_dagger(plan, library());
    auto red = run_safedagger(reduction, library());

    CHECK(canonical_records(dag.dataset) == canonical_records(red.dataset));
    CHECK(dag.primaries.back().params.values == red.primaries.back().params.values);
}

TEST_CASE("safedagger label cost is below a matched dagger run when selection is partial") {
    IterationPlan plan = mini_plan(1005);
    auto dag = run_dagger(plan, library());
    auto safe = run_safedagger(plan, library());
    bool any_partial = false;
    for (std::size_t i = 1; i < safe.report.iterations.size(); ++i)
        if (safe.report.iterations[i].selection_fraction < 1.0) any_partial = true;
    const auto dagger_cost = dag.report.total_queries.label;
    const auto safe_cost = safe.report.total_queries.label;
    if (any_partial)
        CHECK(safe_cost < dagger_cost + static_cast<std::uint64_t>(plan.dsafe_size));
    // takeover accounting matches the reference-tagged collection share
    for (std::size_t i = 1; i < safe.report.iterations.size(); ++i) {
        const auto& ir = safe.report.iterations[i];
        CHECK(ir.queries_iter.takeover ==
              static_cast<std::uint64_t>(std::llround(ir.collect_takeover_fraction *
                                                      ir.raw_collected)));
    }
}
