#include "drivelab/policy.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace drivelab::policies {

namespace {

// steer, brake, then the ten state labels in label-vector order
const char* kHeadNames[12] = {"steer", "brake", "i_ll", "i_lr", "i_cl", "i_cm",
                              "i_cr",  "d_cl",  "d_cm", "d_cr", "p_c",  "a_c"};

}  // namespace

nn::NetSpec primary_net_spec(std::vector<int> hidden, std::uint64_t init_seed) {
    nn::NetSpec spec;
    spec.input_size = perception::kObsSize;
    spec.hidden = std::move(hidden);
    spec.init_seed = init_seed;
    auto head = [](const char* name, nn::HeadKind kind) {
        return nn::Head{name, kind, 1};
    };
    spec.heads = {
        head("steer", nn::HeadKind::Tanh),   head("brake", nn::HeadKind::Sigmoid),
        head("i_ll", nn::HeadKind::Sigmoid), head("i_lr", nn::HeadKind::Sigmoid),
        head("i_cl", nn::HeadKind::Sigmoid), head("i_cm", nn::HeadKind::Sigmoid),
        head("i_cr", nn::HeadKind::Sigmoid), head("d_cl", nn::HeadKind::Linear),
        head("d_cm", nn::HeadKind::Linear),  head("d_cr", nn::HeadKind::Linear),
        head("p_c", nn::HeadKind::Linear),   head("a_c", nn::HeadKind::Linear),
    };
    return spec;
}

nn::NetSpec safety_net_spec(int feature_size, std::vector<int> hidden, std::uint64_t init_seed) {
    nn::NetSpec spec;
    spec.input_size = feature_size;
    spec.hidden = std::move(hidden);
    spec.init_seed = init_seed;
    spec.heads = {nn::Head{"safe", nn::HeadKind::Sigmoid, 1}};
    return spec;
}

nn::LossSpec primary_loss_spec(const nn::NetSpec& spec, double w_aux) {
    nn::LossSpec loss(spec.heads.size());
    for (std::size_t h = 0; h < spec.heads.size(); ++h) {
        const auto& head = spec.heads[h];
        nn::LossTerm term;
        if (head.kind == nn::HeadKind::Sigmoid) term.kind = nn::LossKind::Bce;
        else term.kind = nn::LossKind::Squared;
        const bool control = head.name == "steer" || head.name == "brake";
        term.weight = control ? 1.0 : w_aux;
        loss[h] = term;
    }
    return loss;
}

std::vector<double> observation_input(const perception::Observation& obs) {
    std::vector<double> x(perception::kObsSize);
    for (int i = 0; i < perception::kObsSize; ++i)
        x[static_cast<std::size_t>(i)] = obs.grid[static_cast<std::size_t>(i)];
    return x;
}

std::vector<double> primary_target(const sim::Action& ref_action,
                                   const perception::LabelVector& labels) {
    const auto a = labels.to_array();
    // label array order: i_ll,i_lr,i_cl,i_cm,i_cr,d_cl,d_cm,d_cr,p_c,a_c,s_c,i_b
    return {ref_action.steer, ref_action.brake ? 1.0 : 0.0,
            a[0], a[1], a[2], a[3], a[4], a[5], a[6], a[7], a[8], a[9]};
}

PrimaryActResult primary_act(const PrimaryPolicy& policy, const perception::Observation& obs) {
    const auto input = observation_input(obs);
    auto fwd = nn::forward(policy.spec, policy.params, input);
    PrimaryActResult r;
    r.action = sim::Action(fwd.outputs[0], fwd.outputs[1] >= 0.5);
    perception::LabelVector aux;
    aux.s_c = fwd.outputs[0];
    aux.i_b = fwd.outputs[1];
    aux.i_ll = fwd.outputs[2];
    aux.i_lr = fwd.outputs[3];
    aux.i_cl = fwd.outputs[4];
    aux.i_cm = fwd.outputs[5];
    aux.i_cr = fwd.outputs[6];
    aux.d_cl = fwd.outputs[7];
    aux.d_cm = fwd.outputs[8];
    aux.d_cr = fwd.outputs[9];
    aux.p_c = fwd.outputs[10];
    aux.a_c = fwd.outputs[11];
    r.aux = aux;
    if (fwd.hidden.empty()) throw std::logic_error("primary net has no hidden layer");
    r.features = std::move(fwd.hidden.back());
    return r;
}

SafetyVerdict safety_classify(const SafetyPolicy& policy, std::span<const double> features) {
    auto fwd = nn::forward(policy.spec, policy.params, features);
    SafetyVerdict v;
    v.p_safe = fwd.outputs[0];
    v.safe = v.p_safe >= 0.5;
    return v;
}

double deviation(const sim::Action& primary_action, const sim::Action& reference_action) {
    const double d = primary_action.steer - reference_action.steer;
    return d * d;
}

int optimal_safety_label(double epsilon, double tau) {
    if (epsilon < 0) throw std::invalid_argument("optimal_safety_label: epsilon must be >= 0");
    if (tau <= 0) throw std::invalid_argument("optimal_safety_label: tau must be > 0");
    return epsilon > tau ? 0 : 1;
}

double safety_loss(const SafetyPolicy& policy, std::span<const nn::Example> batch) {
    const nn::LossSpec loss = {{nn::LossKind::Bce, 1.0}};
    return nn::batch_loss(policy.spec, policy.params, batch, loss);
}

TauCalibration calibrate_tau(std::vector<double> deviations, double target_safe_fraction) {
    if (deviations.empty()) throw std::invalid_argument("calibrate_tau: empty deviation list");
    if (target_safe_fraction <= 0 || target_safe_fraction >= 1)
        throw std::invalid_argument("calibrate_tau: target must be in (0, 1)");
    std::sort(deviations.begin(), deviations.end());
    const double n = static_cast<double>(deviations.size());
    TauCalibration result;
    for (std::size_t i = 0; i < deviations.size(); ++i) {
        // advance to the last duplicate so the fraction counts all ties
        if (i + 1 < deviations.size() && deviations[i + 1] == deviations[i]) continue;
        const double fraction = static_cast<double>(i + 1) / n;
        if (fraction >= target_safe_fraction) {
            result.tau = deviations[i];
            result.safe_fraction = fraction;
            return result;
        }
    }
    result.tau = deviations.back();
    result.safe_fraction = 1.0;
    return result;
}

StrategyDecision safe_strategy_act(const PrimaryPolicy& primary, const SafetyPolicy& safety,
                                   const perception::Observation& obs,
                                   const sim::WorldState& state,
                                   reference::QueryLedger& ledger) {
    auto act = primary_act(primary, obs);
    const auto verdict = safety_classify(safety, act.features);
    StrategyDecision d;
    d.p_safe = verdict.p_safe;
    if (verdict.safe) {
        d.action = act.action;
        d.tag = sim::ControllerTag::Primary;
    } else {
        ledger.record(reference::QueryKind::TakeoverDrive);
        const auto rd = reference::reference_decide(state, reference::kEgoIndex);
        d.action = rd.action;
        d.tag = sim::ControllerTag::Reference;
        d.latched_lane = rd.target_lane;
    }
    return d;
}

StrategyDecision mixture_act(const PrimaryPolicy& primary, double beta,
                             const perception::Observation& obs, const sim::WorldState& state,
                             Rng& rng, reference::QueryLedger& ledger) {
    if (beta < 0 || beta > 1) throw std::invalid_argument("mixture_act: beta must be in [0, 1]");
    StrategyDecision d;
    if (rng.bernoulli(beta)) {
        ledger.record(reference::QueryKind::TakeoverDrive);
        const auto rd = reference::reference_decide(state, reference::kEgoIndex);
        d.action = rd.action;
        d.tag = sim::ControllerTag::Reference;
        d.latched_lane = rd.target_lane;
    } else {
        d.action = primary_act(primary, obs).action;
        d.tag = sim::ControllerTag::Primary;
    }
    return d;
}

void save_primary(const std::filesystem::path& path, const PrimaryPolicy& policy) {
    nn::save_model(path, policy.spec, policy.params, {{"kind", "primary"}});
}

PrimaryPolicy load_primary(const std::filesystem::path& path) {
    auto m = nn::load_model(path);
    if (auto it = m.meta.find("kind"); it != m.meta.end() && it->second != "primary")
        throw std::runtime_error("load_primary: " + path.string() + " is a " + it->second +
                                 " model");
    return {std::move(m.spec), std::move(m.params)};
}

void save_safety(const std::filesystem::path& path, const SafetyPolicy& policy) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", policy.tau);
    nn::save_model(path, policy.spec, policy.params, {{"kind", "safety"}, {"tau", buf}});
}

SafetyPolicy load_safety(const std::filesystem::path& path) {
    auto m = nn::load_model(path);
    if (auto it = m.meta.find("kind"); it == m.meta.end() || it->second != "safety")
        throw std::runtime_error("load_safety: " + path.string() + " is not a safety model");
    SafetyPolicy p{std::move(m.spec), std::move(m.params), 0.0025};
    if (auto it = m.meta.find("tau"); it != m.meta.end()) p.tau = std::stod(it->second);
    return p;
}

}  // namespace drivelab::policies
