#pragma once

#include <cstdint>
#include <vector>

#include "drivelab/labels.hpp"
#include "drivelab/net.hpp"
#include "drivelab/observation.hpp"
#include "drivelab/reference.hpp"
#include "drivelab/rng.hpp"
#include "drivelab/world.hpp"

namespace drivelab::policies {

// Primary net: shared ReLU trunk, then twelve heads. Head order matches the
// label vector with the two control heads first.
nn::NetSpec primary_net_spec(std::vector<int> hidden, std::uint64_t init_seed);

// Safety net: runs on the primary trunk's last hidden activations, one
// sigmoid unit giving p(safe). With two classes this is the same posterior a
// two-way softmax would produce.
nn::NetSpec safety_net_spec(int feature_size, std::vector<int> hidden, std::uint64_t init_seed);

// Composite loss for the primary: squared steer + bce brake at weight 1, the
// ten auxiliary heads at w_aux.
nn::LossSpec primary_loss_spec(const nn::NetSpec& spec, double w_aux);

std::vector<double> observation_input(const perception::Observation& obs);

// Target vector in head order.
std::vector<double> primary_target(const sim::Action& ref_action,
                                   const perception::LabelVector& labels);

struct PrimaryPolicy {
    nn::NetSpec spec;
    nn::Params params;
};

struct PrimaryActResult {
    sim::Action action;
    perception::LabelVector aux;    // auxiliary head estimates
    std::vector<double> features;   // last shared hidden layer activations
};

// Decodes heads: steer directly from the tanh head, brake = 1 iff the sigmoid
// head is >= 0.5.
PrimaryActResult primary_act(const PrimaryPolicy& policy, const perception::Observation& obs);

struct SafetyPolicy {
    nn::NetSpec spec;
    nn::Params params;
    double tau = 0.0025;
};

struct SafetyVerdict {
    double p_safe = 0;
    bool safe = false;  // p_safe >= 0.5
};

SafetyVerdict safety_classify(const SafetyPolicy& policy, std::span<const double> features);

// Squared steering difference; the brake field is ignored.
double deviation(const sim::Action& primary_action, const sim::Action& reference_action);

// 0 (unsafe) iff deviation exceeds tau; ties are safe.
int optimal_safety_label(double epsilon, double tau);

// Mean bernoulli negative log-likelihood of the safety net on
// (features, 0/1 label) examples.
double safety_loss(const SafetyPolicy& policy, std::span<const nn::Example> batch);

struct TauCalibration {
    double tau = 0;
    double safe_fraction = 0;  // achieved fraction of deviations <= tau
};

// Smallest deviation value v from the list with fraction(eps <= v) >= target.
TauCalibration calibrate_tau(std::vector<double> deviations, double target_safe_fraction);

struct StrategyDecision {
    sim::Action action;
    sim::ControllerTag tag = sim::ControllerTag::Primary;
    double p_safe = 1.0;      // 1.0 where no safety policy was consulted
    int latched_lane = -1;    // reference target lane when the reference drove;
                              // the episode loop writes it back into the ego state
};

// Per-step gate: primary drives when classified safe, otherwise the reference
// takes over (billed as a takeover-drive query).
StrategyDecision safe_strategy_act(const PrimaryPolicy& primary, const SafetyPolicy& safety,
                                   const perception::Observation& obs,
                                   const sim::WorldState& state,
                                   reference::QueryLedger& ledger);

// Per-timestep Bernoulli(beta) mixture of reference and primary.
StrategyDecision mixture_act(const PrimaryPolicy& primary, double beta,
                             const perception::Observation& obs, const sim::WorldState& state,
                             Rng& rng, reference::QueryLedger& ledger);

// Model persistence wrappers (nn format; the safety file carries tau).
void save_primary(const std::filesystem::path& path, const PrimaryPolicy& policy);
PrimaryPolicy load_primary(const std::filesystem::path& path);
void save_safety(const std::filesystem::path& path, const SafetyPolicy& policy);
SafetyPolicy load_safety(const std::filesystem::path& path);

}  // namespace drivelab::policies
