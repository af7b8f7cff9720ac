#pragma once

#include <cstdint>
#include <vector>

#include "drivelab/world.hpp"

namespace drivelab::reference {

// Rule-based controller gains and distances.
inline constexpr double kPdLateralGain = 0.8;
inline constexpr double kPdHeadingGain = 1.2;
inline constexpr double kBrakeDistance = 15.0;      // m
inline constexpr double kLaneChangeTrigger = 35.0;  // m
inline constexpr double kLaneFreeWindow = 25.0;     // m, each direction
inline constexpr double kArriveLateralFrac = 0.15;  // of lane width
inline constexpr double kArriveHeading = 0.06;      // rad

inline constexpr int kEgoIndex = -1;

enum class QueryKind : std::uint8_t { Label = 0, TakeoverDrive = 1, Metric = 2 };

struct QueryCounts {
    std::uint64_t label = 0;
    std::uint64_t takeover = 0;
    std::uint64_t metric = 0;

    std::uint64_t total() const { return label + takeover + metric; }
    QueryCounts& operator+=(const QueryCounts& o) {
        label += o.label;
        takeover += o.takeover;
        metric += o.metric;
        return *this;
    }
};

// Counts reference-policy invocations, split by purpose, with a per-iteration
// breakdown. One ledger per run (or per episode, merged afterwards).
class QueryLedger {
  public:
    void set_iteration(int iteration) { iteration_ = iteration; }
    int iteration() const { return iteration_; }

    void record(QueryKind kind, std::uint64_t n = 1);

    const QueryCounts& totals() const { return totals_; }
    QueryCounts iteration_counts(int iteration) const;
    int max_iteration() const { return static_cast<int>(per_iteration_.size()) - 1; }

    void merge(const QueryLedger& other);

  private:
    int iteration_ = 0;
    QueryCounts totals_;
    std::vector<QueryCounts> per_iteration_;
};

// Full decision of the rule-based policy for one car, including the possibly
// re-latched target lane. `car_index` is kEgoIndex or an index into traffic.
struct Decision {
    sim::Action action;
    int target_lane = 0;
};

Decision reference_decide(const sim::WorldState& state, int car_index);

// Action-only view of reference_decide.
sim::Action reference_action(const sim::WorldState& state, int car_index = kEgoIndex);

// Same as reference_action for the ego, but bills the query to the ledger.
sim::Action query_reference(const sim::WorldState& state, QueryLedger& ledger, QueryKind kind);

}  // namespace drivelab::reference
