#include "drivelab/reference.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

namespace drivelab::reference {

void QueryLedger::record(QueryKind kind, std::uint64_t n) {
    if (iteration_ >= static_cast<int>(per_iteration_.size()))
        per_iteration_.resize(static_cast<std::size_t>(iteration_) + 1);
    QueryCounts& c = per_iteration_[static_cast<std::size_t>(iteration_)];
    switch (kind) {
        case QueryKind::Label: c.label += n; totals_.label += n; break;
        case QueryKind::TakeoverDrive: c.takeover += n; totals_.takeover += n; break;
        case QueryKind::Metric: c.metric += n; totals_.metric += n; break;
    }
}

QueryCounts QueryLedger::iteration_counts(int iteration) const {
    if (iteration < 0 || iteration >= static_cast<int>(per_iteration_.size())) return {};
    return per_iteration_[static_cast<std::size_t>(iteration)];
}

void QueryLedger::merge(const QueryLedger& other) {
    totals_ += other.totals_;
    if (other.per_iteration_.size() > per_iteration_.size())
        per_iteration_.resize(other.per_iteration_.size());
    for (std::size_t i = 0; i < other.per_iteration_.size(); ++i)
        per_iteration_[i] += other.per_iteration_[i];
}

namespace {

using sim::CarState;
using sim::WorldState;

struct FrontCar {
    double gap = 0;    // forward arc distance, center to center
    double speed = 0;
};

const CarState& car_at(const WorldState& w, int index) {
    return index == kEgoIndex ? w.ego : w.traffic[static_cast<std::size_t>(index)];
}

int occupied_lane(const sim::Track& track, const CarState& c) {
    return track.nearest_lane(c.lateral_offset);
}

// Nearest car ahead of `self` whose occupied lane is `lane`, within `window`.
std::optional<FrontCar> front_in_lane(const WorldState& w, int self_index, int lane,
                                      double window) {
    const sim::Track& track = *w.track;
    const CarState& self = car_at(w, self_index);
    std::optional<FrontCar> best;
    auto consider = [&](const CarState& c) {
        if (occupied_lane(track, c) != lane) return;
        const double gap = track.forward_arc_delta(self.arc_position, c.arc_position);
        if (gap <= 1e-9 || gap > window) return;
        if (!best || gap < best->gap) best = FrontCar{gap, c.speed};
    };
    if (self_index != kEgoIndex) consider(w.ego);
    for (int i = 0; i < static_cast<int>(w.traffic.size()); ++i)
        if (i != self_index) consider(w.traffic[static_cast<std::size_t>(i)]);
    return best;
}

// A lane is free if no other car occupies or targets it within the window,
// in either direction.
bool lane_free(const WorldState& w, int self_index, int lane) {
    const sim::Track& track = *w.track;
    const CarState& self = car_at(w, self_index);
    auto blocks = [&](const CarState& c) {
        if (occupied_lane(track, c) != lane && c.lane_index != lane) return false;
        return std::abs(track.signed_arc_delta(self.arc_position, c.arc_position)) <=
               kLaneFreeWindow;
    };
    if (self_index != kEgoIndex && blocks(w.ego)) return false;
    for (int i = 0; i < static_cast<int>(w.traffic.size()); ++i)
        if (i != self_index && blocks(w.traffic[static_cast<std::size_t>(i)])) return false;
    return true;
}

// Gap below which braking is required against a car we are closing on.
double braking_gap(double closing, double margin) {
    return std::max(kBrakeDistance, closing * closing / (2.0 * sim::kBrakeDecel) + margin);
}

}  // namespace

Decision reference_decide(const WorldState& state, int car_index) {
    const sim::Track& track = *state.track;
    const CarState& car = car_at(state, car_index);
    const int lanes = track.lane_count();
    const double lane_width = track.lane_width();
    const double lat = car.lateral_offset;
    const double he = car.heading_error;

    const int nearest = track.nearest_lane(lat);
    int target = std::clamp(car.lane_index, 0, lanes - 1);
    // stale latch (e.g. the car drifted while another controller drove)
    if (std::abs(lat - track.lane_center_offset(target)) > 1.6 * lane_width) target = nearest;

    const double desired = std::min(track.speed_limit(), car.speed_cap);
    const bool settled = target == nearest &&
                         std::abs(lat - track.lane_center_offset(target)) <=
                             kArriveLateralFrac * lane_width &&
                         std::abs(he) <= kArriveHeading;

    bool brake = false;
    if (settled) {
        auto front = front_in_lane(state, car_index, target, kLaneChangeTrigger);
        if (front) {
            const bool slower = front->speed < desired - 0.5;
            const bool left_ok = slower && target - 1 >= 0 && lane_free(state, car_index, target - 1);
            const bool right_ok =
                slower && target + 1 < lanes && lane_free(state, car_index, target + 1);
            if (left_ok) {
                target -= 1;
            } else if (right_ok) {
                target += 1;
            } else {
                const double closing = std::max(0.0, car.speed - front->speed);
                if (closing > 1e-9 && front->gap < braking_gap(closing, 8.0)) brake = true;
                if (slower && front->gap < kBrakeDistance) brake = true;
            }
        }
    } else {
        // mid lane change: keep the latch, brake only on genuine closure
        if (auto f = front_in_lane(state, car_index, target, kLaneChangeTrigger)) {
            const double closing = std::max(0.0, car.speed - f->speed);
            if (closing > 1e-9 && f->gap < braking_gap(closing, 8.0)) brake = true;
        }
        if (nearest != target) {
            if (auto f = front_in_lane(state, car_index, nearest, kLaneChangeTrigger)) {
                const double closing = std::max(0.0, car.speed - f->speed);
                if (closing > 1e-9 && f->gap < std::max(6.0, closing * closing / 12.0 + 4.0))
                    brake = true;
            }
        }
    }

    const double steer = -kPdLateralGain * (lat - track.lane_center_offset(target)) / lane_width -
                         kPdHeadingGain * he;
    Decision d;
    d.action = sim::Action(steer, brake);
    d.target_lane = target;
    return d;
}

sim::Action reference_action(const sim::WorldState& state, int car_index) {
    return reference_decide(state, car_index).action;
}

sim::Action query_reference(const sim::WorldState& state, QueryLedger& ledger, QueryKind kind) {
    ledger.record(kind);
    return reference_action(state, kEgoIndex);
}

}  // namespace drivelab::reference
