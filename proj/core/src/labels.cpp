#include "drivelab/labels.hpp"

#include <algorithm>
#include <cmath>

namespace drivelab::perception {

LabelVector extract_labels(const sim::WorldState& state) {
    const sim::Track& track = *state.track;
    const sim::CarState& ego = state.ego;
    const int lanes = track.lane_count();
    const int ego_lane = track.nearest_lane(ego.lateral_offset);

    LabelVector v;
    v.i_ll = ego_lane > 0 ? 1.0 : 0.0;
    v.i_lr = ego_lane < lanes - 1 ? 1.0 : 0.0;

    auto front_distance = [&](int lane) -> double {
        double best = kLabelHorizon;
        for (const auto& car : state.traffic) {
            if (track.nearest_lane(car.lateral_offset) != lane) continue;
            const double gap = track.forward_arc_delta(ego.arc_position, car.arc_position);
            if (gap > 1e-9 && gap < best) best = gap;
        }
        return best;
    };

    struct Slot { double* ind; double* dist; int lane; bool exists; };
    const Slot slots[3] = {
        {&v.i_cl, &v.d_cl, ego_lane - 1, ego_lane - 1 >= 0},
        {&v.i_cm, &v.d_cm, ego_lane, true},
        {&v.i_cr, &v.d_cr, ego_lane + 1, ego_lane + 1 < lanes},
    };
    for (const auto& s : slots) {
        if (!s.exists) continue;  // indicator 0, distance sentinel 1.0
        const double d = front_distance(s.lane);
        if (d < kLabelHorizon) {
            *s.ind = 1.0;
            *s.dist = d / kLabelHorizon;
        }
    }

    v.p_c = std::clamp((ego.lateral_offset - track.lane_center_offset(ego_lane)) /
                           (0.5 * track.lane_width()),
                       -1.0, 1.0);
    v.a_c = std::clamp(ego.heading_error / (3.14159265358979323846 / 4.0), -1.0, 1.0);
    return v;
}

}  // namespace drivelab::perception
