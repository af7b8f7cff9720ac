#include "drivelab/world.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "drivelab/reference.hpp"
#include "drivelab/rng.hpp"

namespace drivelab::sim {

const char* to_string(Halt h) {
    switch (h) {
        case Halt::Running: return "running";
        case Halt::OffRoad: return "off_road";
        case Halt::Finished: return "finished";
    }
    return "?";
}

const char* to_string(ControllerTag t) {
    return t == ControllerTag::Reference ? "reference" : "primary";
}

WorldState make_world(const Track& track, double ego_arc, int ego_lane, double ego_speed,
                      std::vector<CarState> traffic) {
    WorldState w;
    w.track = &track;
    w.ego.arc_position = track.wrap(ego_arc);
    w.ego.lane_index = ego_lane;
    w.ego.lateral_offset = track.lane_center_offset(ego_lane);
    w.ego.heading_error = 0.0;
    w.ego.speed = ego_speed;
    w.ego.speed_cap = std::numeric_limits<double>::infinity();
    w.traffic = std::move(traffic);
    return w;
}

namespace {

void advance_car(const Track& track, CarState& car, const Action& action, double* progress_out) {
    const double v = car.speed;
    const double kappa = track.curvature(car.arc_position);
    const double ds = v * std::cos(car.heading_error) * kDt;
    const double dlat = v * std::sin(car.heading_error) * kDt;
    const double dhe = (v * action.steer * kSteerGain - v * kappa) * kDt;

    car.arc_position = track.wrap(car.arc_position + ds);
    car.lateral_offset += dlat;
    car.heading_error += dhe;

    const double cap = std::min(track.speed_limit(), car.speed_cap);
    if (action.brake) {
        car.speed = std::max(0.0, v - kBrakeDecel * kDt);
    } else {
        car.speed = std::min(cap, v + kAccel * kDt);
    }
    if (progress_out) *progress_out += ds;
}

}  // namespace

double car_center_distance(const WorldState& state, const CarState& a, const CarState& b) {
    const Vec2 pa = state.track->world_pose(a.arc_position, a.lateral_offset).pos;
    const Vec2 pb = state.track->world_pose(b.arc_position, b.lateral_offset).pos;
    return (pa - pb).norm();
}

int count_overlapping_pairs(const WorldState& state) {
    std::vector<const CarState*> cars;
    cars.push_back(&state.ego);
    for (const auto& c : state.traffic) cars.push_back(&c);
    int n = 0;
    for (std::size_t i = 0; i < cars.size(); ++i)
        for (std::size_t j = i + 1; j < cars.size(); ++j)
            if (car_center_distance(state, *cars[i], *cars[j]) < 2.0 * kCollisionRadius) ++n;
    return n;
}

bool ego_on_road(const WorldState& state) {
    return std::abs(state.ego.lateral_offset) <=
           state.track->road_half_width() + kCarHalfWidth;
}

void step(WorldState& state, const Action& ego_action) {
    if (!state.running()) throw std::logic_error("step() on a halted world");
    const Track& track = *state.track;

    // All decisions are taken from the pre-step state, then applied at once.
    std::vector<reference::Decision> traffic_decisions;
    traffic_decisions.reserve(state.traffic.size());
    for (int i = 0; i < static_cast<int>(state.traffic.size()); ++i)
        traffic_decisions.push_back(reference::reference_decide(state, i));

    advance_car(track, state.ego, ego_action, &state.ego_distance);
    for (std::size_t i = 0; i < state.traffic.size(); ++i) {
        advance_car(track, state.traffic[i], traffic_decisions[i].action, nullptr);
        state.traffic[i].lane_index = traffic_decisions[i].target_lane;
    }

    bool ego_hit = false;
    for (const auto& c : state.traffic) {
        if (car_center_distance(state, state.ego, c) < 2.0 * kCollisionRadius) {
            ego_hit = true;
            break;
        }
    }
    if (ego_hit) state.damage += 1;

    state.time_step += 1;
    if (!ego_on_road(state)) state.halted = Halt::OffRoad;
}

std::vector<CarState> spawn_traffic(const Track& track, int n_cars, std::uint64_t seed,
                                    double clear_arc) {
    if (n_cars < 0) throw std::invalid_argument("spawn_traffic: n_cars must be >= 0");
    const double length = track.length();
    constexpr double kMinGap = 12.0;       // same-lane spacing at spawn
    constexpr double kExclBehind = 20.0;   // clear zone around the ego spawn
    constexpr double kExclAhead = 40.0;
    const int capacity = track.lane_count() *
                         static_cast<int>((length - kExclBehind - kExclAhead) / kMinGap);
    if (n_cars > capacity) {
        throw std::invalid_argument("spawn_traffic: " + std::to_string(n_cars) +
                                    " cars exceed track capacity of " + std::to_string(capacity));
    }

    Rng rng(seed);
    std::vector<CarState> cars;
    cars.reserve(static_cast<std::size_t>(n_cars));
    for (int i = 0; i < n_cars; ++i) {
        bool placed = false;
        for (int attempt = 0; attempt < 500 && !placed; ++attempt) {
            const double s = rng.uniform(0.0, length);
            const int lane = static_cast<int>(rng.uniform_int(
                static_cast<std::uint64_t>(track.lane_count())));
            const double from_start = track.signed_arc_delta(clear_arc, s);
            if (from_start > -kExclBehind && from_start < kExclAhead) continue;
            bool clear = true;
            for (const auto& other : cars) {
                if (other.lane_index != lane) continue;
                if (std::abs(track.signed_arc_delta(other.arc_position, s)) < kMinGap) {
                    clear = false;
                    break;
                }
            }
            if (!clear) continue;
            CarState c;
            c.arc_position = s;
            c.lane_index = lane;
            c.lateral_offset = track.lane_center_offset(lane);
            c.heading_error = 0.0;
            c.speed_cap = track.speed_limit() * rng.uniform(0.35, 0.7);
            c.speed = c.speed_cap;
            cars.push_back(c);
            placed = true;
        }
        if (!placed) {
            throw std::invalid_argument(
                "spawn_traffic: placement failed at car " + std::to_string(i) +
                " (capacity " + std::to_string(capacity) + ")");
        }
    }
    return cars;
}

int crash_free(const Trajectory& traj) {
    if (traj.final_state.damage > 0) return 0;
    if (traj.terminal == Halt::OffRoad) return 0;
    for (const auto& s : traj.steps)
        if (s.state.halted == Halt::OffRoad) return 0;
    return 1;
}

void write_trajectory_csv(const Trajectory& traj, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path.string());
    out << "t,arc_position,lateral_offset,heading_error,speed,steer,brake,damage,controller_tag\n";
    char buf[256];
    for (const auto& ts : traj.steps) {
        const CarState& e = ts.state.ego;
        std::snprintf(buf, sizeof(buf), "%lld,%.17g,%.17g,%.17g,%.17g,%.17g,%d,%lld,%s\n",
                      static_cast<long long>(ts.state.time_step), e.arc_position,
                      e.lateral_offset, e.heading_error, e.speed, ts.action.steer,
                      ts.action.brake ? 1 : 0, static_cast<long long>(ts.state.damage),
                      to_string(ts.tag));
        out << buf;
    }
}

}  // namespace drivelab::sim
