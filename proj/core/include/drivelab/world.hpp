#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "drivelab/track.hpp"

namespace drivelab::sim {

// 30 Hz control loop.
inline constexpr double kDt = 1.0 / 30.0;
inline constexpr double kAccel = 3.0;        // m/s^2, applied when not braking
inline constexpr double kBrakeDecel = 6.0;   // m/s^2
inline constexpr double kSteerGain = 0.35;   // rad/m of curvature at full steer
inline constexpr double kCollisionRadius = 1.0;  // m, per car
inline constexpr double kCarHalfWidth = 1.0;     // m, used for the off-road bound

struct Action {
    double steer = 0.0;  // [-1, 1]
    bool brake = false;

    Action() = default;
    Action(double steer_, bool brake_)
        : steer(steer_ < -1.0 ? -1.0 : (steer_ > 1.0 ? 1.0 : steer_)), brake(brake_) {}
};

struct CarState {
    double arc_position = 0.0;   // m along centerline, wraps modulo track length
    double lateral_offset = 0.0; // m, signed, positive = left of centerline
    double heading_error = 0.0;  // rad relative to centerline tangent
    double speed = 0.0;          // m/s, >= 0
    int lane_index = 0;          // latched target lane (0 = leftmost)
    double speed_cap = std::numeric_limits<double>::infinity();  // per-car cruise cap
};

enum class Halt : std::uint8_t { Running = 0, OffRoad = 1, Finished = 2 };

enum class ControllerTag : std::uint8_t { Reference = 0, Primary = 1 };

const char* to_string(Halt h);
const char* to_string(ControllerTag t);

struct WorldState {
    const Track* track = nullptr;
    CarState ego;
    std::vector<CarState> traffic;
    std::int64_t time_step = 0;
    std::int64_t damage = 0;  // ego-involved colliding timesteps, non-decreasing
    Halt halted = Halt::Running;
    double ego_distance = 0.0;  // cumulative signed ego progress, for lap counting

    bool running() const { return halted == Halt::Running; }
};

// Fresh world on a track: ego centered in `ego_lane` at `ego_arc`, moving at
// `ego_speed`, traffic as given.
WorldState make_world(const Track& track, double ego_arc, int ego_lane, double ego_speed,
                      std::vector<CarState> traffic = {});

// Advances the world by one 30 Hz tick. The ego applies `ego_action`; every
// traffic car applies the reference policy. Throws std::logic_error if the
// world is halted.
void step(WorldState& state, const Action& ego_action);

// Euclidean gap between car centers on this world's track.
double car_center_distance(const WorldState& state, const CarState& a, const CarState& b);

// Number of overlapping car pairs (ego + traffic), for safety checks.
int count_overlapping_pairs(const WorldState& state);

bool ego_on_road(const WorldState& state);

// Deterministic traffic placement: distinct arc/lane slots, no initial
// overlap, per-car speed caps below the ego speed limit, and a clear zone
// around `clear_arc` (the ego spawn). Throws with the computed capacity when
// n_cars cannot be placed.
std::vector<CarState> spawn_traffic(const Track& track, int n_cars, std::uint64_t seed,
                                    double clear_arc = 0.0);

struct TrajectoryStep {
    WorldState state;  // state the action was computed from
    Action action;
    ControllerTag tag = ControllerTag::Reference;
};

struct Trajectory {
    std::vector<TrajectoryStep> steps;
    WorldState final_state;
    Halt terminal = Halt::Running;
};

// 1 iff zero damage and the trajectory never left the road.
int crash_free(const Trajectory& traj);

void write_trajectory_csv(const Trajectory& traj, const std::filesystem::path& path);

}  // namespace drivelab::sim
