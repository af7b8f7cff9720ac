#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "drivelab/geometry.hpp"

namespace drivelab::sim {

struct Segment {
    enum class Kind { Straight, Arc };
    Kind kind = Kind::Straight;
    double length = 0.0;  // straight only
    double radius = 0.0;  // arc only
    double sweep = 0.0;   // arc only; signed radians, positive = left turn

    static Segment straight(double length) { return {Kind::Straight, length, 0.0, 0.0}; }
    static Segment arc(double radius, double sweep) { return {Kind::Arc, 0.0, radius, sweep}; }

    double arc_length() const {
        return kind == Kind::Straight ? length : radius * std::abs(sweep);
    }
};

struct TrackSpec {
    std::string id;
    bool is_test = false;  // shipped set is split into training and test tracks
    int lane_count = 2;
    double lane_width = 3.5;   // m
    double speed_limit = 20.0; // m/s
    std::vector<Segment> segments;

    double road_width() const { return lane_count * lane_width; }
    double road_half_width() const { return 0.5 * road_width(); }
};

struct TrackError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Result of projecting a world point into track coordinates.
struct TrackProjection {
    bool valid = false;      // some segment contains the point's station
    double arc_position = 0; // m along centerline
    double lateral = 0;      // signed, positive = left of travel direction
};

// Closed-loop centerline geometry with arc-length parameterization.
class Track {
  public:
    const TrackSpec& spec() const { return spec_; }
    double length() const { return length_; }
    int lane_count() const { return spec_.lane_count; }
    double lane_width() const { return spec_.lane_width; }
    double speed_limit() const { return spec_.speed_limit; }
    double road_half_width() const { return spec_.road_half_width(); }

    // Signed lateral offset of a lane center. Lane 0 is the leftmost lane.
    double lane_center_offset(int lane_index) const;
    int nearest_lane(double lateral) const;

    double wrap(double arc_position) const;
    // Signed shortest arc distance from `from` to `to` in (-L/2, L/2].
    double signed_arc_delta(double from, double to) const;
    // Forward arc distance from `from` to `to` in [0, L).
    double forward_arc_delta(double from, double to) const;

    Pose centerline_pose(double arc_position) const;
    Pose world_pose(double arc_position, double lateral) const;
    double curvature(double arc_position) const;

    // Nearest-centerline projection of a world point (exact, uses atan2).
    TrackProjection project(const Vec2& p) const;

    // Cheap projection used by the observation rasterizer: only computes the
    // lateral offset, restricted to segments whose arc range intersects
    // [center - half_span, center + half_span]. Returns false when no nearby
    // segment contains the point.
    bool lateral_in_window(const Vec2& p, double center_arc, double half_span,
                           double* lateral_out) const;

    // Two-step variant of lateral_in_window for tight loops: resolve the
    // candidate segments once, then query many points against them.
    void window_segments(double center_arc, double half_span, std::vector<int>* out) const;
    bool lateral_from_segments(const Vec2& p, const std::vector<int>& segments,
                               double* lateral_out) const;

  private:
    friend Track build_track(const TrackSpec& spec);

    struct BuiltSegment {
        Segment seg;
        double start_arc = 0;
        Pose start;
        Pose end;
        // arc segments
        Vec2 center;
        double inv_curvature = 0;  // 1/kappa, signed
        Vec2 radial_start;         // unit vector center -> start
        Vec2 radial_end;
    };

    bool segment_contains(const BuiltSegment& b, const Vec2& p, double* lateral,
                          double slack = 1e-9) const;
    double segment_station(const BuiltSegment& b, const Vec2& p) const;

    TrackSpec spec_;
    std::vector<BuiltSegment> built_;
    std::vector<double> cum_length_;  // cum_length_[i] = arc position of segment i start
    double length_ = 0;
};

// Validates the spec invariants and builds the geometry. Throws TrackError
// with the loop-closure residual when the segment list does not close.
Track build_track(const TrackSpec& spec);

// Plain-text key-value track format (see README).
TrackSpec parse_track_spec(const std::string& text, const std::string& origin = "<string>");
TrackSpec load_track_spec(const std::filesystem::path& file);
std::string format_track_spec(const TrackSpec& spec);

// Loads every *.track file in a directory, sorted by id.
std::vector<TrackSpec> load_track_dir(const std::filesystem::path& dir);

}  // namespace drivelab::sim
