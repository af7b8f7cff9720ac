#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "drivelab/rng.hpp"
#include "drivelab/track.hpp"

using namespace drivelab;
using namespace drivelab::sim;

namespace {

constexpr double kPi = 3.14159265358979323846;

TrackSpec circle_spec(double radius, int lanes = 2) {
    TrackSpec s;
    s.id = "circle";
    s.lane_count = lanes;
    s.lane_width = 3.5;
    s.speed_limit = 20;
    s.segments = {Segment::arc(radius, 2 * kPi)};
    return s;
}

TrackSpec stadium_spec() {
    TrackSpec s;
    s.id = "stadium";
    s.lane_count = 2;
    s.lane_width = 3.5;
    s.speed_limit = 20;
    s.segments = {Segment::straight(200), Segment::arc(50, kPi), Segment::straight(200),
                  Segment::arc(50, kPi)};
    return s;
}

}  // namespace

TEST_CASE("circle track length is the circumference") {
    const Track t = build_track(circle_spec(100));
    CHECK(t.length() == doctest::Approx(2 * kPi * 100).epsilon(1e-12));
}

TEST_CASE("stadium track length is straights plus full turn") {
    const Track t = build_track(stadium_spec());
    CHECK(t.length() == doctest::Approx(2 * 200 + 2 * kPi * 50).epsilon(1e-12));
}

TEST_CASE("open polyline is rejected with the closure residual") {
    TrackSpec s = circle_spec(100);
    s.segments = {Segment::arc(100, kPi)};  // half circle, does not close
    CHECK_THROWS_WITH_AS(build_track(s),
                         doctest::Contains("do not close the loop"), TrackError);
}

TEST_CASE("spec invariants are enforced") {
    TrackSpec s = circle_spec(100);
    s.lane_count = 0;
    CHECK_THROWS_AS(build_track(s), TrackError);
    s = circle_spec(100);
    s.lane_width = 0;
    CHECK_THROWS_AS(build_track(s), TrackError);
    s = circle_spec(100);
    s.speed_limit = -1;
    CHECK_THROWS_AS(build_track(s), TrackError);
    s = circle_spec(5, 2);  // radius below road width of 7 m
    CHECK_THROWS_AS(build_track(s), TrackError);
}

TEST_CASE("circle pose query matches the closed form") {
    const Track t = build_track(circle_spec(100));
    const Pose quarter = t.centerline_pose(0.25 * t.length());
    CHECK(quarter.pos.x == doctest::Approx(100).epsilon(1e-9));
    CHECK(quarter.pos.y == doctest::Approx(100).epsilon(1e-9));
    CHECK(quarter.heading == doctest::Approx(kPi / 2).epsilon(1e-9));
    CHECK(t.curvature(10.0) == doctest::Approx(0.01).epsilon(1e-12));
}

TEST_CASE("lane centers and nearest lane are inverse") {
    const Track t = build_track(circle_spec(100, 3));
    CHECK(t.lane_center_offset(0) == doctest::Approx(3.5));
    CHECK(t.lane_center_offset(1) == doctest::Approx(0.0));
    CHECK(t.lane_center_offset(2) == doctest::Approx(-3.5));
    for (int lane = 0; lane < 3; ++lane)
        CHECK(t.nearest_lane(t.lane_center_offset(lane)) == lane);
    CHECK(t.nearest_lane(100.0) == 0);    // clamped to leftmost
    CHECK(t.nearest_lane(-100.0) == 2);
}

TEST_CASE("projection inverts world_pose on every shipped track") {
    const auto specs = load_track_dir(DRIVELAB_TRACKS_DIR);
    REQUIRE(specs.size() == 10);
    int train = 0, test = 0;
    for (const auto& spec : specs) (spec.is_test ? test : train)++;
    CHECK(train == 7);
    CHECK(test == 3);

    Rng rng(7);
    for (const auto& spec : specs) {
        const Track t = build_track(spec);
        for (int i = 0; i < 50; ++i) {
            const double s = rng.uniform(0, t.length());
            const double lat = rng.uniform(-t.road_half_width(), t.road_half_width());
            const Pose p = t.world_pose(s, lat);
            const auto proj = t.project(p.pos);
            REQUIRE(proj.valid);
            CHECK(proj.lateral == doctest::Approx(lat).epsilon(1e-6));
            const double ds = std::abs(t.signed_arc_delta(proj.arc_position, s));
            CHECK(ds < 1e-5);
            // the windowed query agrees
            double wlat = 0;
            REQUIRE(t.lateral_in_window(p.pos, s, 50.0, &wlat));
            CHECK(wlat == doctest::Approx(lat).epsilon(1e-6));
        }
    }
}

TEST_CASE("segment arc spans make the full loop with no gaps") {
    const Track t = build_track(stadium_spec());
    // probe points densely along the centerline; every point must project to
    // lateral ~0
    for (double s = 0; s < t.length(); s += 0.37) {
        const auto proj = t.project(t.centerline_pose(s).pos);
        REQUIRE(proj.valid);
        CHECK(std::abs(proj.lateral) < 1e-9);
    }
}

TEST_CASE("text format round-trips") {
    const auto specs = load_track_dir(DRIVELAB_TRACKS_DIR);
    for (const auto& spec : specs) {
        const std::string text = format_track_spec(spec);
        const TrackSpec back = parse_track_spec(text);
        CHECK(back.id == spec.id);
        CHECK(back.is_test == spec.is_test);
        CHECK(back.lane_count == spec.lane_count);
        CHECK(back.lane_width == spec.lane_width);
        CHECK(back.speed_limit == spec.speed_limit);
        REQUIRE(back.segments.size() == spec.segments.size());
        for (std::size_t i = 0; i < spec.segments.size(); ++i) {
            CHECK(back.segments[i].kind == spec.segments[i].kind);
            CHECK(back.segments[i].length == spec.segments[i].length);
            CHECK(back.segments[i].radius == spec.segments[i].radius);
            CHECK(back.segments[i].sweep == spec.segments[i].sweep);
        }
    }
    CHECK_THROWS_AS(parse_track_spec("lane_count = 2\n"), TrackError);  // missing id
    CHECK_THROWS_AS(parse_track_spec("id = x\nsegment = arc nonsense\n"), TrackError);
}
