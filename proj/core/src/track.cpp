#include "drivelab/track.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace drivelab::sim {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

Pose advance_pose(const Pose& p, const Segment& seg) {
    if (seg.kind == Segment::Kind::Straight) {
        return {p.pos + heading_dir(p.heading) * seg.length, p.heading};
    }
    const double inv_k = (seg.sweep >= 0 ? seg.radius : -seg.radius);
    const Vec2 center = p.pos + heading_left(p.heading) * inv_k;
    const double h2 = p.heading + seg.sweep;
    const Vec2 end = center + Vec2{std::sin(h2), -std::cos(h2)} * inv_k;
    return {end, h2};
}

}  // namespace

double Track::lane_center_offset(int lane_index) const {
    return ((spec_.lane_count - 1) * 0.5 - lane_index) * spec_.lane_width;
}

int Track::nearest_lane(double lateral) const {
    // lane centers decrease with index; invert the offset formula and round
    double idx = (spec_.lane_count - 1) * 0.5 - lateral / spec_.lane_width;
    int i = static_cast<int>(std::lround(idx));
    return std::clamp(i, 0, spec_.lane_count - 1);
}

double Track::wrap(double arc_position) const {
    double s = std::fmod(arc_position, length_);
    if (s < 0) s += length_;
    return s;
}

double Track::signed_arc_delta(double from, double to) const {
    double d = wrap(to - from);
    if (d > 0.5 * length_) d -= length_;
    return d;
}

double Track::forward_arc_delta(double from, double to) const {
    return wrap(to - from);
}

Pose Track::centerline_pose(double arc_position) const {
    const double s = wrap(arc_position);
    auto it = std::upper_bound(cum_length_.begin(), cum_length_.end(), s);
    const auto idx = static_cast<std::size_t>(std::distance(cum_length_.begin(), it)) - 1;
    const BuiltSegment& b = built_[idx];
    const double u = s - b.start_arc;
    if (b.seg.kind == Segment::Kind::Straight) {
        return {b.start.pos + heading_dir(b.start.heading) * u, b.start.heading};
    }
    const double phi = (b.seg.sweep >= 0 ? u / b.seg.radius : -u / b.seg.radius);
    const double h = b.start.heading + phi;
    return {b.center + Vec2{std::sin(h), -std::cos(h)} * b.inv_curvature, h};
}

Pose Track::world_pose(double arc_position, double lateral) const {
    Pose c = centerline_pose(arc_position);
    return {c.pos + heading_left(c.heading) * lateral, c.heading};
}

double Track::curvature(double arc_position) const {
    const double s = wrap(arc_position);
    auto it = std::upper_bound(cum_length_.begin(), cum_length_.end(), s);
    const auto idx = static_cast<std::size_t>(std::distance(cum_length_.begin(), it)) - 1;
    const BuiltSegment& b = built_[idx];
    if (b.seg.kind == Segment::Kind::Straight) return 0.0;
    return 1.0 / b.inv_curvature;
}

bool Track::segment_contains(const BuiltSegment& b, const Vec2& p, double* lateral,
                             double slack) const {
    if (b.seg.kind == Segment::Kind::Straight) {
        const Vec2 dir = heading_dir(b.start.heading);
        const Vec2 v = p - b.start.pos;
        const double t = v.dot(dir);
        if (t < -slack || t > b.seg.length + slack) return false;
        *lateral = dir.cross(v);
        return true;
    }
    const Vec2 w = p - b.center;
    const double rho = w.norm();
    if (rho < 1e-12) return false;
    const double sweep_abs = std::abs(b.seg.sweep);
    bool inside;
    if (sweep_abs >= kTwoPi - 1e-12) {
        inside = true;
    } else {
        const Vec2 wn = w * (1.0 / rho);
        const bool ccw = b.seg.sweep >= 0;
        const double c0 = ccw ? b.radial_start.cross(wn) : wn.cross(b.radial_start);
        const double c1 = ccw ? wn.cross(b.radial_end) : b.radial_end.cross(wn);
        if (sweep_abs <= 3.14159265358979323846 + 1e-12) {
            inside = (c0 >= -1e-9) && (c1 >= -1e-9);
        } else {
            // complement sector is < pi; point is outside only if strictly
            // inside the complement
            inside = !((c0 < -1e-9) && (c1 < -1e-9));
        }
    }
    if (!inside) return false;
    // positive lateral = left of travel; for a left turn the center is left
    *lateral = (b.seg.sweep >= 0) ? (b.seg.radius - rho) : (rho - b.seg.radius);
    return true;
}

double Track::segment_station(const BuiltSegment& b, const Vec2& p) const {
    if (b.seg.kind == Segment::Kind::Straight) {
        const Vec2 dir = heading_dir(b.start.heading);
        const double t = std::clamp((p - b.start.pos).dot(dir), 0.0, b.seg.length);
        return b.start_arc + t;
    }
    const Vec2 w = p - b.center;
    const double a0 = std::atan2(b.radial_start.y, b.radial_start.x);
    const double a = std::atan2(w.y, w.x);
    double swept = (b.seg.sweep >= 0) ? (a - a0) : (a0 - a);
    swept = std::fmod(swept + 2 * kTwoPi, kTwoPi);
    swept = std::min(swept, std::abs(b.seg.sweep));
    return b.start_arc + swept * b.seg.radius;
}

TrackProjection Track::project(const Vec2& p) const {
    TrackProjection best;
    double best_abs = std::numeric_limits<double>::infinity();
    for (const auto& b : built_) {
        double lat;
        if (!segment_contains(b, p, &lat, 1e-6)) continue;
        if (std::abs(lat) < best_abs) {
            best_abs = std::abs(lat);
            best.valid = true;
            best.lateral = lat;
            best.arc_position = wrap(segment_station(b, p));
        }
    }
    return best;
}

bool Track::lateral_in_window(const Vec2& p, double center_arc, double half_span,
                              double* lateral_out) const {
    std::vector<int> segs;
    window_segments(center_arc, half_span, &segs);
    return lateral_from_segments(p, segs, lateral_out);
}

void Track::window_segments(double center_arc, double half_span, std::vector<int>* out) const {
    out->clear();
    for (int i = 0; i < static_cast<int>(built_.size()); ++i) {
        const auto& b = built_[static_cast<std::size_t>(i)];
        const double seg_mid = b.start_arc + 0.5 * b.seg.arc_length();
        const double gap = std::abs(signed_arc_delta(center_arc, seg_mid));
        if (gap <= half_span + 0.5 * b.seg.arc_length()) out->push_back(i);
    }
}

bool Track::lateral_from_segments(const Vec2& p, const std::vector<int>& segments,
                                  double* lateral_out) const {
    double best_abs = std::numeric_limits<double>::infinity();
    bool found = false;
    for (int i : segments) {
        double lat;
        if (!segment_contains(built_[static_cast<std::size_t>(i)], p, &lat)) continue;
        if (std::abs(lat) < best_abs) {
            best_abs = std::abs(lat);
            *lateral_out = lat;
            found = true;
        }
    }
    return found;
}

Track build_track(const TrackSpec& spec) {
    if (spec.segments.empty()) throw TrackError("track '" + spec.id + "': no segments");
    if (spec.lane_count < 1) throw TrackError("track '" + spec.id + "': lane_count must be >= 1");
    if (spec.lane_width <= 0) throw TrackError("track '" + spec.id + "': lane_width must be > 0");
    if (spec.speed_limit <= 0) throw TrackError("track '" + spec.id + "': speed_limit must be > 0");

    Track t;
    t.spec_ = spec;
    Pose pose;  // origin, heading 0
    double arc = 0;
    for (const auto& seg : spec.segments) {
        if (seg.kind == Segment::Kind::Straight) {
            if (seg.length <= 0)
                throw TrackError("track '" + spec.id + "': straight length must be > 0");
        } else {
            if (seg.radius <= spec.lane_count * spec.lane_width)
                throw TrackError("track '" + spec.id +
                                 "': arc radius must exceed road width (self-intersecting inner edge)");
            if (seg.sweep == 0) throw TrackError("track '" + spec.id + "': arc sweep must be nonzero");
        }
        Track::BuiltSegment b;
        b.seg = seg;
        b.start_arc = arc;
        b.start = pose;
        b.end = advance_pose(pose, seg);
        if (seg.kind == Segment::Kind::Arc) {
            b.inv_curvature = (seg.sweep >= 0 ? seg.radius : -seg.radius);
            b.center = pose.pos + heading_left(pose.heading) * b.inv_curvature;
            const double inv_r = 1.0 / seg.radius;
            b.radial_start = (b.start.pos - b.center) * inv_r;
            b.radial_end = (b.end.pos - b.center) * inv_r;
        }
        t.cum_length_.push_back(arc);
        arc += seg.arc_length();
        pose = b.end;
        t.built_.push_back(b);
    }
    t.length_ = arc;
    if (t.length_ <= 0) throw TrackError("track '" + spec.id + "': zero length");

    const double pos_residual = (pose.pos - Vec2{0, 0}).norm();
    const double heading_residual = std::abs(wrap_angle(pose.heading));
    if (pos_residual > 1e-6 || heading_residual > 1e-6) {
        char buf[160];
        std::snprintf(buf, sizeof(buf),
                      "track '%s': segments do not close the loop (position residual %.3e m, "
                      "heading residual %.3e rad)",
                      spec.id.c_str(), pos_residual, heading_residual);
        throw TrackError(buf);
    }
    return t;
}

// ---------------------------------------------------------------------------
// text format

namespace {

std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

}  // namespace

TrackSpec parse_track_spec(const std::string& text, const std::string& origin) {
    TrackSpec spec;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    bool saw_id = false;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw TrackError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        try {
            if (key == "id") {
                spec.id = value;
                saw_id = true;
            } else if (key == "kind") {
                if (value == "train") spec.is_test = false;
                else if (value == "test") spec.is_test = true;
                else throw TrackError("kind must be train|test");
            } else if (key == "lane_count") {
                spec.lane_count = std::stoi(value);
            } else if (key == "lane_width") {
                spec.lane_width = std::stod(value);
            } else if (key == "speed_limit") {
                spec.speed_limit = std::stod(value);
            } else if (key == "segment") {
                std::istringstream sv(value);
                std::string kind;
                sv >> kind;
                if (kind == "straight") {
                    double len;
                    if (!(sv >> len)) throw TrackError("straight needs a length");
                    spec.segments.push_back(Segment::straight(len));
                } else if (kind == "arc") {
                    double radius, sweep;
                    if (!(sv >> radius >> sweep)) throw TrackError("arc needs radius and sweep");
                    spec.segments.push_back(Segment::arc(radius, sweep));
                } else {
                    throw TrackError("segment must be 'straight <m>' or 'arc <radius_m> <sweep_rad>'");
                }
            } else {
                throw TrackError("unknown key '" + key + "'");
            }
        } catch (const TrackError&) {
            throw;
        } catch (const std::exception& e) {
            throw TrackError(origin + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    if (!saw_id) throw TrackError(origin + ": missing 'id'");
    return spec;
}

TrackSpec load_track_spec(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw TrackError("cannot open track file: " + file.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_track_spec(ss.str(), file.string());
}

std::string format_track_spec(const TrackSpec& spec) {
    std::ostringstream out;
    char buf[64];
    out << "id = " << spec.id << "\n";
    out << "kind = " << (spec.is_test ? "test" : "train") << "\n";
    out << "lane_count = " << spec.lane_count << "\n";
    std::snprintf(buf, sizeof(buf), "%.17g", spec.lane_width);
    out << "lane_width = " << buf << "\n";
    std::snprintf(buf, sizeof(buf), "%.17g", spec.speed_limit);
    out << "speed_limit = " << buf << "\n";
    for (const auto& seg : spec.segments) {
        if (seg.kind == Segment::Kind::Straight) {
            std::snprintf(buf, sizeof(buf), "%.17g", seg.length);
            out << "segment = straight " << buf << "\n";
        } else {
            char b2[64];
            std::snprintf(buf, sizeof(buf), "%.17g", seg.radius);
            std::snprintf(b2, sizeof(b2), "%.17g", seg.sweep);
            out << "segment = arc " << buf << " " << b2 << "\n";
        }
    }
    return out.str();
}

std::vector<TrackSpec> load_track_dir(const std::filesystem::path& dir) {
    std::vector<std::filesystem::path> files;
    if (!std::filesystem::is_directory(dir))
        throw TrackError("track directory not found: " + dir.string());
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.path().extension() == ".track") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    std::vector<TrackSpec> specs;
    specs.reserve(files.size());
    for (const auto& f : files) specs.push_back(load_track_spec(f));
    std::sort(specs.begin(), specs.end(),
              [](const TrackSpec& a, const TrackSpec& b) { return a.id < b.id; });
    return specs;
}

}  // namespace drivelab::sim
