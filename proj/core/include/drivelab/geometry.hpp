#pragma once

#include <cmath>

namespace drivelab {

struct Vec2 {
    double x = 0.0;
    double y = 0.0;

    Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
    Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
    Vec2 operator*(double s) const { return {x * s, y * s}; }
    double dot(const Vec2& o) const { return x * o.x + y * o.y; }
    double cross(const Vec2& o) const { return x * o.y - y * o.x; }
    double norm() const { return std::sqrt(x * x + y * y); }
};

// World pose: position plus heading (radians, CCW from +x).
struct Pose {
    Vec2 pos;
    double heading = 0.0;
};

inline Vec2 heading_dir(double h) { return {std::cos(h), std::sin(h)}; }

// Left normal of a heading.
inline Vec2 heading_left(double h) { return {-std::sin(h), std::cos(h)}; }

// Wraps an angle to (-pi, pi].
inline double wrap_angle(double a) {
    constexpr double two_pi = 6.283185307179586476925286766559;
    a = std::fmod(a, two_pi);
    if (a <= -3.14159265358979323846) a += two_pi;
    if (a > 3.14159265358979323846) a -= two_pi;
    return a;
}

}  // namespace drivelab
