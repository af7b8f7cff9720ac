#pragma once

#include <array>

#include "drivelab/world.hpp"

namespace drivelab::perception {

inline constexpr double kLabelHorizon = 60.0;  // m, front-car distance normalization
inline constexpr int kLabelCount = 12;

// The twelve per-frame target variables. The first ten are privileged state
// descriptors; s_c and i_b are the control targets and are filled by the
// caller from the reference action.
struct LabelVector {
    double i_ll = 0, i_lr = 0;            // lane exists left / right
    double i_cl = 0, i_cm = 0, i_cr = 0;  // car ahead in left / same / right lane
    double d_cl = 1, d_cm = 1, d_cr = 1;  // normalized distances, 1.0 = none in range
    double p_c = 0;                       // position within lane, [-1, 1]
    double a_c = 0;                       // heading vs lane direction, [-1, 1]
    double s_c = 0;                       // steering angle, [-1, 1]
    double i_b = 0;                       // brake indicator

    std::array<double, kLabelCount> to_array() const {
        return {i_ll, i_lr, i_cl, i_cm, i_cr, d_cl, d_cm, d_cr, p_c, a_c, s_c, i_b};
    }
    static LabelVector from_array(const std::array<double, kLabelCount>& a) {
        LabelVector v;
        v.i_ll = a[0]; v.i_lr = a[1]; v.i_cl = a[2]; v.i_cm = a[3]; v.i_cr = a[4];
        v.d_cl = a[5]; v.d_cm = a[6]; v.d_cr = a[7]; v.p_c = a[8]; v.a_c = a[9];
        v.s_c = a[10]; v.i_b = a[11];
        return v;
    }
};

// Fills the ten state labels from privileged world state; s_c/i_b stay 0.
LabelVector extract_labels(const sim::WorldState& state);

}  // namespace drivelab::perception
