#pragma once

#include <array>
#include <cstddef>

#include "drivelab/world.hpp"

namespace drivelab::perception {

inline constexpr int kObsChannels = 3;  // 0 road, 1 lane markings, 2 cars
inline constexpr int kObsRows = 12;     // forward, row 0 nearest
inline constexpr int kObsCols = 24;     // lateral, col 0 leftmost
inline constexpr int kObsSize = kObsChannels * kObsRows * kObsCols;

inline constexpr double kObsForward = 60.0;      // m covered by the rows
inline constexpr double kObsLateralHalf = 12.0;  // m each side
inline constexpr double kMarkingHalfWidth = 0.15;

// Rasterized forward view in the ego frame. Cells hold area-coverage
// fractions in [0, 1].
struct Observation {
    std::array<float, kObsSize> grid{};

    static constexpr std::size_t index(int channel, int row, int col) {
        return static_cast<std::size_t>(channel) * kObsRows * kObsCols +
               static_cast<std::size_t>(row) * kObsCols + static_cast<std::size_t>(col);
    }
    float at(int channel, int row, int col) const { return grid[index(channel, row, col)]; }
    float& at(int channel, int row, int col) { return grid[index(channel, row, col)]; }
};

// Renders the 60 m x 24 m forward window around the ego. Traffic with its
// center behind the ego plane does not appear.
Observation observe(const sim::WorldState& state);

}  // namespace drivelab::perception
