#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "evm/event_io.hpp"

namespace evm {

// Time-binned event volume. Each event's polarity is split across the two
// nearest time bins by a triangular kernel; spatial insertion is at the
// event's integer pixel. Values are indexed [bin][row][col].
struct VoxelGrid {
    int bins = 0;
    int height = 0;
    int width = 0;
    std::vector<double> values;
    std::int64_t t0 = 0;
    std::int64_t t1 = 0;

    double& at(int b, int y, int x) {
        return values[(static_cast<std::size_t>(b) * height + y) * width + x];
    }
    double at(int b, int y, int x) const {
        return values[(static_cast<std::size_t>(b) * height + y) * width + x];
    }
    double sum() const;
};

// Positive/negative event count images splatted at a common reference time.
struct PolarityImagePair {
    int height = 0;
    int width = 0;
    std::vector<double> pos;
    std::vector<double> neg;
    std::int64_t t_ref = 0;

    double& pos_at(int y, int x) { return pos[static_cast<std::size_t>(y) * width + x]; }
    double& neg_at(int y, int x) { return neg[static_cast<std::size_t>(y) * width + x]; }
    double pos_at(int y, int x) const { return pos[static_cast<std::size_t>(y) * width + x]; }
    double neg_at(int y, int x) const { return neg[static_cast<std::size_t>(y) * width + x]; }
};

// Builds the event volume over [t0, t1). Normalized time
// t* = (t - t0) / (t1 - t0) * (bins - 1); events outside the range are
// ignored. Throws std::invalid_argument if bins < 1 or t1 <= t0.
VoxelGrid voxelize(const EventStream& stream, int bins, std::int64_t t0, std::int64_t t1);

// Splats each event at x_k - d_k with 2D bilinear weights into the polarity
// image matching its sign. Out-of-bounds mass is dropped. Throws
// std::invalid_argument on displacement count mismatch.
PolarityImagePair accumulate(const EventStream& stream,
                             std::span<const Eigen::Vector2d> displacements,
                             std::int64_t t_ref);

}  // namespace evm
