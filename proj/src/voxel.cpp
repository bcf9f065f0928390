#include "evm/voxel.hpp"

#include <cmath>
#include <stdexcept>

namespace evm {

double VoxelGrid::sum() const {
    double s = 0.0;
    for (double v : values) s += v;
    return s;
}

VoxelGrid voxelize(const EventStream& stream, int bins, std::int64_t t0, std::int64_t t1) {
    if (bins < 1) throw std::invalid_argument("voxelize needs bins >= 1");
    if (t1 <= t0) throw std::invalid_argument("voxelize needs t1 > t0");

    VoxelGrid grid;
    grid.bins = bins;
    grid.height = static_cast<int>(stream.height);
    grid.width = static_cast<int>(stream.width);
    grid.t0 = t0;
    grid.t1 = t1;
    grid.values.assign(static_cast<std::size_t>(bins) * grid.height * grid.width, 0.0);

    const double span = static_cast<double>(t1 - t0);
    for (const Event& e : stream.events) {
        if (e.t_us < t0 || e.t_us >= t1) continue;
        double tn = static_cast<double>(e.t_us - t0) / span * (bins - 1);
        int b0 = static_cast<int>(std::floor(tn));
        double w1 = tn - b0;
        double p = static_cast<double>(e.p);
        grid.at(b0, e.y, e.x) += p * (1.0 - w1);
        if (w1 != 0.0 && b0 + 1 < bins) grid.at(b0 + 1, e.y, e.x) += p * w1;
    }
    return grid;
}

PolarityImagePair accumulate(const EventStream& stream,
                             std::span<const Eigen::Vector2d> displacements,
                             std::int64_t t_ref) {
    if (displacements.size() != stream.events.size()) {
        throw std::invalid_argument("one displacement per event required");
    }
    PolarityImagePair img;
    img.height = static_cast<int>(stream.height);
    img.width = static_cast<int>(stream.width);
    img.t_ref = t_ref;
    img.pos.assign(static_cast<std::size_t>(img.height) * img.width, 0.0);
    img.neg.assign(static_cast<std::size_t>(img.height) * img.width, 0.0);

    for (std::size_t k = 0; k < stream.events.size(); ++k) {
        const Event& e = stream.events[k];
        double px = static_cast<double>(e.x) - displacements[k].x();
        double py = static_cast<double>(e.y) - displacements[k].y();
        int ix = static_cast<int>(std::floor(px));
        int iy = static_cast<int>(std::floor(py));
        double fx = px - ix, fy = py - iy;
        std::vector<double>& ch = e.p > 0 ? img.pos : img.neg;
        auto splat = [&](int x, int y, double w) {
            if (w == 0.0 || x < 0 || x >= img.width || y < 0 || y >= img.height) return;
            ch[static_cast<std::size_t>(y) * img.width + x] += w;
        };
        splat(ix, iy, (1.0 - fx) * (1.0 - fy));
        splat(ix + 1, iy, fx * (1.0 - fy));
        splat(ix, iy + 1, (1.0 - fx) * fy);
        splat(ix + 1, iy + 1, fx * fy);
    }
    return img;
}

}  // namespace evm
