#include "evm/encoder.hpp"

#include <cmath>
#include <stdexcept>

namespace evm {

int voxel_feature_dim(int bins, int patch_grid) { return bins * patch_grid * patch_grid * 2; }

Eigen::VectorXd voxel_features(const VoxelGrid& grid, int patch_grid) {
    if (patch_grid < 1) throw std::invalid_argument("patch_grid must be >= 1");
    Eigen::VectorXd feat = Eigen::VectorXd::Zero(voxel_feature_dim(grid.bins, patch_grid));
    for (int b = 0; b < grid.bins; ++b) {
        for (int py = 0; py < patch_grid; ++py) {
            int y0 = grid.height * py / patch_grid;
            int y1 = grid.height * (py + 1) / patch_grid;
            for (int px = 0; px < patch_grid; ++px) {
                int x0 = grid.width * px / patch_grid;
                int x1 = grid.width * (px + 1) / patch_grid;
                double sum = 0.0, abs_sum = 0.0;
                for (int y = y0; y < y1; ++y) {
                    for (int x = x0; x < x1; ++x) {
                        double v = grid.at(b, y, x);
                        sum += v;
                        abs_sum += std::abs(v);
                    }
                }
                int cells = std::max(1, (y1 - y0) * (x1 - x0));
                int idx = ((b * patch_grid + py) * patch_grid + px) * 2;
                feat[idx] = sum / cells;
                feat[idx + 1] = abs_sum;
            }
        }
    }
    return feat;
}

GruCell GruCell::zeros(int input_dim, int hidden_dim) {
    GruCell c;
    c.w_z = Eigen::MatrixXd::Zero(hidden_dim, input_dim);
    c.u_z = Eigen::MatrixXd::Zero(hidden_dim, hidden_dim);
    c.b_z = Eigen::VectorXd::Zero(hidden_dim);
    c.w_r = c.w_z;
    c.u_r = c.u_z;
    c.b_r = c.b_z;
    c.w_h = c.w_z;
    c.u_h = c.u_z;
    c.b_h = c.b_z;
    return c;
}

GruCell GruCell::random(int input_dim, int hidden_dim, std::mt19937_64& rng, double scale) {
    std::normal_distribution<double> dist(0.0, 1.0);
    auto fill = [&](Eigen::MatrixXd& m, int rows, int cols) {
        m.resize(rows, cols);
        double fan = std::sqrt(static_cast<double>(cols));
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * dist(rng) / fan;
    };
    GruCell c;
    fill(c.w_z, hidden_dim, input_dim);
    fill(c.u_z, hidden_dim, hidden_dim);
    fill(c.w_r, hidden_dim, input_dim);
    fill(c.u_r, hidden_dim, hidden_dim);
    fill(c.w_h, hidden_dim, input_dim);
    fill(c.u_h, hidden_dim, hidden_dim);
    c.b_z = Eigen::VectorXd::Zero(hidden_dim);
    c.b_r = Eigen::VectorXd::Zero(hidden_dim);
    c.b_h = Eigen::VectorXd::Zero(hidden_dim);
    for (Eigen::Index i = 0; i < hidden_dim; ++i) {
        c.b_z[i] = scale * dist(rng);
        c.b_r[i] = scale * dist(rng);
        c.b_h[i] = scale * dist(rng);
    }
    return c;
}

Eigen::VectorXd gru_step(const GruCell& cell, const Eigen::VectorXd& input,
                         const Eigen::VectorXd& h_prev) {
    if (input.size() != cell.input_dim() || h_prev.size() != cell.hidden_dim()) {
        throw std::invalid_argument("gru_step dimension mismatch");
    }
    auto sigmoid = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
    Eigen::VectorXd z = (cell.w_z * input + cell.u_z * h_prev + cell.b_z).unaryExpr(sigmoid);
    Eigen::VectorXd r = (cell.w_r * input + cell.u_r * h_prev + cell.b_r).unaryExpr(sigmoid);
    Eigen::VectorXd hc =
        (cell.w_h * input + cell.u_h * r.cwiseProduct(h_prev) + cell.b_h).array().tanh();
    return (1.0 - z.array()) * h_prev.array() + z.array() * hc.array();
}

LatentProjection LatentProjection::zeros(int hidden_dim, int d_local, int d_global) {
    LatentProjection p;
    p.weight = Eigen::MatrixXd::Zero(d_local + d_global, hidden_dim);
    p.bias = Eigen::VectorXd::Zero(d_local + d_global);
    p.d_local = d_local;
    return p;
}

LatentProjection LatentProjection::random(int hidden_dim, int d_local, int d_global,
                                          std::mt19937_64& rng, double scale) {
    LatentProjection p = zeros(hidden_dim, d_local, d_global);
    std::normal_distribution<double> dist(0.0, 1.0);
    double fan = std::sqrt(static_cast<double>(hidden_dim));
    for (Eigen::Index i = 0; i < p.weight.size(); ++i) {
        p.weight.data()[i] = scale * dist(rng) / fan;
    }
    for (Eigen::Index i = 0; i < p.bias.size(); ++i) p.bias[i] = scale * dist(rng);
    return p;
}

LatentCode encode_sequence(const GruCell& cell, const LatentProjection& proj,
                           std::span<const VoxelGrid> grids, int patch_grid) {
    if (grids.empty()) throw std::invalid_argument("encode_sequence needs at least one grid");
    Eigen::VectorXd h = Eigen::VectorXd::Zero(cell.hidden_dim());
    for (const VoxelGrid& grid : grids) {
        h = gru_step(cell, voxel_features(grid, patch_grid), h);
    }
    Eigen::VectorXd latent = proj.weight * h + proj.bias;
    LatentCode code;
    code.z_l = latent.head(proj.d_local);
    code.z_g = latent.tail(latent.size() - proj.d_local);
    return code;
}

}  // namespace evm
