#pragma once

#include <random>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "evm/motion_field.hpp"
#include "evm/voxel.hpp"

namespace evm {

// Pooled voxel statistics standing in for a learned feature extractor: per
// time bin and per spatial patch, the cell mean and the absolute sum,
// flattened bin-major. Feature dim = bins * patch_grid^2 * 2.
Eigen::VectorXd voxel_features(const VoxelGrid& grid, int patch_grid);
int voxel_feature_dim(int bins, int patch_grid);

// Gated recurrent unit:
//   z = sigmoid(Wz f + Uz h + bz)
//   r = sigmoid(Wr f + Ur h + br)
//   hc = tanh(Wh f + Uh (r . h) + bh)
//   h' = (1 - z) . h + z . hc
struct GruCell {
    Eigen::MatrixXd w_z, u_z;
    Eigen::VectorXd b_z;
    Eigen::MatrixXd w_r, u_r;
    Eigen::VectorXd b_r;
    Eigen::MatrixXd w_h, u_h;
    Eigen::VectorXd b_h;

    static GruCell zeros(int input_dim, int hidden_dim);
    static GruCell random(int input_dim, int hidden_dim, std::mt19937_64& rng, double scale);

    int input_dim() const { return static_cast<int>(w_z.cols()); }
    int hidden_dim() const { return static_cast<int>(w_z.rows()); }
};

Eigen::VectorXd gru_step(const GruCell& cell, const Eigen::VectorXd& input,
                         const Eigen::VectorXd& h_prev);

// Linear map from the terminal hidden state to [z_l, z_g] (z_l first).
struct LatentProjection {
    Eigen::MatrixXd weight;  // (d_local + d_global) x hidden
    Eigen::VectorXd bias;
    int d_local = 0;

    static LatentProjection zeros(int hidden_dim, int d_local, int d_global);
    static LatentProjection random(int hidden_dim, int d_local, int d_global,
                                   std::mt19937_64& rng, double scale);
};

// Folds gru_step over per-grid features from h0 = 0 and projects the final
// hidden state. Throws std::invalid_argument on an empty sequence.
LatentCode encode_sequence(const GruCell& cell, const LatentProjection& proj,
                           std::span<const VoxelGrid> grids, int patch_grid);

}  // namespace evm
