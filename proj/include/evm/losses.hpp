#pragma once

#include <span>
#include <vector>

#include <Eigen/Core>

#include "evm/kinematics.hpp"
#include "evm/motion_field.hpp"
#include "evm/rotation.hpp"

namespace evm {

// Weights of the total objective. The first six follow the published
// defaults; prior_z weighs the standard-normal latent prior.
struct LossWeights {
    double ori = 10.0;
    double t = 10.0;
    double three_d = 20.0;
    double two_d = 20.0;
    double flow = 0.1;
    double contrast = 0.1;
    double prior_z = 1e-2;
};

// Geodesic rotation distance sqrt(2) * angle(pred, gt) for one pair, with an
// optional tangential gradient wrt pred (zero at the distance kink).
double geodesic_quat_distance(const UnitQuaternion& pred, const UnitQuaternion& gt,
                              Eigen::Vector4d* d_pred = nullptr);

// Sum over time and joints of the geodesic rotation distance
// sqrt(2) * angle(pred, gt). Trajectories are [time][joint].
double loss_ori(std::span<const std::vector<UnitQuaternion>> pred,
                std::span<const std::vector<UnitQuaternion>> gt);
// Same value, also accumulating dL/d(pred quat) raw 4-vectors into grads
// (resized/zeroed to match pred).
double loss_ori_grad(std::span<const std::vector<UnitQuaternion>> pred,
                     std::span<const std::vector<UnitQuaternion>> gt,
                     std::vector<std::vector<Eigen::Vector4d>>& grads);

// Sum of squared Euclidean distances (translations or 3D joints).
double loss_sq(std::span<const Eigen::Vector3d> pred, std::span<const Eigen::Vector3d> gt);
double loss_sq_grad(std::span<const Eigen::Vector3d> pred, std::span<const Eigen::Vector3d> gt,
                    std::vector<Eigen::Vector3d>& grads);

// 2D keypoint loss: predictions are projected with the camera before the
// squared comparison. Points behind the camera contribute nothing.
double loss_2d(const Camera& cam, std::span<const Eigen::Vector3d> pred_3d,
               std::span<const Eigen::Vector2d> gt_2d);
double loss_2d_grad(const Camera& cam, std::span<const Eigen::Vector3d> pred_3d,
                    std::span<const Eigen::Vector2d> gt_2d,
                    std::vector<Eigen::Vector3d>& grads);

// Sum over vertices of (1 - cos angle) between flow vectors; pairs where
// either vector is (near) zero are skipped, so alignment drives the loss to
// zero. All-zero inputs yield 0.
double loss_flow(std::span<const Eigen::Vector2d> shape_flow,
                 std::span<const Eigen::Vector2d> ref_flow);
double loss_flow_grad(std::span<const Eigen::Vector2d> shape_flow,
                      std::span<const Eigen::Vector2d> ref_flow,
                      std::vector<Eigen::Vector2d>& grads);

struct LossTerms {
    double ori = 0.0;
    double t = 0.0;
    double three_d = 0.0;
    double two_d = 0.0;
    double flow = 0.0;
    double contrast = 0.0;
    double prior = 0.0;  // 0.5 * |z|^2
};

// Weighted sum including the latent prior. Throws DataError if any component
// is not finite.
double total_loss(const LossTerms& terms, const LossWeights& weights);

double latent_prior(const LatentCode& z);

}  // namespace evm
