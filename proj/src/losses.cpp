#include "evm/losses.hpp"

#include <cmath>
#include <stdexcept>

#include "evm/common.hpp"

namespace evm {

// Geodesic distance sqrt(2) * theta expressed through the quaternion dot:
// |dot(p, g)| = cos(theta / 2). The gradient wrt p is tangential with norm
// 2*sqrt(2); near theta = 0 the distance has a norm-type kink and the
// gradient is defined as 0 there.
double geodesic_quat_distance(const UnitQuaternion& pred, const UnitQuaternion& gt,
                              Eigen::Vector4d* d_pred) {
    double d = pred.dot(gt);
    double ad = std::min(1.0, std::abs(d));
    double theta = 2.0 * std::acos(ad);
    if (d_pred) {
        Eigen::Vector4d p = pred.coeffs(), g = gt.coeffs();
        Eigen::Vector4d tangent = g - d * p;  // norm = sin(theta/2)
        double tn = tangent.norm();
        if (tn < 1e-12) {
            d_pred->setZero();
        } else {
            double sign = d >= 0.0 ? 1.0 : -1.0;
            *d_pred = -2.0 * std::sqrt(2.0) * sign * tangent / tn;
        }
    }
    return std::sqrt(2.0) * theta;
}

namespace {
inline double geodesic_quat(const UnitQuaternion& pred, const UnitQuaternion& gt,
                            Eigen::Vector4d* d_pred) {
    return geodesic_quat_distance(pred, gt, d_pred);
}
}  // namespace

double loss_ori(std::span<const std::vector<UnitQuaternion>> pred,
                std::span<const std::vector<UnitQuaternion>> gt) {
    std::vector<std::vector<Eigen::Vector4d>> unused;
    if (pred.size() != gt.size()) throw std::invalid_argument("trajectory length mismatch");
    double total = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (pred[i].size() != gt[i].size()) {
            throw std::invalid_argument("joint count mismatch at frame " + std::to_string(i));
        }
        for (std::size_t j = 0; j < pred[i].size(); ++j) {
            total += geodesic_quat(pred[i][j], gt[i][j], nullptr);
        }
    }
    return total;
}

double loss_ori_grad(std::span<const std::vector<UnitQuaternion>> pred,
                     std::span<const std::vector<UnitQuaternion>> gt,
                     std::vector<std::vector<Eigen::Vector4d>>& grads) {
    if (pred.size() != gt.size()) throw std::invalid_argument("trajectory length mismatch");
    grads.assign(pred.size(), {});
    double total = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (pred[i].size() != gt[i].size()) {
            throw std::invalid_argument("joint count mismatch at frame " + std::to_string(i));
        }
        grads[i].assign(pred[i].size(), Eigen::Vector4d::Zero());
        for (std::size_t j = 0; j < pred[i].size(); ++j) {
            Eigen::Vector4d g;
            total += geodesic_quat(pred[i][j], gt[i][j], &g);
            grads[i][j] = g;
        }
    }
    return total;
}

double loss_sq(std::span<const Eigen::Vector3d> pred, std::span<const Eigen::Vector3d> gt) {
    if (pred.size() != gt.size()) throw std::invalid_argument("shape mismatch");
    double total = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) total += (pred[i] - gt[i]).squaredNorm();
    return total;
}

double loss_sq_grad(std::span<const Eigen::Vector3d> pred, std::span<const Eigen::Vector3d> gt,
                    std::vector<Eigen::Vector3d>& grads) {
    if (pred.size() != gt.size()) throw std::invalid_argument("shape mismatch");
    grads.assign(pred.size(), Eigen::Vector3d::Zero());
    double total = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        Eigen::Vector3d diff = pred[i] - gt[i];
        total += diff.squaredNorm();
        grads[i] = 2.0 * diff;
    }
    return total;
}

double loss_2d(const Camera& cam, std::span<const Eigen::Vector3d> pred_3d,
               std::span<const Eigen::Vector2d> gt_2d) {
    if (pred_3d.size() != gt_2d.size()) throw std::invalid_argument("shape mismatch");
    double total = 0.0;
    for (std::size_t i = 0; i < pred_3d.size(); ++i) {
        if (pred_3d[i].z() <= 0.0) continue;
        total += (project(cam, pred_3d[i]) - gt_2d[i]).squaredNorm();
    }
    return total;
}

double loss_2d_grad(const Camera& cam, std::span<const Eigen::Vector3d> pred_3d,
                    std::span<const Eigen::Vector2d> gt_2d,
                    std::vector<Eigen::Vector3d>& grads) {
    if (pred_3d.size() != gt_2d.size()) throw std::invalid_argument("shape mismatch");
    grads.assign(pred_3d.size(), Eigen::Vector3d::Zero());
    double total = 0.0;
    for (std::size_t i = 0; i < pred_3d.size(); ++i) {
        if (pred_3d[i].z() <= 0.0) continue;
        Eigen::Vector2d diff = project(cam, pred_3d[i]) - gt_2d[i];
        total += diff.squaredNorm();
        grads[i] = project_jacobian(cam, pred_3d[i]).transpose() * (2.0 * diff);
    }
    return total;
}

namespace {
constexpr double kFlowEps = 1e-12;
}

double loss_flow(std::span<const Eigen::Vector2d> shape_flow,
                 std::span<const Eigen::Vector2d> ref_flow) {
    if (shape_flow.size() != ref_flow.size()) throw std::invalid_argument("vertex count mismatch");
    double total = 0.0;
    for (std::size_t i = 0; i < shape_flow.size(); ++i) {
        double na = shape_flow[i].norm(), nb = ref_flow[i].norm();
        if (na < kFlowEps || nb < kFlowEps) continue;
        total += 1.0 - shape_flow[i].dot(ref_flow[i]) / (na * nb);
    }
    return total;
}

double loss_flow_grad(std::span<const Eigen::Vector2d> shape_flow,
                      std::span<const Eigen::Vector2d> ref_flow,
                      std::vector<Eigen::Vector2d>& grads) {
    if (shape_flow.size() != ref_flow.size()) throw std::invalid_argument("vertex count mismatch");
    grads.assign(shape_flow.size(), Eigen::Vector2d::Zero());
    double total = 0.0;
    for (std::size_t i = 0; i < shape_flow.size(); ++i) {
        const Eigen::Vector2d &a = shape_flow[i], &b = ref_flow[i];
        double na = a.norm(), nb = b.norm();
        if (na < kFlowEps || nb < kFlowEps) continue;
        double cosv = a.dot(b) / (na * nb);
        total += 1.0 - cosv;
        grads[i] = -(b / (na * nb) - a * (cosv / (na * na)));
    }
    return total;
}

double latent_prior(const LatentCode& z) {
    return 0.5 * (z.z_l.squaredNorm() + z.z_g.squaredNorm());
}

double total_loss(const LossTerms& terms, const LossWeights& weights) {
    const double components[] = {terms.ori, terms.t,    terms.three_d, terms.two_d,
                                 terms.flow, terms.contrast, terms.prior};
    for (double c : components) {
        if (!std::isfinite(c)) throw DataError("non-finite loss component");
    }
    return weights.ori * terms.ori + weights.t * terms.t + weights.three_d * terms.three_d +
           weights.two_d * terms.two_d + weights.flow * terms.flow +
           weights.contrast * terms.contrast + weights.prior_z * terms.prior;
}

}  // namespace evm
