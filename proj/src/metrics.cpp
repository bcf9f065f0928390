#include "evm/metrics.hpp"

#include <cmath>
#include <stdexcept>

#include <Eigen/LU>
#include <Eigen/SVD>

namespace evm {

namespace {

constexpr double kMetersToMm = 1000.0;

void check_shapes(const JointSet& pred, const JointSet& gt) {
    if (pred.joints != gt.joints || pred.frames.size() != gt.frames.size()) {
        throw std::invalid_argument("joint set shape mismatch");
    }
    for (std::size_t f = 0; f < pred.frames.size(); ++f) {
        if (static_cast<int>(pred.frames[f].size()) != pred.joints ||
            static_cast<int>(gt.frames[f].size()) != gt.joints) {
            throw std::invalid_argument("frame " + std::to_string(f) + " has wrong joint count");
        }
    }
}

double frame_error(std::span<const Eigen::Vector3d> pred, std::span<const Eigen::Vector3d> gt) {
    double sum = 0.0;
    for (std::size_t j = 0; j < pred.size(); ++j) sum += (pred[j] - gt[j]).norm();
    return sum / static_cast<double>(pred.size());
}

double pel_frame_error(std::span<const Eigen::Vector3d> pred,
                       std::span<const Eigen::Vector3d> gt) {
    double sum = 0.0;
    for (std::size_t j = 0; j < pred.size(); ++j) {
        sum += ((pred[j] - pred[0]) - (gt[j] - gt[0])).norm();
    }
    return sum / static_cast<double>(pred.size());
}

// Smallest two singular values vanish when the centered points are collinear.
bool collinear(std::span<const Eigen::Vector3d> pts) {
    Eigen::Vector3d mean = Eigen::Vector3d::Zero();
    for (const auto& p : pts) mean += p;
    mean /= static_cast<double>(pts.size());
    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    for (const auto& p : pts) cov += (p - mean) * (p - mean).transpose();
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov);
    const auto& s = svd.singularValues();
    return s[0] <= 0.0 || s[1] / s[0] < 1e-12;
}

}  // namespace

SimilarityTransform procrustes_align(std::span<const Eigen::Vector3d> src,
                                     std::span<const Eigen::Vector3d> dst) {
    if (src.size() != dst.size() || src.empty()) {
        throw std::invalid_argument("procrustes needs matched nonempty point sets");
    }
    const double n = static_cast<double>(src.size());
    Eigen::Vector3d mu_s = Eigen::Vector3d::Zero(), mu_d = Eigen::Vector3d::Zero();
    for (std::size_t i = 0; i < src.size(); ++i) {
        mu_s += src[i];
        mu_d += dst[i];
    }
    mu_s /= n;
    mu_d /= n;

    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    double var_s = 0.0;
    for (std::size_t i = 0; i < src.size(); ++i) {
        Eigen::Vector3d cs = src[i] - mu_s, cd = dst[i] - mu_d;
        cov += cd * cs.transpose();
        var_s += cs.squaredNorm();
    }
    cov /= n;
    var_s /= n;

    Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Vector3d d = Eigen::Vector3d::Ones();
    if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) d[2] = -1.0;

    SimilarityTransform out;
    out.rotation = svd.matrixU() * d.asDiagonal() * svd.matrixV().transpose();
    double trace_ds = svd.singularValues().dot(d);
    out.scale = var_s > 0.0 ? trace_ds / var_s : 1.0;
    out.translation = mu_d - out.scale * (out.rotation * mu_s);
    return out;
}

double mpjpe(const JointSet& pred, const JointSet& gt) {
    check_shapes(pred, gt);
    if (pred.frames.empty()) return 0.0;
    double sum = 0.0;
    for (std::size_t f = 0; f < pred.frames.size(); ++f) {
        sum += frame_error(pred.frames[f], gt.frames[f]);
    }
    return kMetersToMm * sum / static_cast<double>(pred.frames.size());
}

double pel_mpjpe(const JointSet& pred, const JointSet& gt) {
    check_shapes(pred, gt);
    if (pred.frames.empty()) return 0.0;
    double sum = 0.0;
    for (std::size_t f = 0; f < pred.frames.size(); ++f) {
        sum += pel_frame_error(pred.frames[f], gt.frames[f]);
    }
    return kMetersToMm * sum / static_cast<double>(pred.frames.size());
}

MetricResult pa_mpjpe(const JointSet& pred, const JointSet& gt) {
    check_shapes(pred, gt);
    MetricResult result;
    if (pred.frames.empty()) return result;
    double sum = 0.0;
    for (std::size_t f = 0; f < pred.frames.size(); ++f) {
        const auto& p = pred.frames[f];
        const auto& g = gt.frames[f];
        if (pred.joints < 3 || collinear(g)) {
            sum += pel_frame_error(p, g);
            ++result.fallback_frames;
            continue;
        }
        SimilarityTransform xf = procrustes_align(p, g);
        double err = 0.0;
        for (int j = 0; j < pred.joints; ++j) err += (xf.apply(p[j]) - g[j]).norm();
        sum += err / static_cast<double>(pred.joints);
    }
    result.value_mm = kMetersToMm * sum / static_cast<double>(pred.frames.size());
    return result;
}

double pckh(const JointSet& pred, const JointSet& gt, double head_len) {
    check_shapes(pred, gt);
    if (head_len <= 0.0) throw std::invalid_argument("pckh needs head_len > 0");
    if (pred.frames.empty()) return 1.0;
    std::size_t correct = 0, total = 0;
    for (std::size_t f = 0; f < pred.frames.size(); ++f) {
        for (int j = 0; j < pred.joints; ++j) {
            if ((pred.frames[f][j] - gt.frames[f][j]).norm() < 0.5 * head_len) ++correct;
            ++total;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(total);
}

}  // namespace evm
