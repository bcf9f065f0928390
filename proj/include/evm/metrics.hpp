#pragma once

#include <span>
#include <vector>

#include <Eigen/Core>

namespace evm {

// Per-frame, per-joint 3D positions (meters).
struct JointSet {
    int joints = 0;
    std::vector<std::vector<Eigen::Vector3d>> frames;

    int frame_count() const { return static_cast<int>(frames.size()); }
};

// Best similarity transform (rotation, translation, scale) taking src to dst
// in the least-squares sense.
struct SimilarityTransform {
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();
    double scale = 1.0;

    Eigen::Vector3d apply(const Eigen::Vector3d& p) const {
        return scale * (rotation * p) + translation;
    }
};
SimilarityTransform procrustes_align(std::span<const Eigen::Vector3d> src,
                                     std::span<const Eigen::Vector3d> dst);

struct MetricResult {
    double value_mm = 0.0;
    int fallback_frames = 0;  // pa_mpjpe frames that fell back to pel_mpjpe
};

// Mean per-joint position error in millimeters; pel subtracts the pelvis
// (joint 0) of both sets first; pa aligns predictions to ground truth with a
// per-frame similarity transform. Frames with fewer than 3 non-collinear
// joints fall back to the pelvis-adjusted error.
double mpjpe(const JointSet& pred, const JointSet& gt);
double pel_mpjpe(const JointSet& pred, const JointSet& gt);
MetricResult pa_mpjpe(const JointSet& pred, const JointSet& gt);

// Fraction of joints with error < 0.5 * head_len (meters), over all frames.
double pckh(const JointSet& pred, const JointSet& gt, double head_len);

}  // namespace evm
