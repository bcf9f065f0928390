#pragma once

#include <functional>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "evm/kinematics.hpp"
#include "evm/mlp.hpp"
#include "evm/rotation.hpp"

namespace evm {

// Local/global latent pair conditioning the motion decoder.
struct LatentCode {
    Eigen::VectorXd z_l;
    Eigen::VectorXd z_g;

    int dim() const { return static_cast<int>(z_l.size() + z_g.size()); }
    static LatentCode zeros(int d_local, int d_global) {
        return {Eigen::VectorXd::Zero(d_local), Eigen::VectorXd::Zero(d_global)};
    }
};

// sin/cos frequency features of normalized time. encode(t) returns
// [sin(2^k pi t^), cos(2^k pi t^)] for k = 0..freqs-1 with t^ = t / span.
// Throws std::domain_error outside [0, span]; the field never extrapolates.
struct PositionalEncoding {
    int freqs = 6;
    double span = 1.0;

    int dim() const { return 2 * freqs; }
    Eigen::VectorXd encode(double t) const;
};

struct DecoderConfig {
    int joints = 1;          // total joints including the root
    int freqs = 6;
    int d_local = 32;
    int d_global = 8;
    std::vector<int> hidden{128, 128, 128, 128};
    std::vector<int> skips{2};
    Activation act = Activation::Tanh;

    int output_dim() const { return 4 * (joints - 1) + 4; }
    int input_dim() const { return 2 * freqs + d_local + d_global; }
};

// The continuous-time motion function: network input is
// [encode(t), z_l, z_g]; raw per-joint 4-vectors are added to the identity
// quaternion and normalized. Zero weights therefore decode to the rest pose
// at every t.
class MotionDecoder {
public:
    MotionDecoder() = default;
    MotionDecoder(const DecoderConfig& cfg, double span);
    static MotionDecoder random(const DecoderConfig& cfg, double span, std::mt19937_64& rng,
                                double scale = 1.0);

    const DecoderConfig& config() const { return cfg_; }
    const PositionalEncoding& encoding() const { return pe_; }
    Mlp& mlp() { return mlp_; }
    const Mlp& mlp() const { return mlp_; }
    int joints() const { return cfg_.joints; }

    struct Rotations {
        std::vector<UnitQuaternion> local;  // joints-1 entries (non-root joints)
        UnitQuaternion root;
    };
    struct Trace {
        Mlp::Trace mlp;
        Eigen::VectorXd raw;  // identity-offset 4-vectors before normalization
    };

    Rotations decode(const LatentCode& z, double t) const;
    Rotations decode(const LatentCode& z, double t, Trace& trace) const;

    struct Grad {
        Mlp::Grad mlp;
        Eigen::VectorXd d_z_l;
        Eigen::VectorXd d_z_g;
    };
    Grad zero_grad() const;
    // Accumulates gradients given upstream raw 4-vector gradients on the unit
    // output quaternions (one per non-root joint, plus the root).
    void backward(const Trace& trace, std::span<const Eigen::Vector4d> d_local,
                  const Eigen::Vector4d& d_root, Grad& grad) const;

private:
    DecoderConfig cfg_;
    PositionalEncoding pe_;
    Mlp mlp_;
};

// Adapts a decoded rotation trajectory to a known initial pose:
// anchored(t) = R(t0) * decoded(t0)^-1 * decoded(t). Element 0 of the
// trajectory is the t0 sample. Relative motion is preserved and the anchored
// trajectory starts at the initial pose.
std::vector<Pose> anchor_root(const std::vector<Pose>& decoded, const Pose& init);

// Central-difference angular velocity of a rotation trajectory at t:
// 2 * log(q(t-h)^-1 q(t+h)) / (2h), using the vector part of the log map.
Eigen::Vector3d angular_velocity(const std::function<UnitQuaternion(double)>& q, double t,
                                 double h);
Eigen::Vector3d linear_velocity(const std::function<Eigen::Vector3d(double)>& p, double t,
                                double h);

// Explicit forward Euler: returns n+1 samples tau_k = tau0 + sum_{i<k} v_i dt.
std::vector<Eigen::Vector3d> integrate_root(const Eigen::Vector3d& tau0,
                                            std::span<const Eigen::Vector3d> velocities,
                                            double dt);

// Per-joint slerp plus linear root translation between two key poses.
std::vector<Pose> slerp_baseline(const Pose& p0, const Pose& p1, double t0, double t1,
                                 std::span<const double> queries);

// Interpolation-gap analysis: keyframes every `stride` samples of a dense
// trajectory, slerp between them, and the mean joint-position distance to the
// dense ground truth at every sample (meters). Throws std::invalid_argument
// if the stride is not in [1, samples).
struct SlerpGapResult {
    std::vector<double> gap_m;  // per dense sample
    double mean_m = 0.0;
    double max_m = 0.0;
};
SlerpGapResult slerp_gap(const BodyModel& model, std::span<const double> times_s,
                         std::span<const Pose> poses, int stride);

// Feature vector consumed by the global motion predictor: per joint the
// flattened anchored rotation (9), angular velocity (3), root-centered joint
// position (3) and velocity (3). pose_at must be valid on [0, span].
Eigen::VectorXd gmp_features(const BodyModel& model,
                             const std::function<Pose(double)>& pose_at, double t, double span,
                             double h);
int gmp_feature_dim(int joints);

// All learnable state of one sequence fit.
struct MotionModel {
    MotionDecoder decoder;
    Mlp gmp;  // gmp_feature_dim(joints) -> 3 root velocity
    LatentCode z;
    Pose init_pose;
    double span_s = 1.0;       // sequence duration; field times live in [0, span_s]
    std::int64_t t0_us = 0;    // stream timestamp of field time 0
};

struct FieldConfig {
    int integration_steps = 64;
    double velocity_fd_h = 1e-3;  // seconds
};

// Caches the anchor reference and the integrated root trajectory so poses can
// be sampled at arbitrary times. Sequence-level work (anchoring, GMP feature
// extraction, Euler integration) happens once in rebuild(); per-query work is
// one decoder evaluation.
class FieldEvaluator {
public:
    FieldEvaluator(const BodyModel& model, const MotionModel& state, FieldConfig cfg = {});

    // Refresh caches after parameter changes. gmp_only skips the decoder-
    // dependent caches (valid when only GMP weights moved).
    void rebuild(bool gmp_only = false);

    Pose pose_at(double t) const;
    // Parallel multi-time sampling; element i equals pose_at(ts[i]) bit-wise.
    std::vector<Pose> sample(std::span<const double> ts) const;

    Eigen::Vector3d root_translation(double t) const;
    Pose anchored_rotations_at(double t) const;  // root_t left at zero

    const std::vector<Eigen::Vector3d>& tau_nodes() const { return tau_nodes_; }
    const std::vector<Eigen::Vector3d>& tau_velocities() const { return tau_dot_; }
    const std::vector<Eigen::VectorXd>& features() const { return features_; }
    double dt() const { return dt_; }
    const std::vector<UnitQuaternion>& anchor_prefix() const { return anchor_prefix_; }
    const MotionModel& state() const { return state_; }
    const FieldConfig& field_config() const { return cfg_; }

private:
    const BodyModel& model_;
    const MotionModel& state_;
    FieldConfig cfg_;
    double dt_ = 0.0;
    // anchor_prefix_[j] = init_j * decoded_j(0)^-1; entry 0 is the root.
    std::vector<UnitQuaternion> anchor_prefix_;
    std::vector<Eigen::VectorXd> features_;
    std::vector<Eigen::Vector3d> tau_dot_;
    std::vector<Eigen::Vector3d> tau_nodes_;
};

}  // namespace evm
