#include "evm/motion_field.hpp"

#include <cmath>
#include <stdexcept>

#include "evm/threading.hpp"

namespace evm {

Eigen::VectorXd PositionalEncoding::encode(double t) const {
    if (freqs < 1) throw std::invalid_argument("positional encoding needs freqs >= 1");
    if (t < 0.0 || t > span) {
        throw std::domain_error("time " + std::to_string(t) + " outside [0, " +
                                std::to_string(span) + "]");
    }
    Eigen::VectorXd out(2 * freqs);
    double tn = t / span;
    double factor = M_PI;
    for (int k = 0; k < freqs; ++k) {
        out[2 * k] = std::sin(factor * tn);
        out[2 * k + 1] = std::cos(factor * tn);
        factor *= 2.0;
    }
    return out;
}

namespace {

MlpConfig decoder_mlp_config(const DecoderConfig& cfg) {
    MlpConfig m;
    m.input_dim = cfg.input_dim();
    m.hidden = cfg.hidden;
    m.output_dim = cfg.output_dim();
    m.act = cfg.act;
    m.skips = cfg.skips;
    return m;
}

// q = s * v / |v| with s = +-1 the canonical sign; returns dL/dv given dL/dq.
Eigen::Vector4d normalize_backward(const Eigen::Vector4d& raw, const Eigen::Vector4d& d_q) {
    double n = raw.norm();
    Eigen::Vector4d unit = raw / n;
    double sign = unit[0] < 0.0 ? -1.0 : 1.0;
    return (sign / n) * (d_q - unit * unit.dot(d_q));
}

}  // namespace

MotionDecoder::MotionDecoder(const DecoderConfig& cfg, double span)
    : cfg_(cfg), pe_{cfg.freqs, span}, mlp_(decoder_mlp_config(cfg)) {
    if (cfg.joints < 1) throw std::invalid_argument("decoder needs joints >= 1");
    if (span <= 0.0) throw std::invalid_argument("decoder needs a positive time span");
}

MotionDecoder MotionDecoder::random(const DecoderConfig& cfg, double span, std::mt19937_64& rng,
                                    double scale) {
    MotionDecoder dec(cfg, span);
    dec.mlp_ = Mlp::random(decoder_mlp_config(cfg), rng, scale);
    return dec;
}

MotionDecoder::Rotations MotionDecoder::decode(const LatentCode& z, double t) const {
    Trace trace;
    return decode(z, t, trace);
}

MotionDecoder::Rotations MotionDecoder::decode(const LatentCode& z, double t,
                                               Trace& trace) const {
    if (z.z_l.size() != cfg_.d_local || z.z_g.size() != cfg_.d_global) {
        throw std::invalid_argument("latent code dims do not match decoder config");
    }
    Eigen::VectorXd x(cfg_.input_dim());
    x << pe_.encode(t), z.z_l, z.z_g;
    Eigen::VectorXd y = mlp_.forward(x, trace.mlp);

    trace.raw.resize(y.size());
    Rotations rot;
    rot.local.reserve(cfg_.joints - 1);
    for (int j = 0; j < cfg_.joints; ++j) {
        Eigen::Vector4d raw = y.segment<4>(4 * j);
        raw[0] += 1.0;  // delta about identity
        trace.raw.segment<4>(4 * j) = raw;
        UnitQuaternion q = UnitQuaternion::normalized(raw[0], raw[1], raw[2], raw[3]);
        if (j + 1 < cfg_.joints) {
            rot.local.push_back(q);
        } else {
            rot.root = q;
        }
    }
    return rot;
}

MotionDecoder::Grad MotionDecoder::zero_grad() const {
    Grad g;
    g.mlp = mlp_.zero_grad();
    g.d_z_l = Eigen::VectorXd::Zero(cfg_.d_local);
    g.d_z_g = Eigen::VectorXd::Zero(cfg_.d_global);
    return g;
}

void MotionDecoder::backward(const Trace& trace, std::span<const Eigen::Vector4d> d_local,
                             const Eigen::Vector4d& d_root, Grad& grad) const {
    if (static_cast<int>(d_local.size()) != cfg_.joints - 1) {
        throw std::invalid_argument("one local quaternion gradient per non-root joint required");
    }
    Eigen::VectorXd d_y(cfg_.output_dim());
    for (int j = 0; j < cfg_.joints; ++j) {
        const Eigen::Vector4d& up = j + 1 < cfg_.joints ? d_local[j] : d_root;
        d_y.segment<4>(4 * j) = normalize_backward(trace.raw.segment<4>(4 * j), up);
    }
    mlp_.backward(trace.mlp, d_y, grad.mlp);
    // Split the input gradient: [encoding, z_l, z_g].
    grad.d_z_l += grad.mlp.d_input.segment(pe_.dim(), cfg_.d_local);
    grad.d_z_g += grad.mlp.d_input.tail(cfg_.d_global);
    grad.mlp.d_input.setZero();  // consumed; time is not a learnable input
}

std::vector<Pose> anchor_root(const std::vector<Pose>& decoded, const Pose& init) {
    if (decoded.empty()) return {};
    const std::size_t joints = decoded[0].local.size();
    if (init.local.size() != joints) {
        throw std::invalid_argument("initial pose joint count mismatch");
    }
    std::vector<UnitQuaternion> prefix(joints);
    for (std::size_t j = 1; j < joints; ++j) {
        prefix[j] = init.local[j] * decoded[0].local[j].conjugate();
    }
    UnitQuaternion root_prefix = init.root_rot * decoded[0].root_rot.conjugate();

    std::vector<Pose> out(decoded.size());
    for (std::size_t i = 0; i < decoded.size(); ++i) {
        Pose p;
        p.local.resize(joints);
        if (joints > 0) p.local[0] = UnitQuaternion();
        for (std::size_t j = 1; j < joints; ++j) {
            p.local[j] = prefix[j] * decoded[i].local[j];
        }
        p.root_rot = root_prefix * decoded[i].root_rot;
        p.root_t = decoded[i].root_t;
        out[i] = std::move(p);
    }
    return out;
}

Eigen::Vector3d angular_velocity(const std::function<UnitQuaternion(double)>& q, double t,
                                 double h) {
    if (h <= 0.0) throw std::invalid_argument("angular_velocity needs h > 0");
    UnitQuaternion rel = q(t - h).conjugate() * q(t + h);
    return 2.0 * rel.log_vec() / (2.0 * h);
}

Eigen::Vector3d linear_velocity(const std::function<Eigen::Vector3d(double)>& p, double t,
                                double h) {
    if (h <= 0.0) throw std::invalid_argument("linear_velocity needs h > 0");
    return (p(t + h) - p(t - h)) / (2.0 * h);
}

std::vector<Eigen::Vector3d> integrate_root(const Eigen::Vector3d& tau0,
                                            std::span<const Eigen::Vector3d> velocities,
                                            double dt) {
    if (dt <= 0.0) throw std::invalid_argument("integrate_root needs dt > 0");
    std::vector<Eigen::Vector3d> out;
    out.reserve(velocities.size() + 1);
    Eigen::Vector3d tau = tau0;
    out.push_back(tau);
    for (const Eigen::Vector3d& v : velocities) {
        tau += v * dt;
        out.push_back(tau);
    }
    return out;
}

std::vector<Pose> slerp_baseline(const Pose& p0, const Pose& p1, double t0, double t1,
                                 std::span<const double> queries) {
    if (t1 <= t0) throw std::invalid_argument("slerp_baseline needs t1 > t0");
    if (p0.local.size() != p1.local.size()) {
        throw std::invalid_argument("key poses have different joint counts");
    }
    std::vector<Pose> out;
    out.reserve(queries.size());
    for (double t : queries) {
        if (t < t0 || t > t1) throw std::domain_error("query outside the keyframe interval");
        double u = (t - t0) / (t1 - t0);
        Pose p;
        p.local.resize(p0.local.size());
        for (std::size_t j = 0; j < p0.local.size(); ++j) {
            p.local[j] = slerp(p0.local[j], p1.local[j], u);
        }
        p.root_rot = slerp(p0.root_rot, p1.root_rot, u);
        p.root_t = (1.0 - u) * p0.root_t + u * p1.root_t;
        out.push_back(std::move(p));
    }
    return out;
}

SlerpGapResult slerp_gap(const BodyModel& model, std::span<const double> times_s,
                         std::span<const Pose> poses, int stride) {
    const int n = static_cast<int>(poses.size());
    if (times_s.size() != poses.size() || n < 2) {
        throw std::invalid_argument("slerp_gap needs a dense trajectory");
    }
    if (stride < 1 || stride >= n) {
        throw std::invalid_argument("stride must be in [1, samples)");
    }
    SlerpGapResult result;
    result.gap_m.assign(n, 0.0);
    for (int k0 = 0; k0 < n - 1; k0 += stride) {
        int k1 = std::min(k0 + stride, n - 1);
        std::vector<double> queries;
        for (int i = k0 + 1; i < k1; ++i) queries.push_back(times_s[i]);
        if (queries.empty()) continue;
        std::vector<Pose> interp =
            slerp_baseline(poses[k0], poses[k1], times_s[k0], times_s[k1], queries);
        for (std::size_t q = 0; q < queries.size(); ++q) {
            int i = k0 + 1 + static_cast<int>(q);
            FkResult fk_interp = forward_kinematics(model, interp[q]);
            FkResult fk_gt = forward_kinematics(model, poses[i]);
            double sum = 0.0;
            for (int j = 0; j < model.joint_count(); ++j) {
                sum += (fk_interp.position[j] - fk_gt.position[j]).norm();
            }
            result.gap_m[i] = sum / model.joint_count();
        }
    }
    double total = 0.0;
    for (double g : result.gap_m) {
        total += g;
        result.max_m = std::max(result.max_m, g);
    }
    result.mean_m = total / n;
    return result;
}

int gmp_feature_dim(int joints) { return joints * 18; }

Eigen::VectorXd gmp_features(const BodyModel& model,
                             const std::function<Pose(double)>& pose_at, double t, double span,
                             double h) {
    // Clamp the central-difference stencil at the domain boundary.
    double lo = std::max(0.0, t - h);
    double hi = std::min(span, t + h);
    if (hi <= lo) throw std::invalid_argument("velocity stencil collapsed");
    Pose pose = pose_at(t);
    Pose pose_lo = pose_at(lo);
    Pose pose_hi = pose_at(hi);
    const double inv_dt = 1.0 / (hi - lo);

    // Root-centered positions break the circular dependency on the predicted
    // translation: GMP sees the body in the root frame.
    auto centered = [](Pose p) {
        p.root_t.setZero();
        return p;
    };
    FkResult fk = forward_kinematics(model, centered(pose));
    FkResult fk_lo = forward_kinematics(model, centered(pose_lo));
    FkResult fk_hi = forward_kinematics(model, centered(pose_hi));

    const int joints = model.joint_count();
    Eigen::VectorXd feat(gmp_feature_dim(joints));
    auto joint_quat = [&](const Pose& p, int j) {
        return j == 0 ? p.root_rot : p.local[j];
    };
    for (int j = 0; j < joints; ++j) {
        Eigen::Matrix3d rot = joint_quat(pose, j).matrix();
        UnitQuaternion rel = joint_quat(pose_lo, j).conjugate() * joint_quat(pose_hi, j);
        Eigen::Vector3d omega = 2.0 * rel.log_vec() * inv_dt;
        Eigen::Vector3d vel = (fk_hi.position[j] - fk_lo.position[j]) * inv_dt;
        double* dst = feat.data() + 18 * j;
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 3; ++c) dst[3 * r + c] = rot(r, c);
        }
        Eigen::Map<Eigen::Vector3d>(dst + 9) = omega;
        Eigen::Map<Eigen::Vector3d>(dst + 12) = fk.position[j];
        Eigen::Map<Eigen::Vector3d>(dst + 15) = vel;
    }
    return feat;
}

FieldEvaluator::FieldEvaluator(const BodyModel& model, const MotionModel& state,
                               FieldConfig cfg)
    : model_(model), state_(state), cfg_(cfg) {
    if (cfg_.integration_steps < 1) {
        throw std::invalid_argument("field needs integration_steps >= 1");
    }
    dt_ = state_.span_s / cfg_.integration_steps;
    rebuild();
}

void FieldEvaluator::rebuild(bool gmp_only) {
    const int joints = model_.joint_count();
    if (!gmp_only) {
        MotionDecoder::Rotations at0 = state_.decoder.decode(state_.z, 0.0);
        anchor_prefix_.assign(joints, UnitQuaternion());
        anchor_prefix_[0] = state_.init_pose.root_rot * at0.root.conjugate();
        for (int j = 1; j < joints; ++j) {
            anchor_prefix_[j] = state_.init_pose.local[j] * at0.local[j - 1].conjugate();
        }

        auto pose_fn = [this](double t) { return anchored_rotations_at(t); };
        features_.resize(cfg_.integration_steps);
        for (int k = 0; k < cfg_.integration_steps; ++k) {
            features_[k] =
                gmp_features(model_, pose_fn, k * dt_, state_.span_s, cfg_.velocity_fd_h);
        }
    }
    tau_dot_.resize(cfg_.integration_steps);
    for (int k = 0; k < cfg_.integration_steps; ++k) {
        tau_dot_[k] = state_.gmp.forward(features_[k]);
    }
    tau_nodes_ = integrate_root(state_.init_pose.root_t, tau_dot_, dt_);
}

Pose FieldEvaluator::anchored_rotations_at(double t) const {
    MotionDecoder::Rotations rot = state_.decoder.decode(state_.z, t);
    Pose p;
    p.local.resize(model_.joint_count());
    p.local[0] = UnitQuaternion();
    for (int j = 1; j < model_.joint_count(); ++j) {
        p.local[j] = anchor_prefix_[j] * rot.local[j - 1];
    }
    p.root_rot = anchor_prefix_[0] * rot.root;
    return p;
}

Eigen::Vector3d FieldEvaluator::root_translation(double t) const {
    if (t < 0.0 || t > state_.span_s) throw std::domain_error("time outside the field domain");
    double pos = t / dt_;
    int k = std::min(static_cast<int>(std::floor(pos)), cfg_.integration_steps - 1);
    double u = pos - k;
    return (1.0 - u) * tau_nodes_[k] + u * tau_nodes_[k + 1];
}

Pose FieldEvaluator::pose_at(double t) const {
    Pose p = anchored_rotations_at(t);
    p.root_t = root_translation(t);
    return p;
}

std::vector<Pose> FieldEvaluator::sample(std::span<const double> ts) const {
    std::vector<Pose> out(ts.size());
    parallel_for(static_cast<std::int64_t>(ts.size()), 128,
                 [&](std::int64_t begin, std::int64_t end) {
                     for (std::int64_t i = begin; i < end; ++i) {
                         out[static_cast<std::size_t>(i)] = pose_at(ts[static_cast<std::size_t>(i)]);
                     }
                 });
    return out;
}

}  // namespace evm
