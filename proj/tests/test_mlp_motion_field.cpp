#include <doctest.h>

#include <random>

#include "evm/mlp.hpp"
#include "evm/motion_field.hpp"
#include "test_models.hpp"
#include "test_util.hpp"

using evm::DecoderConfig;
using evm::LatentCode;
using evm::Mlp;
using evm::MlpConfig;
using evm::MotionDecoder;
using test_util::rel_err;

namespace {

DecoderConfig small_decoder_config(std::mt19937_64& rng) {
    std::uniform_int_distribution<int> joints(1, 4), width(6, 14), freqs(1, 3), dim(2, 5);
    std::uniform_int_distribution<int> layers(1, 3), coin(0, 1);
    DecoderConfig cfg;
    cfg.joints = joints(rng);
    cfg.freqs = freqs(rng);
    cfg.d_local = dim(rng);
    cfg.d_global = dim(rng);
    cfg.hidden.clear();
    int n_layers = layers(rng);
    for (int l = 0; l < n_layers; ++l) cfg.hidden.push_back(width(rng));
    cfg.skips.clear();
    if (n_layers >= 2 && coin(rng)) cfg.skips.push_back(1);
    return cfg;
}

// Scalar probe loss: fixed random linear functional over the output
// quaternion coefficients.
struct QuatProbe {
    std::vector<Eigen::Vector4d> d_local;
    Eigen::Vector4d d_root;

    static QuatProbe random(int joints, std::mt19937_64& rng) {
        std::normal_distribution<double> dist(0.0, 1.0);
        QuatProbe p;
        p.d_local.resize(joints - 1);
        for (auto& v : p.d_local) {
            for (int c = 0; c < 4; ++c) v[c] = dist(rng);
        }
        for (int c = 0; c < 4; ++c) p.d_root[c] = dist(rng);
        return p;
    }

    double apply(const MotionDecoder::Rotations& rot) const {
        double loss = p_dot(rot.root, d_root);
        for (std::size_t j = 0; j < rot.local.size(); ++j) {
            loss += p_dot(rot.local[j], d_local[j]);
        }
        return loss;
    }

private:
    static double p_dot(const evm::UnitQuaternion& q, const Eigen::Vector4d& g) {
        return g.dot(q.coeffs());
    }
};

}  // namespace

TEST_CASE("positional encoding endpoints and formula") {
    evm::PositionalEncoding pe{3, 2.0};
    Eigen::VectorXd at0 = pe.encode(0.0);
    for (int k = 0; k < 3; ++k) {
        CHECK(at0[2 * k] == doctest::Approx(0.0));
        CHECK(at0[2 * k + 1] == doctest::Approx(1.0));
    }
    Eigen::VectorXd at_end = pe.encode(2.0);
    CHECK(at_end[0] == doctest::Approx(std::sin(M_PI)).epsilon(1e-12));
    CHECK(at_end[1] == doctest::Approx(-1.0));

    double t = 1.234;
    Eigen::VectorXd enc = pe.encode(t);
    for (int k = 0; k < 3; ++k) {
        double arg = std::pow(2.0, k) * M_PI * (t / 2.0);
        CHECK(enc[2 * k] == doctest::Approx(std::sin(arg)).epsilon(1e-12));
        CHECK(enc[2 * k + 1] == doctest::Approx(std::cos(arg)).epsilon(1e-12));
    }
    CHECK_THROWS_AS(pe.encode(-0.1), std::domain_error);
    CHECK_THROWS_AS(pe.encode(2.1), std::domain_error);
}

TEST_CASE("mlp forward matches an independent scalar oracle") {
    std::mt19937_64 rng(101);
    MlpConfig cfg;
    cfg.input_dim = 5;
    cfg.hidden = {7, 6};
    cfg.output_dim = 3;
    cfg.skips = {1};
    Mlp mlp = Mlp::random(cfg, rng, 1.0);

    Eigen::VectorXd x(5);
    for (int i = 0; i < 5; ++i) x[i] = 0.1 * (i + 1);

    // Scalar re-implementation with plain loops.
    auto layer = [&](const Eigen::MatrixXd& w, const Eigen::VectorXd& b,
                     const std::vector<double>& in) {
        std::vector<double> out(w.rows());
        for (Eigen::Index r = 0; r < w.rows(); ++r) {
            double s = b[r];
            for (Eigen::Index c = 0; c < w.cols(); ++c) s += w(r, c) * in[c];
            out[r] = s;
        }
        return out;
    };
    std::vector<double> h(x.data(), x.data() + 5);
    std::vector<double> x0 = h;
    h = layer(mlp.weights()[0], mlp.biases()[0], h);
    for (double& v : h) v = std::tanh(v);
    std::vector<double> cat = h;
    cat.insert(cat.end(), x0.begin(), x0.end());
    h = layer(mlp.weights()[1], mlp.biases()[1], cat);
    for (double& v : h) v = std::tanh(v);
    std::vector<double> y = layer(mlp.weights()[2], mlp.biases()[2], h);

    Eigen::VectorXd out = mlp.forward(x);
    for (int i = 0; i < 3; ++i) CHECK(std::abs(out[i] - y[i]) < 1e-12);
}

TEST_CASE("zero decoder outputs identity rotations everywhere") {
    DecoderConfig cfg;
    cfg.joints = 4;
    cfg.d_local = 3;
    cfg.d_global = 2;
    cfg.hidden = {8, 8};
    cfg.skips = {1};
    MotionDecoder dec(cfg, 1.0);
    LatentCode z = LatentCode::zeros(3, 2);
    for (double t : {0.0, 0.3, 1.0}) {
        MotionDecoder::Rotations rot = dec.decode(z, t);
        CHECK(rot.root.w() == doctest::Approx(1.0));
        for (const auto& q : rot.local) CHECK(q.w() == doctest::Approx(1.0));
    }
}

TEST_CASE("decode is deterministic") {
    std::mt19937_64 rng(103);
    DecoderConfig cfg = small_decoder_config(rng);
    MotionDecoder dec = MotionDecoder::random(cfg, 1.0, rng);
    LatentCode z;
    z.z_l = Eigen::VectorXd::Random(cfg.d_local);
    z.z_g = Eigen::VectorXd::Random(cfg.d_global);
    MotionDecoder::Rotations a = dec.decode(z, 0.37);
    MotionDecoder::Rotations b = dec.decode(z, 0.37);
    CHECK((a.root.coeffs() - b.root.coeffs()).norm() == 0.0);
    for (std::size_t j = 0; j < a.local.size(); ++j) {
        CHECK((a.local[j].coeffs() - b.local[j].coeffs()).norm() == 0.0);
    }
}

TEST_CASE("decoder gradients match central finite differences on 20 configs") {
    std::mt19937_64 rng(107);
    const double h = 1e-5;
    for (int config = 0; config < 20; ++config) {
        DecoderConfig cfg = small_decoder_config(rng);
        MotionDecoder dec = MotionDecoder::random(cfg, 1.0, rng);
        LatentCode z;
        z.z_l = 0.3 * Eigen::VectorXd::Random(cfg.d_local);
        z.z_g = 0.3 * Eigen::VectorXd::Random(cfg.d_global);
        double t = 0.41;
        QuatProbe probe = QuatProbe::random(cfg.joints, rng);

        MotionDecoder::Trace trace;
        dec.decode(z, t, trace);
        MotionDecoder::Grad grad = dec.zero_grad();
        dec.backward(trace, probe.d_local, probe.d_root, grad);

        double max_err = 0.0;
        // z gradients
        for (int part = 0; part < 2; ++part) {
            Eigen::VectorXd& zv = part == 0 ? z.z_l : z.z_g;
            const Eigen::VectorXd& gv = part == 0 ? grad.d_z_l : grad.d_z_g;
            for (Eigen::Index i = 0; i < zv.size(); ++i) {
                double keep = zv[i];
                zv[i] = keep + h;
                double up = probe.apply(dec.decode(z, t));
                zv[i] = keep - h;
                double down = probe.apply(dec.decode(z, t));
                zv[i] = keep;
                max_err = std::max(max_err, rel_err(gv[i], (up - down) / (2 * h)));
            }
        }
        // a sample of weight gradients per layer (full sweep is slow)
        std::uniform_int_distribution<int> pick_row(0, 1000), pick_col(0, 1000);
        for (int l = 0; l < dec.mlp().layer_count(); ++l) {
            Eigen::MatrixXd& w = dec.mlp().weight(l);
            for (int probe_i = 0; probe_i < 6; ++probe_i) {
                Eigen::Index r = pick_row(rng) % w.rows();
                Eigen::Index c = pick_col(rng) % w.cols();
                double keep = w(r, c);
                w(r, c) = keep + h;
                double up = probe.apply(dec.decode(z, t));
                w(r, c) = keep - h;
                double down = probe.apply(dec.decode(z, t));
                w(r, c) = keep;
                max_err = std::max(max_err,
                                   rel_err(grad.mlp.d_weights[l](r, c), (up - down) / (2 * h)));
            }
            Eigen::VectorXd& b = dec.mlp().bias(l);
            Eigen::Index r = pick_row(rng) % b.size();
            double keep = b[r];
            b[r] = keep + h;
            double up = probe.apply(dec.decode(z, t));
            b[r] = keep - h;
            double down = probe.apply(dec.decode(z, t));
            b[r] = keep;
            max_err = std::max(max_err, rel_err(grad.mlp.d_biases[l][r], (up - down) / (2 * h)));
        }
        CHECK(max_err < 1e-4);
    }
}

TEST_CASE("zero upstream gradient and zero-weight decoder gradients vanish") {
    std::mt19937_64 rng(109);
    DecoderConfig cfg = small_decoder_config(rng);
    MotionDecoder dec = MotionDecoder::random(cfg, 1.0, rng);
    LatentCode z = LatentCode::zeros(cfg.d_local, cfg.d_global);

    MotionDecoder::Trace trace;
    dec.decode(z, 0.2, trace);
    MotionDecoder::Grad grad = dec.zero_grad();
    std::vector<Eigen::Vector4d> zero_local(cfg.joints - 1, Eigen::Vector4d::Zero());
    dec.backward(trace, zero_local, Eigen::Vector4d::Zero(), grad);
    CHECK(grad.d_z_l.norm() == 0.0);
    CHECK(grad.d_z_g.norm() == 0.0);
    for (const auto& w : grad.mlp.d_weights) CHECK(w.norm() == 0.0);

    // constant (zero-weight) decoder: z gradient is exactly zero
    MotionDecoder zero_dec(cfg, 1.0);
    MotionDecoder::Trace trace2;
    zero_dec.decode(z, 0.2, trace2);
    MotionDecoder::Grad grad2 = zero_dec.zero_grad();
    QuatProbe probe = QuatProbe::random(cfg.joints, rng);
    zero_dec.backward(trace2, probe.d_local, probe.d_root, grad2);
    CHECK(grad2.d_z_l.norm() == 0.0);
    CHECK(grad2.d_z_g.norm() == 0.0);
}

TEST_CASE("batch decode equals per-time decode bit-wise") {
    std::mt19937_64 rng(113);
    evm::BodyModel model = test_models::chain(3);
    evm::MotionModel state;
    state.span_s = 1.0;
    DecoderConfig cfg;
    cfg.joints = 3;
    cfg.d_local = 4;
    cfg.d_global = 2;
    cfg.hidden = {16, 16};
    cfg.skips = {1};
    state.decoder = MotionDecoder::random(cfg, 1.0, rng, 0.5);
    state.gmp = Mlp::random(MlpConfig{evm::gmp_feature_dim(3), {8}, 3, evm::Activation::Tanh, {}},
                            rng, 0.1);
    state.z = LatentCode::zeros(4, 2);
    state.z.z_l << 0.1, -0.2, 0.3, 0.0;
    state.init_pose = evm::Pose::identity(3);

    evm::FieldEvaluator field(model, state);
    std::vector<double> ts;
    for (int i = 0; i < 300; ++i) ts.push_back(i / 299.0);
    std::vector<evm::Pose> batch = field.sample(ts);
    for (std::size_t i = 0; i < ts.size(); ++i) {
        evm::Pose single = field.pose_at(ts[i]);
        CHECK((batch[i].root_rot.coeffs() - single.root_rot.coeffs()).norm() == 0.0);
        CHECK((batch[i].root_t - single.root_t).norm() == 0.0);
        for (std::size_t j = 0; j < single.local.size(); ++j) {
            CHECK((batch[i].local[j].coeffs() - single.local[j].coeffs()).norm() == 0.0);
        }
    }
}

TEST_CASE("anchor_root pins the initial pose and preserves relative motion") {
    std::mt19937_64 rng(127);
    const int joints = 4;
    evm::Pose init = evm::Pose::identity(joints);
    init.root_rot = test_util::random_quat(rng);
    for (int j = 1; j < joints; ++j) init.local[j] = test_util::random_quat(rng);

    std::vector<evm::Pose> traj;
    for (int i = 0; i < 10; ++i) {
        evm::Pose p = evm::Pose::identity(joints);
        p.root_rot = test_util::random_quat(rng);
        for (int j = 1; j < joints; ++j) p.local[j] = test_util::random_quat(rng);
        traj.push_back(p);
    }

    std::vector<evm::Pose> anchored = evm::anchor_root(traj, init);
    CHECK(std::abs(anchored[0].root_rot.dot(init.root_rot)) ==
          doctest::Approx(1.0).epsilon(1e-12));
    for (int j = 1; j < joints; ++j) {
        CHECK(std::abs(anchored[0].local[j].dot(init.local[j])) ==
              doctest::Approx(1.0).epsilon(1e-12));
    }

    // relative motion: anchored(0)^-1 anchored(t) == decoded(0)^-1 decoded(t)
    for (std::size_t i = 1; i < traj.size(); ++i) {
        evm::UnitQuaternion rel_a =
            anchored[0].root_rot.conjugate() * anchored[i].root_rot;
        evm::UnitQuaternion rel_d = traj[0].root_rot.conjugate() * traj[i].root_rot;
        CHECK(std::abs(rel_a.dot(rel_d)) == doctest::Approx(1.0).epsilon(1e-9));
    }

    // identity initial pose: anchored equals the relative motion itself
    std::vector<evm::Pose> rel = evm::anchor_root(traj, evm::Pose::identity(joints));
    evm::UnitQuaternion expect = traj[0].root_rot.conjugate() * traj[3].root_rot;
    CHECK(std::abs(rel[3].root_rot.dot(expect)) == doctest::Approx(1.0).epsilon(1e-9));

    // idempotence
    std::vector<evm::Pose> twice = evm::anchor_root(anchored, init);
    for (std::size_t i = 0; i < traj.size(); ++i) {
        CHECK(std::abs(twice[i].root_rot.dot(anchored[i].root_rot)) ==
              doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("angular velocity of analytic trajectories") {
    // constant rotation
    auto constant = [](double) {
        return evm::UnitQuaternion::from_axis_angle(Eigen::Vector3d::UnitX(), 0.7);
    };
    CHECK(evm::angular_velocity(constant, 0.5, 1e-3).norm() == doctest::Approx(0.0));

    // uniform spin about z
    const double w = 2.4;
    auto spin = [&](double t) {
        return evm::UnitQuaternion::from_axis_angle(Eigen::Vector3d::UnitZ(), w * t);
    };
    Eigen::Vector3d omega = evm::angular_velocity(spin, 0.4, 1e-4);
    CHECK(omega.z() == doctest::Approx(w).epsilon(1e-6));
    CHECK(omega.head<2>().norm() < 1e-9);

    // quadratic angle: halving h reduces the error about 4x
    auto quad = [](double t) {
        return evm::UnitQuaternion::from_axis_angle(Eigen::Vector3d::UnitZ(),
                                                    std::sin(3.0 * t));
    };
    double exact = 3.0 * std::cos(3.0 * 0.3);
    double e1 = std::abs(evm::angular_velocity(quad, 0.3, 2e-3).z() - exact);
    double e2 = std::abs(evm::angular_velocity(quad, 0.3, 1e-3).z() - exact);
    CHECK(e1 / e2 == doctest::Approx(4.0).epsilon(0.15));
}

TEST_CASE("angular velocity of a decoded trajectory converges at second order") {
    // The decoder is smooth in t (tanh + sinusoidal encoding), so the central
    // difference is O(h^2): with an h/8 reference, the error-estimate ratio
    // between h and h/2 approaches 63/15 = 4.2.
    std::mt19937_64 rng(139);
    DecoderConfig cfg;
    cfg.joints = 2;
    cfg.freqs = 3;
    cfg.d_local = 3;
    cfg.d_global = 2;
    cfg.hidden = {12};
    cfg.skips = {};
    MotionDecoder dec = MotionDecoder::random(cfg, 1.0, rng, 1.0);
    LatentCode z;
    z.z_l = 0.5 * Eigen::VectorXd::Random(3);
    z.z_g = 0.5 * Eigen::VectorXd::Random(2);
    auto q = [&](double t) { return dec.decode(z, t).root; };

    const double t = 0.43, h = 4e-3;
    Eigen::Vector3d w1 = evm::angular_velocity(q, t, h);
    Eigen::Vector3d w2 = evm::angular_velocity(q, t, h / 2);
    Eigen::Vector3d ref = evm::angular_velocity(q, t, h / 8);
    double ratio = (w1 - ref).norm() / (w2 - ref).norm();
    CHECK(ratio == doctest::Approx(4.2).epsilon(0.25));
}

TEST_CASE("euler integration is exact for constant velocity") {
    Eigen::Vector3d v(0.2, -0.1, 0.05);
    std::vector<Eigen::Vector3d> vel(100, v);
    std::vector<Eigen::Vector3d> tau = evm::integrate_root({1, 2, 3}, vel, 0.01);
    CHECK(tau.size() == 101);
    CHECK((tau.back() - Eigen::Vector3d(1.2, 1.9, 3.05)).norm() < 1e-12);

    std::vector<Eigen::Vector3d> none(10, Eigen::Vector3d::Zero());
    std::vector<Eigen::Vector3d> still = evm::integrate_root({1, 1, 1}, none, 0.1);
    for (const auto& p : still) CHECK((p - Eigen::Vector3d(1, 1, 1)).norm() == 0.0);

    CHECK_THROWS_AS(evm::integrate_root({0, 0, 0}, vel, 0.0), std::invalid_argument);
}

TEST_CASE("euler integration error halves with the step for linear velocity") {
    // v(t) = a t integrated to T: exact a T^2 / 2, Euler error a T dt / 2.
    const double a = 1.7, T = 1.0;
    auto run = [&](int n) {
        std::vector<Eigen::Vector3d> vel(n);
        double dt = T / n;
        for (int k = 0; k < n; ++k) vel[k] = {a * (k * dt), 0.0, 0.0};
        return evm::integrate_root(Eigen::Vector3d::Zero(), vel, dt).back().x();
    };
    double exact = a * T * T / 2;
    double err1 = std::abs(run(64) - exact);
    double err2 = std::abs(run(128) - exact);
    CHECK(err1 / err2 == doctest::Approx(2.0).epsilon(0.1));
}

TEST_CASE("integration is linear in the velocities") {
    std::mt19937_64 rng(131);
    std::vector<Eigen::Vector3d> va, vb, sum;
    for (int i = 0; i < 50; ++i) {
        va.push_back(test_util::random_vec3(rng));
        vb.push_back(test_util::random_vec3(rng));
        sum.push_back(va.back() + vb.back());
    }
    auto ta = evm::integrate_root(Eigen::Vector3d::Zero(), va, 0.02);
    auto tb = evm::integrate_root(Eigen::Vector3d::Zero(), vb, 0.02);
    auto ts = evm::integrate_root(Eigen::Vector3d::Zero(), sum, 0.02);
    for (std::size_t i = 0; i < ts.size(); ++i) {
        CHECK((ts[i] - (ta[i] + tb[i])).norm() < 1e-12);
    }
}

TEST_CASE("slerp baseline hits endpoints and is exact for constant angular velocity") {
    std::mt19937_64 rng(137);
    evm::Pose p0 = evm::Pose::identity(3);
    evm::Pose p1 = evm::Pose::identity(3);
    p1.root_rot = evm::UnitQuaternion::from_axis_angle(Eigen::Vector3d::UnitZ(), 1.2);
    p1.local[1] = evm::UnitQuaternion::from_axis_angle(Eigen::Vector3d::UnitY(), -0.8);
    p1.root_t = {0.5, 0.0, 0.0};

    std::vector<double> ends{0.0, 1.0};
    auto at_ends = evm::slerp_baseline(p0, p1, 0.0, 1.0, ends);
    CHECK((at_ends[0].root_rot.coeffs() - p0.root_rot.coeffs()).norm() == 0.0);
    CHECK((at_ends[1].root_rot.coeffs() - p1.root_rot.coeffs()).norm() == 0.0);

    // constant-omega ground truth is reproduced exactly
    std::vector<double> mid{0.25, 0.5, 0.75};
    auto interp = evm::slerp_baseline(p0, p1, 0.0, 1.0, mid);
    for (std::size_t i = 0; i < mid.size(); ++i) {
        evm::UnitQuaternion gt =
            evm::UnitQuaternion::from_axis_angle(Eigen::Vector3d::UnitZ(), 1.2 * mid[i]);
        CHECK(std::abs(interp[i].root_rot.dot(gt)) == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(interp[i].root_t.x() == doctest::Approx(0.5 * mid[i]).epsilon(1e-12));
    }
    (void)rng;
}

TEST_CASE("slerp gap: zero for constant omega, positive for quadratic") {
    evm::BodyModel model = test_models::chain(4, 0.3);
    const int n = 33;
    std::vector<double> times;
    std::vector<evm::Pose> const_traj, quad_traj;
    for (int i = 0; i < n; ++i) {
        double t = i / double(n - 1);
        times.push_back(t);
        evm::Pose pc = evm::Pose::identity(4);
        pc.local[1] = evm::UnitQuaternion::from_axis_angle(Eigen::Vector3d::UnitZ(), 1.5 * t);
        const_traj.push_back(pc);
        evm::Pose pq = evm::Pose::identity(4);
        pq.local[1] =
            evm::UnitQuaternion::from_axis_angle(Eigen::Vector3d::UnitZ(), 0.5 * M_PI * t * t);
        quad_traj.push_back(pq);
    }
    for (int stride : {2, 4, 8}) {
        evm::SlerpGapResult gap = evm::slerp_gap(model, times, const_traj, stride);
        CHECK(gap.max_m < 1e-9);
    }
    evm::SlerpGapResult gap = evm::slerp_gap(model, times, quad_traj, 8);
    CHECK(gap.mean_m > 1e-4);
    CHECK_THROWS_AS(evm::slerp_gap(model, times, quad_traj, n), std::invalid_argument);
    evm::SlerpGapResult full = evm::slerp_gap(model, times, quad_traj, 1);
    CHECK(full.max_m == 0.0);
}
