#include "evm/fit.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>
#include <sstream>

#include "evm/common.hpp"
#include "evm/threading.hpp"

namespace evm {

AdamOptimizer::AdamOptimizer(int n, const OptimConfig& cfg)
    : cfg_(cfg), m_(Eigen::VectorXd::Zero(n)), v_(Eigen::VectorXd::Zero(n)) {
    if (cfg.lr <= 0.0) throw std::invalid_argument("optimizer needs lr > 0");
    if (cfg.max_iters < 0) throw std::invalid_argument("optimizer needs max_iters >= 0");
}

void AdamOptimizer::step(Eigen::VectorXd& params, const Eigen::VectorXd& grad,
                         const std::vector<char>* active) {
    if (params.size() != m_.size() || grad.size() != m_.size()) {
        throw std::invalid_argument("optimizer dimension mismatch");
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (Eigen::Index i = 0; i < params.size(); ++i) {
        if (active && !(*active)[static_cast<std::size_t>(i)]) continue;
        m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * grad[i];
        v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * grad[i] * grad[i];
        double m_hat = m_[i] / bc1;
        double v_hat = v_[i] / bc2;
        params[i] -= cfg_.lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
    }
}

FitStage FitStage::from_mode(FitMode mode, int iters) {
    FitStage s;
    s.iters = iters;
    s.optimize_z = true;
    s.optimize_gmp = mode == FitMode::LatentGmp;
    s.optimize_decoder = mode == FitMode::DecoderPretrain;
    return s;
}

namespace {

struct ParamLayout {
    int z_off = -1, z_n = 0;
    int gmp_off = -1, gmp_n = 0;
    int dec_off = -1, dec_n = 0;
    int total = 0;
};

ParamLayout make_layout(const MotionModel& state, bool with_z, bool with_gmp, bool with_dec) {
    ParamLayout lay;
    int off = 0;
    if (with_z) {
        lay.z_off = off;
        lay.z_n = state.z.dim();
        off += lay.z_n;
    }
    if (with_gmp) {
        lay.gmp_off = off;
        lay.gmp_n = state.gmp.param_count();
        off += lay.gmp_n;
    }
    if (with_dec) {
        lay.dec_off = off;
        lay.dec_n = state.decoder.mlp().param_count();
        off += lay.dec_n;
    }
    lay.total = off;
    return lay;
}

Eigen::VectorXd read_params(const MotionModel& state, const ParamLayout& lay) {
    Eigen::VectorXd theta(lay.total);
    if (lay.z_off >= 0) {
        theta.segment(lay.z_off, state.z.z_l.size()) = state.z.z_l;
        theta.segment(lay.z_off + state.z.z_l.size(), state.z.z_g.size()) = state.z.z_g;
    }
    if (lay.gmp_off >= 0) {
        state.gmp.copy_params_to({theta.data() + lay.gmp_off, static_cast<std::size_t>(lay.gmp_n)});
    }
    if (lay.dec_off >= 0) {
        state.decoder.mlp().copy_params_to(
            {theta.data() + lay.dec_off, static_cast<std::size_t>(lay.dec_n)});
    }
    return theta;
}

void write_params(MotionModel& state, const ParamLayout& lay, const Eigen::VectorXd& theta) {
    if (lay.z_off >= 0) {
        state.z.z_l = theta.segment(lay.z_off, state.z.z_l.size());
        state.z.z_g = theta.segment(lay.z_off + state.z.z_l.size(), state.z.z_g.size());
    }
    if (lay.gmp_off >= 0) {
        state.gmp.set_params_from(
            {theta.data() + lay.gmp_off, static_cast<std::size_t>(lay.gmp_n)});
    }
    if (lay.dec_off >= 0) {
        state.decoder.mlp().set_params_from(
            {theta.data() + lay.dec_off, static_cast<std::size_t>(lay.dec_n)});
    }
}

// Sign of the canonicalization applied when forming a * b.
double product_sign(const UnitQuaternion& a, const UnitQuaternion& b) {
    double w = a.w() * b.w() - a.x() * b.x() - a.y() * b.y() - a.z() * b.z();
    return w < 0.0 ? -1.0 : 1.0;
}

constexpr double kConjSign[4] = {1.0, -1.0, -1.0, -1.0};

struct ContrastWindow {
    EventStream events;
    std::int64_t t_i_us = 0, t_j_us = 0;  // relative microseconds
    double t_i_s = 0.0, t_j_s = 0.0;
    std::vector<char> visibility;      // frozen per iteration
    std::vector<int> assignment;       // frozen per iteration
    std::vector<Eigen::Vector2d> d_flow;  // upstream objective gradient wrt flow
};

struct FitProblem {
    FitProblem(const BodyModel& m, const Camera& c, MotionModel& s)
        : model(m), cam(c), state(s) {}
    const BodyModel& model;
    const Camera& cam;
    MotionModel& state;
    const Supervision* sup = nullptr;
    FitConfig cfg;
    const std::vector<std::vector<Eigen::Vector2d>>* ref_flows = nullptr;
    std::vector<ContrastWindow> windows;
    std::vector<std::vector<Eigen::Vector2d>> gt_2d;  // projected GT when use_2d
    ParamLayout lay;
    bool supervised = false;
    bool use_contrast = false;
    bool use_flow = false;
};

// Anchored quaternion chain used by the supervised backward:
//   anchored = canon(prefix * decoded), prefix = canon(init * decoded_t0^-1).
// Gradients propagate to decoded(t), decoded(t0) and onward through the
// decoder; positional-encoding inputs are constants.
struct SupervisedAccum {
    MotionDecoder::Grad dec_grad;
    std::vector<Eigen::Vector4d> d_hat0;  // per joint (0 = root): grad on decoded(t0)
    std::vector<Eigen::Vector3d> d_tau_nodes;
};

double evaluate_objective(FitProblem& fp, FieldEvaluator& eval, const Eigen::VectorXd& theta,
                          Eigen::VectorXd* grad, LossTerms& terms) {
    const LossWeights& w = fp.cfg.weights;
    const BodyModel& model = fp.model;
    const int joints = model.joint_count();

    write_params(fp.state, fp.lay, theta);
    eval.rebuild();

    terms = LossTerms{};
    if (grad) grad->setZero();

    terms.prior = latent_prior(fp.state.z);
    if (grad && fp.lay.z_off >= 0) {
        grad->segment(fp.lay.z_off, fp.state.z.z_l.size()) += w.prior_z * fp.state.z.z_l;
        grad->segment(fp.lay.z_off + fp.state.z.z_l.size(), fp.state.z.z_g.size()) +=
            w.prior_z * fp.state.z.z_g;
    }

    const MotionDecoder& decoder = fp.state.decoder;

    if (fp.supervised) {
        MotionDecoder::Trace trace0;
        MotionDecoder::Rotations rot0 = decoder.decode(fp.state.z, 0.0, trace0);
        // prefix_c[j]: j = 0 root, else local joint j.
        std::vector<UnitQuaternion> prefix(joints);
        prefix[0] = fp.state.init_pose.root_rot * rot0.root.conjugate();
        for (int j = 1; j < joints; ++j) {
            prefix[j] = fp.state.init_pose.local[j] * rot0.local[j - 1].conjugate();
        }

        SupervisedAccum acc;
        acc.dec_grad = decoder.zero_grad();
        acc.d_hat0.assign(joints, Eigen::Vector4d::Zero());
        acc.d_tau_nodes.assign(eval.tau_nodes().size(), Eigen::Vector3d::Zero());

        const Supervision& sup = *fp.sup;
        const bool has_joints = !sup.joints.empty();
        const bool has_rot = !sup.rotations.empty();

        for (std::size_t i = 0; i < sup.times_s.size(); ++i) {
            const double t = sup.times_s[i];
            MotionDecoder::Trace trace_i;
            MotionDecoder::Rotations rot_i = decoder.decode(fp.state.z, t, trace_i);

            // Anchored pose and the signs folded in by canonicalization.
            Pose pose = Pose::identity(joints);
            std::vector<double> sign(joints);
            sign[0] = product_sign(prefix[0], rot_i.root);
            pose.root_rot = prefix[0] * rot_i.root;
            for (int j = 1; j < joints; ++j) {
                sign[j] = product_sign(prefix[j], rot_i.local[j - 1]);
                pose.local[j] = prefix[j] * rot_i.local[j - 1];
            }
            pose.root_t = eval.root_translation(t);

            FkResult fk = forward_kinematics(model, pose);

            std::vector<Eigen::Vector3d> d_pos(joints, Eigen::Vector3d::Zero());
            bool have_dpos = false;
            if (has_joints && w.three_d > 0.0) {
                std::vector<Eigen::Vector3d> g;
                terms.three_d += loss_sq_grad(fk.position, sup.joints[i], g);
                for (int j = 0; j < joints; ++j) d_pos[j] += w.three_d * g[j];
                have_dpos = true;
            }
            if (fp.sup->use_2d && has_joints && w.two_d > 0.0) {
                std::vector<Eigen::Vector3d> g;
                terms.two_d += loss_2d_grad(fp.cam, fk.position, fp.gt_2d[i], g);
                for (int j = 0; j < joints; ++j) d_pos[j] += w.two_d * g[j];
                have_dpos = true;
            }

            Eigen::Vector3d d_tau = Eigen::Vector3d::Zero();
            if (w.t > 0.0) {
                const Eigen::Vector3d* gt_tau = nullptr;
                if (!sup.root_translation.empty()) gt_tau = &sup.root_translation[i];
                else if (has_joints) gt_tau = &sup.joints[i][0];
                if (gt_tau) {
                    Eigen::Vector3d diff = pose.root_t - *gt_tau;
                    terms.t += diff.squaredNorm();
                    d_tau += w.t * 2.0 * diff;
                }
            }

            std::vector<Eigen::Vector4d> d_anchor(joints, Eigen::Vector4d::Zero());
            if (have_dpos) {
                FkGrad fkg = fk_backward(model, pose, fk, d_pos);
                d_tau += fkg.d_root_t;
                d_anchor[0] += fkg.d_root_rot;
                for (int j = 1; j < joints; ++j) d_anchor[j] += fkg.d_local[j];
            }
            if (has_rot && w.ori > 0.0) {
                std::vector<std::vector<UnitQuaternion>> pred(1);
                pred[0].push_back(pose.root_rot);
                for (int j = 1; j < joints; ++j) pred[0].push_back(pose.local[j]);
                std::vector<std::vector<UnitQuaternion>> gt(1, sup.rotations[i]);
                std::vector<std::vector<Eigen::Vector4d>> g;
                terms.ori += loss_ori_grad(pred, gt, g);
                for (int j = 0; j < joints; ++j) d_anchor[j] += w.ori * g[0][j];
            }

            if (grad) {
                // anchored = sign * prefix * decoded: pull gradients back onto
                // the decoded quaternions and the prefix.
                std::vector<Eigen::Vector4d> d_hat_local(std::max(0, joints - 1),
                                                         Eigen::Vector4d::Zero());
                Eigen::Vector4d d_hat_root = Eigen::Vector4d::Zero();
                for (int j = 0; j < joints; ++j) {
                    if (d_anchor[j].isZero()) continue;
                    const UnitQuaternion& decoded = j == 0 ? rot_i.root : rot_i.local[j - 1];
                    Eigen::Vector4d d_decoded =
                        sign[j] * (quat_left(prefix[j]).transpose() * d_anchor[j]);
                    Eigen::Vector4d d_prefix =
                        sign[j] * (quat_right(decoded).transpose() * d_anchor[j]);
                    // prefix = sign0 * init * conj(decoded_t0)
                    const UnitQuaternion& hat0 = j == 0 ? rot0.root : rot0.local[j - 1];
                    double s0 = product_sign(j == 0 ? fp.state.init_pose.root_rot
                                                    : fp.state.init_pose.local[j],
                                             hat0.conjugate());
                    Eigen::Vector4d d_hat0_j =
                        s0 * (quat_left(j == 0 ? fp.state.init_pose.root_rot
                                               : fp.state.init_pose.local[j])
                                  .transpose() *
                              d_prefix);
                    for (int c = 0; c < 4; ++c) d_hat0_j[c] *= kConjSign[c];
                    acc.d_hat0[j] += d_hat0_j;
                    if (j == 0) {
                        d_hat_root = d_decoded;
                    } else {
                        d_hat_local[j - 1] = d_decoded;
                    }
                }
                decoder.backward(trace_i, d_hat_local, d_hat_root, acc.dec_grad);

                if (!d_tau.isZero()) {
                    double pos = t / eval.dt();
                    int k = std::min(static_cast<int>(std::floor(pos)),
                                     static_cast<int>(acc.d_tau_nodes.size()) - 2);
                    double u = pos - k;
                    acc.d_tau_nodes[k] += (1.0 - u) * d_tau;
                    acc.d_tau_nodes[k + 1] += u * d_tau;
                }
            }
        }

        if (grad) {
            std::vector<Eigen::Vector4d> d_hat0_local(std::max(0, joints - 1),
                                                      Eigen::Vector4d::Zero());
            for (int j = 1; j < joints; ++j) d_hat0_local[j - 1] = acc.d_hat0[j];
            decoder.backward(trace0, d_hat0_local, acc.d_hat0[0], acc.dec_grad);

            if (fp.lay.z_off >= 0) {
                grad->segment(fp.lay.z_off, acc.dec_grad.d_z_l.size()) += acc.dec_grad.d_z_l;
                grad->segment(fp.lay.z_off + acc.dec_grad.d_z_l.size(),
                              acc.dec_grad.d_z_g.size()) += acc.dec_grad.d_z_g;
            }
            if (fp.lay.dec_off >= 0) {
                Eigen::VectorXd flat(fp.lay.dec_n);
                Mlp::copy_grad_to(acc.dec_grad.mlp,
                                  {flat.data(), static_cast<std::size_t>(fp.lay.dec_n)});
                grad->segment(fp.lay.dec_off, fp.lay.dec_n) += flat;
            }
            if (fp.lay.gmp_off >= 0) {
                // Euler transpose: d/d tau_dot_k = dt * sum_{nodes after k}.
                Mlp::Grad gmp_grad = fp.state.gmp.zero_grad();
                Eigen::Vector3d suffix = Eigen::Vector3d::Zero();
                bool any = false;
                std::vector<Eigen::Vector3d> d_vel(eval.tau_velocities().size());
                for (int k = static_cast<int>(d_vel.size()) - 1; k >= 0; --k) {
                    suffix += acc.d_tau_nodes[k + 1];
                    d_vel[k] = eval.dt() * suffix;
                    if (!d_vel[k].isZero()) any = true;
                }
                if (any) {
                    for (std::size_t k = 0; k < d_vel.size(); ++k) {
                        if (d_vel[k].isZero()) continue;
                        Mlp::Trace tr;
                        fp.state.gmp.forward(eval.features()[k], tr);
                        fp.state.gmp.backward(tr, d_vel[k], gmp_grad);
                    }
                    Eigen::VectorXd flat(fp.lay.gmp_n);
                    Mlp::copy_grad_to(gmp_grad,
                                      {flat.data(), static_cast<std::size_t>(fp.lay.gmp_n)});
                    grad->segment(fp.lay.gmp_off, fp.lay.gmp_n) += flat;
                }
            }
        }
    }

    // Contrast and flow terms over the window partition.
    if (fp.use_contrast || fp.use_flow) {
        int live = 0;
        for (const ContrastWindow& cw : fp.windows) {
            if (!cw.events.events.empty()) ++live;
        }
        double contrast_scale = live > 0 ? w.contrast / live : 0.0;
        std::vector<FlowSamples> base_flow(fp.windows.size());
        for (std::size_t wi = 0; wi < fp.windows.size(); ++wi) {
            ContrastWindow& cw = fp.windows[wi];
            if (cw.events.events.empty()) continue;
            Pose pose_i = eval.pose_at(cw.t_i_s);
            Pose pose_j = eval.pose_at(cw.t_j_s);
            std::vector<Eigen::Vector3d> verts_i = skin_vertices(model, pose_i);
            cw.visibility = visibility(fp.cam, verts_i, model.faces());
            base_flow[wi] = flow_between_poses_masked(model, fp.cam, pose_i, pose_j,
                                                      cw.visibility);
            cw.assignment =
                nearest_anchor_assignment(base_flow[wi], cw.events, fp.cfg.flow_radius);
            std::vector<Eigen::Vector2d> disp =
                flow_to_events(base_flow[wi], cw.events, cw.t_i_us, cw.t_j_us, cw.t_j_us,
                               fp.cfg.flow_radius, &cw.assignment);
            PolarityImagePair img = accumulate(cw.events, disp, cw.t_j_us);
            Iwe iwe{img, disp};
            double var = iwe_variance(iwe).objective;
            if (fp.use_contrast) terms.contrast += -var / live;

            cw.d_flow.assign(base_flow[wi].size(), Eigen::Vector2d::Zero());
            if (grad && fp.use_contrast) {
                std::vector<Eigen::Vector2d> d_disp =
                    variance_displacement_gradient(cw.events, disp, img);
                const double inv_span = 1.0 / static_cast<double>(cw.t_j_us - cw.t_i_us);
                for (std::size_t k = 0; k < cw.events.events.size(); ++k) {
                    int a = cw.assignment[k];
                    if (a < 0) continue;
                    double scale = static_cast<double>(cw.events.events[k].t_us - cw.t_j_us) *
                                   inv_span;
                    cw.d_flow[a] -= contrast_scale * scale * d_disp[k];
                }
            }
            if (fp.use_flow) {
                const auto& ref = (*fp.ref_flows)[wi];
                if (ref.size() != base_flow[wi].size()) {
                    throw std::invalid_argument("reference flow vertex count mismatch");
                }
                if (grad) {
                    std::vector<Eigen::Vector2d> g;
                    terms.flow += loss_flow_grad(base_flow[wi].flow, ref, g);
                    for (std::size_t v = 0; v < g.size(); ++v) {
                        cw.d_flow[v] += w.flow * g[v];
                    }
                } else {
                    terms.flow += loss_flow(base_flow[wi].flow, ref);
                }
            }
        }

        if (grad) {
            // Finite-difference Jacobian of the per-window flows, shared
            // across windows per probe. Probes over decoder/z parameters do a
            // full cache rebuild; GMP-only probes reuse the feature cache.
            auto fd_sweep = [&](int begin, int end, bool gmp_only) {
                if (begin >= end) return;
                parallel_for(end - begin, 8, [&](std::int64_t lo, std::int64_t hi) {
                    MotionModel scratch = fp.state;
                    FieldEvaluator scratch_eval(model, scratch, fp.cfg.field);
                    Eigen::VectorXd probe = theta;
                    const double h = fp.cfg.contrast_fd_step;
                    for (std::int64_t idx = lo; idx < hi; ++idx) {
                        int p = begin + static_cast<int>(idx);
                        double acc_p = 0.0;
                        for (double dir : {1.0, -1.0}) {
                            probe[p] = theta[p] + dir * h;
                            write_params(scratch, fp.lay, probe);
                            scratch_eval.rebuild(gmp_only);
                            for (std::size_t wi = 0; wi < fp.windows.size(); ++wi) {
                                ContrastWindow& cw = fp.windows[wi];
                                if (cw.events.events.empty()) continue;
                                FlowSamples flow = flow_between_poses_masked(
                                    model, fp.cam, scratch_eval.pose_at(cw.t_i_s),
                                    scratch_eval.pose_at(cw.t_j_s), cw.visibility);
                                for (std::size_t v = 0; v < flow.size(); ++v) {
                                    acc_p += dir * cw.d_flow[v].dot(flow.flow[v]) / (2.0 * h);
                                }
                            }
                        }
                        probe[p] = theta[p];
                        (*grad)[p] += acc_p;
                    }
                });
            };
            // [z | gmp | dec] layout: split the GMP block out for cheap probes.
            if (fp.lay.z_off >= 0) fd_sweep(fp.lay.z_off, fp.lay.z_off + fp.lay.z_n, false);
            if (fp.lay.dec_off >= 0) {
                fd_sweep(fp.lay.dec_off, fp.lay.dec_off + fp.lay.dec_n, false);
            }
            if (fp.lay.gmp_off >= 0) {
                fd_sweep(fp.lay.gmp_off, fp.lay.gmp_off + fp.lay.gmp_n, true);
            }
        }
    }

    return total_loss(terms, w);
}

}  // namespace

FitReport staged_fit(const EventStream& events, const BodyModel& model, const Camera& cam,
                     const Supervision* supervision, MotionModel& state, const FitConfig& cfg,
                     std::span<const FitStage> stages,
                     const std::vector<std::vector<Eigen::Vector2d>>* ref_flows) {
    if (stages.empty()) throw std::invalid_argument("staged_fit needs at least one stage");
    for (const FitStage& s : stages) {
        if (s.iters < 0) throw std::invalid_argument("stage iteration count must be >= 0");
    }
    auto t_begin = std::chrono::steady_clock::now();

    FitProblem fp{model, cam, state};
    fp.cfg = cfg;
    fp.ref_flows = ref_flows;

    LossWeights& w = fp.cfg.weights;
    if (!supervision || supervision->times_s.empty()) {
        // Without supervision the reconstruction terms are inactive.
        w.ori = w.t = w.three_d = w.two_d = 0.0;
        supervision = nullptr;
    }
    fp.sup = supervision;

    fp.supervised = supervision != nullptr &&
                    (w.ori > 0.0 || w.t > 0.0 || w.three_d > 0.0 || w.two_d > 0.0);
    fp.use_contrast = w.contrast > 0.0 && !events.events.empty();
    fp.use_flow = w.flow > 0.0 && ref_flows != nullptr;
    if (!fp.supervised && !fp.use_contrast && !fp.use_flow) {
        throw std::invalid_argument("fit has neither events nor supervision to work with");
    }

    if (supervision) {
        const Supervision& sup = *supervision;
        for (double t : sup.times_s) {
            if (t < 0.0 || t > state.span_s) {
                throw std::invalid_argument("supervision time outside the sequence span");
            }
        }
        if (!sup.joints.empty() && sup.joints.size() != sup.times_s.size()) {
            throw std::invalid_argument("supervision joints/times size mismatch");
        }
        if (!sup.rotations.empty() && sup.rotations.size() != sup.times_s.size()) {
            throw std::invalid_argument("supervision rotations/times size mismatch");
        }
        if (!sup.root_translation.empty() && sup.root_translation.size() != sup.times_s.size()) {
            throw std::invalid_argument("supervision translation/times size mismatch");
        }
        if (sup.use_2d && !sup.joints.empty()) {
            fp.gt_2d.resize(sup.joints.size());
            for (std::size_t i = 0; i < sup.joints.size(); ++i) {
                for (const Eigen::Vector3d& p : sup.joints[i]) {
                    fp.gt_2d[i].push_back(p.z() > 0.0 ? project(cam, p)
                                                      : Eigen::Vector2d::Zero());
                }
            }
        }
    }

    // Window partition in relative microseconds.
    if (fp.use_contrast || fp.use_flow) {
        std::int64_t span_us = s_to_us(state.span_s);
        EventStream rel = events;
        for (Event& e : rel.events) e.t_us -= state.t0_us;
        rel.refresh_span();
        const int nw = std::max(1, cfg.contrast_windows);
        fp.windows.resize(nw);
        for (int k = 0; k < nw; ++k) {
            std::int64_t b0 = span_us * k / nw;
            std::int64_t b1 = k + 1 == nw ? span_us + 1 : span_us * (k + 1) / nw;
            ContrastWindow& cw = fp.windows[k];
            cw.events = window(rel, b0, b1);
            cw.t_i_us = b0;
            cw.t_j_us = k + 1 == nw ? span_us : b1;
            cw.t_i_s = us_to_s(cw.t_i_us);
            cw.t_j_s = us_to_s(cw.t_j_us);
        }
        if (fp.use_flow && ref_flows->size() != fp.windows.size()) {
            throw std::invalid_argument("reference flow must cover every contrast window");
        }
    }

    bool need_z = false, need_gmp = false, need_dec = false;
    for (const FitStage& s : stages) {
        need_z |= s.optimize_z;
        need_gmp |= s.optimize_gmp;
        need_dec |= s.optimize_decoder;
    }
    fp.lay = make_layout(state, need_z, need_gmp, need_dec);
    if ((fp.use_contrast || fp.use_flow) && fp.lay.total > cfg.theta_cap) {
        throw std::invalid_argument("parameter count " + std::to_string(fp.lay.total) +
                                    " exceeds the contrast gradient cap " +
                                    std::to_string(cfg.theta_cap));
    }

    FieldEvaluator eval(model, state, cfg.field);
    Eigen::VectorXd theta = read_params(state, fp.lay);
    Eigen::VectorXd grad(fp.lay.total);
    AdamOptimizer adam(fp.lay.total, cfg.opt);

    FitReport report;
    auto& traces = report.term_traces;
    for (const char* key : {"ori", "t", "3d", "2d", "flow", "contrast", "prior"}) {
        traces[key] = {};
    }

    for (const FitStage& stage : stages) {
        std::vector<char> active(fp.lay.total, 0);
        auto mark = [&](int off, int n, bool on) {
            if (off < 0 || !on) return;
            std::fill(active.begin() + off, active.begin() + off + n, 1);
        };
        mark(fp.lay.z_off, fp.lay.z_n, stage.optimize_z);
        mark(fp.lay.gmp_off, fp.lay.gmp_n, stage.optimize_gmp);
        mark(fp.lay.dec_off, fp.lay.dec_n, stage.optimize_decoder);
        bool any_active = std::find(active.begin(), active.end(), 1) != active.end();
        report.converged = false;

        for (int it = 0; it < stage.iters; ++it) {
            LossTerms terms;
            double obj;
            try {
                obj = evaluate_objective(fp, eval, theta, any_active ? &grad : nullptr, terms);
            } catch (const DataError& e) {
                std::ostringstream msg;
                msg << e.what() << " at iteration " << report.iterations << "; objective trace:";
                for (std::size_t k = report.objective_trace.size() > 8
                                         ? report.objective_trace.size() - 8
                                         : 0;
                     k < report.objective_trace.size(); ++k) {
                    msg << ' ' << report.objective_trace[k];
                }
                throw DataError(msg.str());
            }
            report.objective_trace.push_back(obj);
            traces["ori"].push_back(terms.ori);
            traces["t"].push_back(terms.t);
            traces["3d"].push_back(terms.three_d);
            traces["2d"].push_back(terms.two_d);
            traces["flow"].push_back(terms.flow);
            traces["contrast"].push_back(terms.contrast);
            traces["prior"].push_back(terms.prior);
            ++report.iterations;

            if (any_active) {
                double norm = 0.0;
                for (int p = 0; p < fp.lay.total; ++p) {
                    if (active[p]) norm += grad[p] * grad[p];
                }
                norm = std::sqrt(norm);
                if (norm > cfg.opt.clip_norm) {
                    double s = cfg.opt.clip_norm / norm;
                    for (int p = 0; p < fp.lay.total; ++p) {
                        if (active[p]) grad[p] *= s;
                    }
                }
                adam.step(theta, grad, &active);
            }

            // tol <= 0 disables early stopping (run the full budget).
            const auto& trace = report.objective_trace;
            if (cfg.opt.tol > 0.0 && static_cast<int>(trace.size()) > cfg.opt.tol_window) {
                double prev = trace[trace.size() - 1 - cfg.opt.tol_window];
                double cur = trace.back();
                if (prev - cur < cfg.opt.tol * std::max(std::abs(prev), 1e-12)) {
                    report.converged = true;
                    break;
                }
            }
        }
        report.stage_boundaries.push_back(report.iterations);
    }

    write_params(state, fp.lay, theta);
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_begin).count();
    return report;
}

FitReport fit_latent(const EventStream& events, const BodyModel& model, const Camera& cam,
                     const Supervision* supervision, MotionModel& state, const FitConfig& cfg,
                     const std::vector<std::vector<Eigen::Vector2d>>* ref_flows) {
    FitStage stage = FitStage::from_mode(cfg.mode, cfg.opt.max_iters);
    return staged_fit(events, model, cam, supervision, state, cfg, {&stage, 1}, ref_flows);
}

PretrainResult pretrain_decoder(const std::vector<RotationTrajectory>& family,
                                MotionDecoder& decoder, const OptimConfig& opt,
                                std::uint64_t seed) {
    if (family.empty()) throw std::invalid_argument("pretraining needs at least one trajectory");
    const int joints = decoder.joints();
    for (const RotationTrajectory& traj : family) {
        if (traj.times_s.size() != traj.quats.size() || traj.times_s.empty()) {
            throw std::invalid_argument("trajectory times/quats mismatch");
        }
        for (const auto& frame : traj.quats) {
            if (static_cast<int>(frame.size()) != joints) {
                throw std::invalid_argument("trajectory joint count mismatch");
            }
        }
    }
    auto t_begin = std::chrono::steady_clock::now();

    const int dec_n = decoder.mlp().param_count();
    const int z_dim = decoder.config().d_local + decoder.config().d_global;
    const int total = dec_n + z_dim * static_cast<int>(family.size());

    Eigen::VectorXd theta = Eigen::VectorXd::Zero(total);
    decoder.mlp().copy_params_to({theta.data(), static_cast<std::size_t>(dec_n)});

    AdamOptimizer adam(total, opt);
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, family.size() - 1);

    FitReport report;
    for (int it = 0; it < opt.max_iters; ++it) {
        std::size_t r = pick(rng);
        const RotationTrajectory& traj = family[r];

        decoder.mlp().set_params_from({theta.data(), static_cast<std::size_t>(dec_n)});
        LatentCode z;
        z.z_l = theta.segment(dec_n + z_dim * r, decoder.config().d_local);
        z.z_g = theta.segment(dec_n + z_dim * r + decoder.config().d_local,
                              decoder.config().d_global);

        MotionDecoder::Grad dgrad = decoder.zero_grad();
        double obj = 0.0;
        for (std::size_t i = 0; i < traj.times_s.size(); ++i) {
            MotionDecoder::Trace trace;
            MotionDecoder::Rotations rot = decoder.decode(z, traj.times_s[i], trace);
            // The trace records the orientation loss itself; descent uses the
            // per-term squared distance, whose gradient vanishes at the
            // optimum so constant-rate steps converge instead of orbiting the
            // norm kink.
            std::vector<Eigen::Vector4d> d_local(std::max(0, joints - 1));
            Eigen::Vector4d d_root;
            for (int j = 0; j < joints; ++j) {
                const UnitQuaternion& pred = j == 0 ? rot.root : rot.local[j - 1];
                Eigen::Vector4d g;
                double dist = geodesic_quat_distance(pred, traj.quats[i][j], &g);
                obj += dist;
                g *= 2.0 * dist;
                if (j == 0) {
                    d_root = g;
                } else {
                    d_local[j - 1] = g;
                }
            }
            decoder.backward(trace, d_local, d_root, dgrad);
        }
        report.objective_trace.push_back(obj);
        ++report.iterations;

        Eigen::VectorXd grad = Eigen::VectorXd::Zero(total);
        Mlp::copy_grad_to(dgrad.mlp, {grad.data(), static_cast<std::size_t>(dec_n)});
        grad.segment(dec_n + z_dim * r, decoder.config().d_local) = dgrad.d_z_l;
        grad.segment(dec_n + z_dim * r + decoder.config().d_local, decoder.config().d_global) =
            dgrad.d_z_g;

        double norm = grad.norm();
        if (norm > opt.clip_norm) grad *= opt.clip_norm / norm;
        adam.step(theta, grad);

        const auto& trace = report.objective_trace;
        if (opt.tol > 0.0 && family.size() == 1 &&
            static_cast<int>(trace.size()) > opt.tol_window) {
            double prev = trace[trace.size() - 1 - opt.tol_window];
            if (prev - trace.back() < opt.tol * std::max(std::abs(prev), 1e-12)) {
                report.converged = true;
                break;
            }
        }
    }

    decoder.mlp().set_params_from({theta.data(), static_cast<std::size_t>(dec_n)});
    PretrainResult result;
    for (std::size_t r = 0; r < family.size(); ++r) {
        LatentCode z;
        z.z_l = theta.segment(dec_n + z_dim * r, decoder.config().d_local);
        z.z_g = theta.segment(dec_n + z_dim * r + decoder.config().d_local,
                              decoder.config().d_global);
        result.codes.push_back(std::move(z));
    }
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_begin).count();
    result.report = std::move(report);
    return result;
}

}  // namespace evm
