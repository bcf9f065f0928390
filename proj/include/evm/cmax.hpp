#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "evm/event_io.hpp"
#include "evm/kinematics.hpp"
#include "evm/motion_field.hpp"
#include "evm/voxel.hpp"

namespace evm {

// Per-vertex pixel flow between two times with the visibility mask and the
// projected vertex positions (anchors) at the start time. Masked vertices
// carry zero flow.
struct FlowSamples {
    std::vector<Eigen::Vector2d> flow;
    std::vector<char> visible;
    std::vector<Eigen::Vector2d> anchor;

    std::size_t size() const { return flow.size(); }
};

// flow_v = vis(v) * (project(V_v(t_j)) - project(V_v(t_i))); visibility is
// evaluated at t_i and vertices behind the camera at either time are masked.
FlowSamples flow_between_poses(const BodyModel& model, const Camera& cam, const Pose& pose_i,
                               const Pose& pose_j);
// Same flow with an externally supplied (frozen) visibility mask.
FlowSamples flow_between_poses_masked(const BodyModel& model, const Camera& cam,
                                      const Pose& pose_i, const Pose& pose_j,
                                      const std::vector<char>& vis);
FlowSamples vertex_flow(const BodyModel& model, const Camera& cam,
                        const FieldEvaluator& field, double t_i, double t_j);

// Index of the nearest visible anchor within radius per event (-1 if none).
// Ties resolve to the lowest vertex index.
std::vector<int> nearest_anchor_assignment(const FlowSamples& flow, const EventStream& events,
                                           double radius);

// Per-event displacements d_k = flow[a(k)] * (t_k - t_ref) / (t_j - t_i), so
// the splat position x_k - d_k advances each event along its flow to the
// reference time. Events without an anchor in range get zero displacement;
// an empty or fully masked flow set yields all-zero displacements.
std::vector<Eigen::Vector2d> flow_to_events(const FlowSamples& flow, const EventStream& events,
                                            std::int64_t t_i_us, std::int64_t t_j_us,
                                            std::int64_t t_ref_us, double radius = 8.0,
                                            const std::vector<int>* assignment = nullptr);

// Motion-compensated image pair plus the displacement field that produced it.
struct Iwe {
    PolarityImagePair image;
    std::vector<Eigen::Vector2d> displacement;
};
Iwe make_iwe(const EventStream& events, std::span<const Eigen::Vector2d> displacements,
             std::int64_t t_ref_us);

// Population variance of an image.
double image_variance(std::span<const double> image);

struct VarianceStats {
    double pos = 0.0;
    double neg = 0.0;
    double combined = 0.0;  // variance of pos + neg summed into one channel
    double objective = 0.0;  // pos + neg (the per-channel sum the loss uses)
};
VarianceStats iwe_variance(const Iwe& iwe);

// d(Var(pos) + Var(neg)) / d(displacement_k), analytic through the bilinear
// splat.
std::vector<Eigen::Vector2d> variance_displacement_gradient(
    const EventStream& events, std::span<const Eigen::Vector2d> displacements,
    const PolarityImagePair& image);

// A contrast-maximization window: a parameter vector theta maps to per-vertex
// flow through flow_fn; events are warped by their nearest anchor's flow and
// the objective is the negative per-channel IWE variance.
struct ContrastProblem {
    const EventStream* events = nullptr;  // events of the window [t_i, t_j)
    std::int64_t t_i_us = 0;
    std::int64_t t_j_us = 0;
    std::int64_t t_ref_us = 0;  // defaults to the window end in make()
    double radius = 8.0;
    double fd_step = 1e-5;
    int theta_cap = 256;
    std::function<FlowSamples(const Eigen::VectorXd&)> flow_fn;

    static ContrastProblem make(const EventStream& window_events, std::int64_t t_i_us,
                                std::int64_t t_j_us,
                                std::function<FlowSamples(const Eigen::VectorXd&)> flow_fn);
};

// L_c = -(Var(pos) + Var(neg)). Throws std::invalid_argument on an empty
// window. An assignment may be supplied to freeze the event-to-anchor map.
double contrast_objective(const ContrastProblem& problem, const Eigen::VectorXd& theta,
                          const std::vector<int>* frozen_assignment = nullptr);

// Gradient of L_c: analytic variance-to-displacement gradient composed with a
// central-finite-difference Jacobian of flow_fn (two evaluations per
// parameter). Visibility and the anchor assignment are frozen at theta.
Eigen::VectorXd contrast_gradient(const ContrastProblem& problem, const Eigen::VectorXd& theta);

// Shared upstream hook for the fit pipeline: given dObjective/dflow per
// vertex, applies the same frozen finite-difference Jacobian.
Eigen::VectorXd flow_jacobian_apply(const ContrastProblem& problem, const Eigen::VectorXd& theta,
                                    std::span<const Eigen::Vector2d> d_flow);

}  // namespace evm
