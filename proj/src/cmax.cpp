#include "evm/cmax.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "evm/threading.hpp"

namespace evm {

FlowSamples flow_between_poses_masked(const BodyModel& model, const Camera& cam,
                                      const Pose& pose_i, const Pose& pose_j,
                                      const std::vector<char>& vis) {
    if (cam.fx <= 0.0 || cam.fy <= 0.0) throw std::invalid_argument("degenerate camera");
    std::vector<Eigen::Vector3d> verts_i = skin_vertices(model, pose_i);
    std::vector<Eigen::Vector3d> verts_j = skin_vertices(model, pose_j);
    if (vis.size() != verts_i.size()) throw std::invalid_argument("visibility mask size mismatch");

    FlowSamples out;
    const std::size_t n = verts_i.size();
    out.flow.assign(n, Eigen::Vector2d::Zero());
    out.visible.assign(n, 0);
    out.anchor.assign(n, Eigen::Vector2d::Zero());
    for (std::size_t v = 0; v < n; ++v) {
        if (!vis[v] || verts_i[v].z() <= 0.0 || verts_j[v].z() <= 0.0) continue;
        out.anchor[v] = project(cam, verts_i[v]);
        out.flow[v] = project(cam, verts_j[v]) - out.anchor[v];
        out.visible[v] = 1;
    }
    return out;
}

FlowSamples flow_between_poses(const BodyModel& model, const Camera& cam, const Pose& pose_i,
                               const Pose& pose_j) {
    std::vector<char> vis = visibility(cam, skin_vertices(model, pose_i), model.faces());
    return flow_between_poses_masked(model, cam, pose_i, pose_j, vis);
}

FlowSamples vertex_flow(const BodyModel& model, const Camera& cam, const FieldEvaluator& field,
                        double t_i, double t_j) {
    if (t_i >= t_j) throw std::invalid_argument("vertex_flow needs t_i < t_j");
    return flow_between_poses(model, cam, field.pose_at(t_i), field.pose_at(t_j));
}

std::vector<int> nearest_anchor_assignment(const FlowSamples& flow, const EventStream& events,
                                           double radius) {
    std::vector<int> assignment(events.size(), -1);
    const double r2 = radius * radius;
    for (std::size_t k = 0; k < events.size(); ++k) {
        const Event& e = events.events[k];
        Eigen::Vector2d p(e.x, e.y);
        double best = r2;
        int best_v = -1;
        // Strict < keeps the lowest vertex index on ties.
        for (std::size_t v = 0; v < flow.size(); ++v) {
            if (!flow.visible[v]) continue;
            double d2 = (flow.anchor[v] - p).squaredNorm();
            if (d2 < best) {
                best = d2;
                best_v = static_cast<int>(v);
            }
        }
        assignment[k] = best_v;
    }
    return assignment;
}

std::vector<Eigen::Vector2d> flow_to_events(const FlowSamples& flow, const EventStream& events,
                                            std::int64_t t_i_us, std::int64_t t_j_us,
                                            std::int64_t t_ref_us, double radius,
                                            const std::vector<int>* assignment) {
    if (t_j_us <= t_i_us) throw std::invalid_argument("flow window needs t_j > t_i");
    std::vector<int> local;
    if (!assignment) {
        local = nearest_anchor_assignment(flow, events, radius);
        assignment = &local;
    }
    if (assignment->size() != events.size()) {
        throw std::invalid_argument("assignment size mismatch");
    }
    const double inv_span = 1.0 / static_cast<double>(t_j_us - t_i_us);
    std::vector<Eigen::Vector2d> disp(events.size(), Eigen::Vector2d::Zero());
    for (std::size_t k = 0; k < events.size(); ++k) {
        int a = (*assignment)[k];
        if (a < 0) continue;
        // Splatting warps to x - d; moving the event forward along its flow
        // to the reference time needs d = flow * (t_k - t_ref) / span.
        double scale = static_cast<double>(events.events[k].t_us - t_ref_us) * inv_span;
        disp[k] = flow.flow[a] * scale;
    }
    return disp;
}

Iwe make_iwe(const EventStream& events, std::span<const Eigen::Vector2d> displacements,
             std::int64_t t_ref_us) {
    Iwe iwe;
    iwe.image = accumulate(events, displacements, t_ref_us);
    iwe.displacement.assign(displacements.begin(), displacements.end());
    return iwe;
}

double image_variance(std::span<const double> image) {
    if (image.empty()) throw std::invalid_argument("variance of an empty image");
    double mean = 0.0;
    for (double v : image) mean += v;
    mean /= static_cast<double>(image.size());
    double var = 0.0;
    for (double v : image) var += (v - mean) * (v - mean);
    return var / static_cast<double>(image.size());
}

VarianceStats iwe_variance(const Iwe& iwe) {
    VarianceStats s;
    s.pos = image_variance(iwe.image.pos);
    s.neg = image_variance(iwe.image.neg);
    std::vector<double> sum(iwe.image.pos.size());
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] = iwe.image.pos[i] + iwe.image.neg[i];
    s.combined = image_variance(sum);
    s.objective = s.pos + s.neg;
    return s;
}

std::vector<Eigen::Vector2d> variance_displacement_gradient(
    const EventStream& events, std::span<const Eigen::Vector2d> displacements,
    const PolarityImagePair& image) {
    if (displacements.size() != events.size()) {
        throw std::invalid_argument("one displacement per event required");
    }
    const int w = image.width, h = image.height;
    const double cells = static_cast<double>(w) * h;
    double mean_pos = 0.0, mean_neg = 0.0;
    for (double v : image.pos) mean_pos += v;
    for (double v : image.neg) mean_neg += v;
    mean_pos /= cells;
    mean_neg /= cells;

    std::vector<Eigen::Vector2d> grad(events.size(), Eigen::Vector2d::Zero());
    for (std::size_t k = 0; k < events.size(); ++k) {
        const Event& e = events.events[k];
        const bool positive = e.p > 0;
        const std::vector<double>& ch = positive ? image.pos : image.neg;
        const double mean = positive ? mean_pos : mean_neg;
        double px = static_cast<double>(e.x) - displacements[k].x();
        double py = static_cast<double>(e.y) - displacements[k].y();
        int ix = static_cast<int>(std::floor(px));
        int iy = static_cast<int>(std::floor(py));
        double fx = px - ix, fy = py - iy;

        // dVar/dI at a cell is 2 (I - mean) / (M N); corner weights are
        // bilinear, so their derivatives wrt px/py are +-(1-f) and +-f.
        auto dvar = [&](int x, int y) {
            if (x < 0 || x >= w || y < 0 || y >= h) return 0.0;
            return 2.0 * (ch[static_cast<std::size_t>(y) * w + x] - mean) / cells;
        };
        double d00 = dvar(ix, iy), d10 = dvar(ix + 1, iy);
        double d01 = dvar(ix, iy + 1), d11 = dvar(ix + 1, iy + 1);
        double d_px = -(1.0 - fy) * d00 + (1.0 - fy) * d10 - fy * d01 + fy * d11;
        double d_py = -(1.0 - fx) * d00 - fx * d10 + (1.0 - fx) * d01 + fx * d11;
        // x' = x - d, so dVar/dd = -dVar/dx'.
        grad[k] = {-d_px, -d_py};
    }
    return grad;
}

ContrastProblem ContrastProblem::make(const EventStream& window_events, std::int64_t t_i_us,
                                      std::int64_t t_j_us,
                                      std::function<FlowSamples(const Eigen::VectorXd&)> fn) {
    ContrastProblem p;
    p.events = &window_events;
    p.t_i_us = t_i_us;
    p.t_j_us = t_j_us;
    p.t_ref_us = t_j_us;
    p.flow_fn = std::move(fn);
    return p;
}

double contrast_objective(const ContrastProblem& problem, const Eigen::VectorXd& theta,
                          const std::vector<int>* frozen_assignment) {
    if (!problem.events || problem.events->size() == 0) {
        throw std::invalid_argument("contrast window has no events");
    }
    FlowSamples flow = problem.flow_fn(theta);
    std::vector<Eigen::Vector2d> disp =
        flow_to_events(flow, *problem.events, problem.t_i_us, problem.t_j_us, problem.t_ref_us,
                       problem.radius, frozen_assignment);
    Iwe iwe = make_iwe(*problem.events, disp, problem.t_ref_us);
    return -iwe_variance(iwe).objective;
}

Eigen::VectorXd flow_jacobian_apply(const ContrastProblem& problem, const Eigen::VectorXd& theta,
                                    std::span<const Eigen::Vector2d> d_flow) {
    const int n = static_cast<int>(theta.size());
    if (n > problem.theta_cap) {
        throw std::invalid_argument("parameter count exceeds the contrast gradient cap");
    }
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(n);
    const double h = problem.fd_step;
    parallel_for(n, 8, [&](std::int64_t begin, std::int64_t end) {
        Eigen::VectorXd probe = theta;
        for (std::int64_t p = begin; p < end; ++p) {
            probe[p] = theta[p] + h;
            FlowSamples plus = problem.flow_fn(probe);
            probe[p] = theta[p] - h;
            FlowSamples minus = problem.flow_fn(probe);
            probe[p] = theta[p];
            double acc = 0.0;
            for (std::size_t v = 0; v < d_flow.size(); ++v) {
                acc += d_flow[v].dot((plus.flow[v] - minus.flow[v]) / (2.0 * h));
            }
            grad[p] = acc;
        }
    });
    return grad;
}

Eigen::VectorXd contrast_gradient(const ContrastProblem& problem, const Eigen::VectorXd& theta) {
    if (!problem.events || problem.events->size() == 0) {
        throw std::invalid_argument("contrast window has no events");
    }
    FlowSamples flow = problem.flow_fn(theta);
    std::vector<int> assignment =
        nearest_anchor_assignment(flow, *problem.events, problem.radius);
    std::vector<Eigen::Vector2d> disp =
        flow_to_events(flow, *problem.events, problem.t_i_us, problem.t_j_us, problem.t_ref_us,
                       problem.radius, &assignment);
    PolarityImagePair image = accumulate(*problem.events, disp, problem.t_ref_us);
    std::vector<Eigen::Vector2d> d_disp =
        variance_displacement_gradient(*problem.events, disp, image);

    // Fold per-event gradients back onto their anchor's flow.
    const double inv_span = 1.0 / static_cast<double>(problem.t_j_us - problem.t_i_us);
    std::vector<Eigen::Vector2d> d_flow(flow.size(), Eigen::Vector2d::Zero());
    for (std::size_t k = 0; k < problem.events->size(); ++k) {
        int a = assignment[k];
        if (a < 0) continue;
        double scale =
            static_cast<double>(problem.events->events[k].t_us - problem.t_ref_us) * inv_span;
        d_flow[a] += scale * d_disp[k];
    }
    // Negate: the loss is the negative variance.
    for (auto& g : d_flow) g = -g;
    return flow_jacobian_apply(problem, theta, d_flow);
}

}  // namespace evm
