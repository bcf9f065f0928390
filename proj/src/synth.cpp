#include "evm/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "evm/common.hpp"

namespace evm {

UnitQuaternion JointTrack::at(double t) const {
    switch (kind) {
        case Kind::Constant:
            return UnitQuaternion();
        case Kind::LinearOmega:
            return UnitQuaternion::from_axis_angle(axis, rate * t);
        case Kind::Quadratic:
            return UnitQuaternion::from_axis_angle(axis, 0.5 * alpha * t * t);
        case Kind::Keyframes: {
            if (key_times.size() < 2 || key_times.size() != key_quats.size()) {
                throw std::invalid_argument("keyframe track needs matched times/quats (>= 2)");
            }
            if (t <= key_times.front()) return key_quats.front();
            if (t >= key_times.back()) return key_quats.back();
            auto it = std::upper_bound(key_times.begin(), key_times.end(), t);
            std::size_t hi = static_cast<std::size_t>(it - key_times.begin());
            std::size_t lo = hi - 1;
            double u = (t - key_times[lo]) / (key_times[hi] - key_times[lo]);
            return slerp(key_quats[lo], key_quats[hi], u);
        }
    }
    return UnitQuaternion();
}

Eigen::Vector3d RootTrack::at(double t) const {
    switch (kind) {
        case Kind::Static:
            return start;
        case Kind::Linear:
            return start + velocity * t;
        case Kind::Quadratic:
            return start + velocity * t + 0.5 * accel * t * t;
        case Kind::Bounce: {
            double fwd = std::min(t, flip_time);
            double back = std::max(0.0, t - flip_time);
            return start + velocity * fwd - velocity * back;
        }
    }
    return start;
}

Pose MotionScript::pose_at(const BodyModel& model, double t) const {
    Pose pose = Pose::identity(model.joint_count());
    pose.root_t = root.at(t);
    for (const JointTrack& track : joints) {
        if (track.joint < 0 || track.joint >= model.joint_count()) {
            throw std::invalid_argument("script track joint out of range");
        }
        if (track.joint == 0) {
            pose.root_rot = track.at(t);
        } else {
            pose.local[track.joint] = track.at(t);
        }
    }
    return pose;
}

namespace {

using nlohmann::json;

Eigen::Vector3d to_vec3(const json& j) {
    return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()};
}

}  // namespace

MotionScript load_script(std::istream& in) {
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw DataError(std::string("script JSON: ") + e.what());
    }
    try {
        MotionScript script;
        script.duration = j.at("duration").get<double>();
        if (script.duration <= 0.0) throw DataError("script duration must be positive");
        script.seed = j.value("seed", 0ull);
        script.gt_rate_hz = j.value("gt_rate_hz", 100.0);
        if (j.contains("root")) {
            const json& r = j["root"];
            std::string kind = r.value("kind", "static");
            if (kind == "static") script.root.kind = RootTrack::Kind::Static;
            else if (kind == "linear") script.root.kind = RootTrack::Kind::Linear;
            else if (kind == "quadratic") script.root.kind = RootTrack::Kind::Quadratic;
            else if (kind == "bounce") script.root.kind = RootTrack::Kind::Bounce;
            else throw DataError("unknown root track kind '" + kind + "'");
            if (r.contains("start")) script.root.start = to_vec3(r["start"]);
            if (r.contains("velocity")) script.root.velocity = to_vec3(r["velocity"]);
            if (r.contains("accel")) script.root.accel = to_vec3(r["accel"]);
            script.root.flip_time = r.value("flip_time", script.duration / 2.0);
        }
        if (j.contains("joints")) {
            for (const json& t : j["joints"]) {
                JointTrack track;
                track.joint = t.at("joint").get<int>();
                std::string kind = t.value("kind", "constant");
                if (kind == "constant") track.kind = JointTrack::Kind::Constant;
                else if (kind == "linear_omega") track.kind = JointTrack::Kind::LinearOmega;
                else if (kind == "quadratic") track.kind = JointTrack::Kind::Quadratic;
                else if (kind == "keyframes") track.kind = JointTrack::Kind::Keyframes;
                else throw DataError("unknown joint track kind '" + kind + "'");
                if (t.contains("axis")) track.axis = to_vec3(t["axis"]);
                track.rate = t.value("rate", 0.0);
                track.alpha = t.value("alpha", 0.0);
                if (t.contains("times")) track.key_times = t["times"].get<std::vector<double>>();
                if (t.contains("quats")) {
                    for (const json& q : t["quats"]) {
                        track.key_quats.push_back(UnitQuaternion::normalized(
                            q.at(0).get<double>(), q.at(1).get<double>(), q.at(2).get<double>(),
                            q.at(3).get<double>()));
                    }
                }
                script.joints.push_back(std::move(track));
            }
        }
        return script;
    } catch (const json::exception& e) {
        throw DataError(std::string("script JSON: ") + e.what());
    }
}

MotionScript load_script_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    return load_script(in);
}

namespace {

// Edges to track: unique mesh edges, or bone segments when no faces exist.
struct EdgePoint {
    int v0 = -1, v1 = -1;  // mesh edge endpoints, or joints when bone == true
    bool bone = false;
    double alpha = 0.0;
};

std::vector<EdgePoint> sample_edge_points(const BodyModel& model, int samples_per_edge) {
    std::vector<std::pair<int, int>> edges;
    if (!model.faces().empty()) {
        std::set<std::pair<int, int>> seen;
        for (const auto& f : model.faces()) {
            for (int e = 0; e < 3; ++e) {
                int a = f[e], b = f[(e + 1) % 3];
                if (a > b) std::swap(a, b);
                if (seen.insert({a, b}).second) edges.emplace_back(a, b);
            }
        }
    }
    bool bone = edges.empty();
    if (bone) {
        for (int jnt = 1; jnt < model.joint_count(); ++jnt) {
            edges.emplace_back(model.parent()[jnt], jnt);
        }
    }
    if (edges.empty()) throw std::invalid_argument("model has neither faces nor bones to sample");

    std::vector<EdgePoint> points;
    points.reserve(edges.size() * samples_per_edge);
    for (auto [a, b] : edges) {
        for (int s = 0; s < samples_per_edge; ++s) {
            EdgePoint p;
            p.v0 = a;
            p.v1 = b;
            p.bone = bone;
            p.alpha = (s + 0.5) / samples_per_edge;  // interior samples; no corner duplicates
            points.push_back(p);
        }
    }
    return points;
}

}  // namespace

SynthOutput generate(const BodyModel& model, const Camera& cam, const MotionScript& script,
                     int samples_per_edge, double dt_sim) {
    if (samples_per_edge < 1) throw std::invalid_argument("samples_per_edge must be >= 1");
    if (dt_sim <= 0.0) throw std::invalid_argument("dt_sim must be positive");

    std::vector<EdgePoint> points = sample_edge_points(model, samples_per_edge);
    const std::size_t n = points.size();

    SynthOutput out;
    out.cam = cam;
    out.events.width = static_cast<std::uint32_t>(cam.width);
    out.events.height = static_cast<std::uint32_t>(cam.height);

    const int steps = static_cast<int>(std::ceil(script.duration / dt_sim));
    std::vector<Eigen::Vector2d> px(n), prev_px(n);
    std::vector<Eigen::Vector2d> edge_dir(n);
    std::vector<char> in_front(n, 0), prev_front(n, 0);

    auto project_all = [&](double t) {
        Pose pose = script.pose_at(model, t);
        FkResult fk = forward_kinematics(model, pose);
        std::vector<Eigen::Vector3d> verts;
        if (!points[0].bone) verts = skin_vertices(model, fk);
        for (std::size_t i = 0; i < n; ++i) {
            const EdgePoint& p = points[i];
            const Eigen::Vector3d& a = p.bone ? fk.position[p.v0] : verts[p.v0];
            const Eigen::Vector3d& b = p.bone ? fk.position[p.v1] : verts[p.v1];
            Eigen::Vector3d world = (1.0 - p.alpha) * a + p.alpha * b;
            in_front[i] = world.z() > 0.0 && a.z() > 0.0 && b.z() > 0.0 ? 1 : 0;
            if (!in_front[i]) continue;
            Eigen::Vector2d pa = project(cam, a), pb = project(cam, b);
            px[i] = (1.0 - p.alpha) * pa + p.alpha * pb;
            edge_dir[i] = pb - pa;
        }
    };

    project_all(0.0);
    prev_px = px;
    prev_front = in_front;

    for (int step = 1; step <= steps; ++step) {
        double t = std::min(step * dt_sim, script.duration);
        project_all(t);
        std::int64_t t_us = s_to_us(t);
        for (std::size_t i = 0; i < n; ++i) {
            if (!in_front[i] || !prev_front[i]) continue;
            Eigen::Vector2d motion = px[i] - prev_px[i];
            if (std::abs(motion.x()) > 1.0 || std::abs(motion.y()) > 1.0) {
                throw DataError("motion too fast for dt_sim: a point moved " +
                                std::to_string(motion.norm()) + " px in one step");
            }
            int ix_now = static_cast<int>(std::floor(px[i].x()));
            int iy_now = static_cast<int>(std::floor(px[i].y()));
            int ix_prev = static_cast<int>(std::floor(prev_px[i].x()));
            int iy_prev = static_cast<int>(std::floor(prev_px[i].y()));
            if (ix_now == ix_prev && iy_now == iy_prev) continue;
            // Label the event with the crossed-boundary pixel so a reversed
            // crossing lands on the same pixel with opposite polarity.
            int cx = std::max(ix_prev, ix_now);
            int cy = std::max(iy_prev, iy_now);
            if (cx < 0 || cx >= cam.width || cy < 0 || cy >= cam.height) continue;
            Eigen::Vector2d normal(-edge_dir[i].y(), edge_dir[i].x());
            double side = motion.dot(normal);
            if (std::abs(side) < 1e-12) {
                // Edge sliding along itself: fall back to the motion sign so
                // reversed scripts flip polarity.
                side = motion.x() != 0.0 ? motion.x() : motion.y();
            }
            Event e;
            e.t_us = t_us;
            e.x = static_cast<std::uint16_t>(cx);
            e.y = static_cast<std::uint16_t>(cy);
            e.p = side >= 0.0 ? 1 : -1;
            out.events.events.push_back(e);
        }
        prev_px = px;
        prev_front = in_front;
    }
    out.events.refresh_span();

    const int gt_samples = std::max(2, static_cast<int>(std::lround(script.gt_rate_hz *
                                                                    script.duration)) + 1);
    out.gt_times.resize(gt_samples);
    out.gt_poses.resize(gt_samples);
    for (int i = 0; i < gt_samples; ++i) {
        double t = script.duration * i / (gt_samples - 1);
        out.gt_times[i] = t;
        out.gt_poses[i] = script.pose_at(model, t);
    }
    return out;
}

FlowSamples gt_flow(const BodyModel& model, const Camera& cam, const MotionScript& script,
                    double t_i, double t_j) {
    if (t_i < 0.0 || t_j > script.duration || t_i > t_j) {
        throw std::invalid_argument("flow window outside the script duration");
    }
    return flow_between_poses(model, cam, script.pose_at(model, t_i),
                              script.pose_at(model, t_j));
}

EventStream add_noise(const EventStream& stream, double rate_per_px_s, std::uint64_t seed) {
    if (rate_per_px_s < 0.0) throw std::invalid_argument("noise rate must be >= 0");
    if (rate_per_px_s == 0.0) return stream;
    EventStream out = stream;
    double duration = stream.span_s();
    double mean = rate_per_px_s * static_cast<double>(stream.width) *
                  static_cast<double>(stream.height) * duration;
    std::mt19937_64 rng(seed);
    std::poisson_distribution<long> count_dist(mean);
    long count = count_dist(rng);
    std::uniform_int_distribution<std::int64_t> t_dist(stream.t_start, stream.t_end);
    std::uniform_int_distribution<int> x_dist(0, static_cast<int>(stream.width) - 1);
    std::uniform_int_distribution<int> y_dist(0, static_cast<int>(stream.height) - 1);
    std::uniform_int_distribution<int> p_dist(0, 1);
    for (long i = 0; i < count; ++i) {
        Event e;
        e.t_us = t_dist(rng);
        e.x = static_cast<std::uint16_t>(x_dist(rng));
        e.y = static_cast<std::uint16_t>(y_dist(rng));
        e.p = p_dist(rng) == 1 ? 1 : -1;
        out.events.push_back(e);
    }
    std::stable_sort(out.events.begin(), out.events.end(),
                     [](const Event& a, const Event& b) { return a.t_us < b.t_us; });
    out.refresh_span();
    return out;
}

}  // namespace evm
