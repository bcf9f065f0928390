#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "evm/cmax.hpp"
#include "evm/event_io.hpp"
#include "evm/kinematics.hpp"
#include "evm/rotation.hpp"

namespace evm {

// Analytic per-joint angular trajectory.
struct JointTrack {
    enum class Kind { Constant, LinearOmega, Quadratic, Keyframes };
    int joint = 0;
    Kind kind = Kind::Constant;
    Eigen::Vector3d axis = Eigen::Vector3d::UnitZ();
    double rate = 0.0;   // rad/s for LinearOmega
    double alpha = 0.0;  // rad/s^2 for Quadratic: theta(t) = alpha t^2 / 2
    std::vector<double> key_times;
    std::vector<UnitQuaternion> key_quats;

    UnitQuaternion at(double t) const;
};

struct RootTrack {
    enum class Kind { Static, Linear, Quadratic, Bounce };
    Kind kind = Kind::Static;
    Eigen::Vector3d start = Eigen::Vector3d::Zero();
    Eigen::Vector3d velocity = Eigen::Vector3d::Zero();
    Eigen::Vector3d accel = Eigen::Vector3d::Zero();
    double flip_time = 0.0;  // Bounce: velocity negates at this time

    Eigen::Vector3d at(double t) const;
};

// Scripted articulated motion with exactly evaluable poses.
struct MotionScript {
    double duration = 1.0;
    std::uint64_t seed = 0;
    double gt_rate_hz = 100.0;
    RootTrack root;
    std::vector<JointTrack> joints;

    Pose pose_at(const BodyModel& model, double t) const;
};

MotionScript load_script(std::istream& in);
MotionScript load_script_file(const std::string& path);

struct SynthOutput {
    EventStream events;
    std::vector<double> gt_times;  // seconds from sequence start
    std::vector<Pose> gt_poses;
    Camera cam;
};

// Pixel-crossing event model: points are sampled along mesh edges (bone
// segments when the model has no faces), poses advance by dt_sim, and a point
// emits an event whenever its integer pixel changes. Polarity is the sign of
// the motion component along the projected edge normal. Throws DataError when
// a point moves more than one pixel per step.
SynthOutput generate(const BodyModel& model, const Camera& cam, const MotionScript& script,
                     int samples_per_edge = 32, double dt_sim = 1e-4);

// Exact per-vertex flow between two script times (same formula and code path
// as the estimation-side vertex flow, evaluated on ground-truth poses).
FlowSamples gt_flow(const BodyModel& model, const Camera& cam, const MotionScript& script,
                    double t_i, double t_j);

// Adds uniform background events at the given per-pixel rate (Poisson count,
// uniform position/time, random polarity); the merged stream is stably
// re-sorted by timestamp.
EventStream add_noise(const EventStream& stream, double rate_per_px_s, std::uint64_t seed);

}  // namespace evm
