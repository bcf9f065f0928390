#pragma once

#include <array>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "evm/rotation.hpp"

namespace evm {

struct Camera {
    double fx = 1.0, fy = 1.0, cx = 0.0, cy = 0.0;
    int width = 0, height = 0;
};

// Perspective projection to pixel coordinates. Throws std::domain_error if
// the point is not in front of the camera (z <= 0).
Eigen::Vector2d project(const Camera& cam, const Eigen::Vector3d& point);

// d(pixel)/d(point) of project at the given point.
Eigen::Matrix<double, 2, 3> project_jacobian(const Camera& cam, const Eigen::Vector3d& point);

struct SkinWeight {
    int joint = 0;
    double weight = 0.0;
};

// Kinematic tree with a skinned vertex template. Joint 0 is the root
// (parent -1). Per-bone scale multipliers stand in for the shape parameters.
// Validated on construction: parent array must form a tree rooted at joint 0,
// skin weights per vertex must be nonnegative and sum to 1, face indices in
// range.
class BodyModel {
public:
    BodyModel(std::vector<int> parent, std::vector<Eigen::Vector3d> offset,
              std::vector<double> scale, std::vector<Eigen::Vector3d> vertices,
              std::vector<std::vector<SkinWeight>> skin,
              std::vector<std::array<int, 3>> faces,
              int head_joint = -1, int neck_joint = -1);

    int joint_count() const { return static_cast<int>(parent_.size()); }
    int vertex_count() const { return static_cast<int>(vertices_.size()); }

    const std::vector<int>& parent() const { return parent_; }
    const std::vector<Eigen::Vector3d>& offset() const { return offset_; }
    const std::vector<double>& scale() const { return scale_; }
    const std::vector<Eigen::Vector3d>& vertices() const { return vertices_; }
    const std::vector<std::vector<SkinWeight>>& skin() const { return skin_; }
    const std::vector<std::array<int, 3>>& faces() const { return faces_; }
    int head_joint() const { return head_joint_; }
    int neck_joint() const { return neck_joint_; }

    // Joints in parent-before-child evaluation order (starts at the root).
    const std::vector<int>& order() const { return order_; }
    // Joint positions of the rest pose (identity rotations, zero root).
    const std::vector<Eigen::Vector3d>& rest_joints() const { return rest_joints_; }

    // Total bone length (sum of scaled offset norms).
    double chain_length() const;
    // Rest-pose distance between the configured head and neck joints.
    double head_segment_length() const;

private:
    std::vector<int> parent_;
    std::vector<Eigen::Vector3d> offset_;
    std::vector<double> scale_;
    std::vector<Eigen::Vector3d> vertices_;
    std::vector<std::vector<SkinWeight>> skin_;
    std::vector<std::array<int, 3>> faces_;
    int head_joint_ = -1;
    int neck_joint_ = -1;
    std::vector<int> order_;
    std::vector<Eigen::Vector3d> rest_joints_;
};

BodyModel load_body_model(std::istream& in);
BodyModel load_body_model_file(const std::string& path);
void save_body_model(const BodyModel& model, std::ostream& out);

// Per-time body configuration: local joint rotations (entry 0 is unused for
// the root and kept identity for uniform indexing), root rotation, root
// translation.
struct Pose {
    std::vector<UnitQuaternion> local;
    UnitQuaternion root_rot;
    Eigen::Vector3d root_t = Eigen::Vector3d::Zero();

    static Pose identity(int joints);
};

struct FkResult {
    std::vector<Eigen::Vector3d> position;   // world joint positions
    std::vector<UnitQuaternion> rotation;    // world joint rotations
};

// World rotation = parent world rotation * local rotation; world position =
// parent position + parent world rotation * (scale * offset). The root takes
// root_rot / root_t directly.
FkResult forward_kinematics(const BodyModel& model, const Pose& pose);

// Reverse-mode gradients of a scalar loss through forward_kinematics given
// dL/d(world position) per joint. Quaternion gradients are raw 4-vectors on
// the unit sphere (callers chain them through their normalization).
struct FkGrad {
    std::vector<Eigen::Vector4d> d_local;  // per joint, entry 0 unused
    Eigen::Vector4d d_root_rot = Eigen::Vector4d::Zero();
    Eigen::Vector3d d_root_t = Eigen::Vector3d::Zero();
};
FkGrad fk_backward(const BodyModel& model, const Pose& pose, const FkResult& fk,
                   std::span<const Eigen::Vector3d> d_position);

// Linear blend skinning:
// v = sum_j w_j (R_j^world (v_template - rest_joint_j) + P_j^world).
std::vector<Eigen::Vector3d> skin_vertices(const BodyModel& model, const FkResult& fk);
std::vector<Eigen::Vector3d> skin_vertices(const BodyModel& model, const Pose& pose);

// Point z-buffer visibility: faces are rasterized over pixel centers at the
// camera resolution (scaled by raster_scale); a vertex is visible iff it is
// in front of the camera, lands inside the image, and its depth is within
// depth_eps of the buffer at its pixel. Vertices not covered by any face are
// visible whenever in front and inside the image.
std::vector<char> visibility(const Camera& cam, const BodyModel& model, const Pose& pose,
                             double raster_scale = 1.0, double depth_eps = 1e-3);
std::vector<char> visibility(const Camera& cam, std::span<const Eigen::Vector3d> verts_world,
                             std::span<const std::array<int, 3>> faces,
                             double raster_scale = 1.0, double depth_eps = 1e-3);

}  // namespace evm
