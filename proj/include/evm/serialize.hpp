#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "evm/kinematics.hpp"
#include "evm/metrics.hpp"
#include "evm/motion_field.hpp"
#include "evm/voxel.hpp"

namespace evm {

// Flat binary weight container: magic "EVW1", u32 section count, then per
// section a name, the dimension list and f64 data. One file holds a whole
// motion-model state (latents, decoder and GMP layer tensors, metadata).
struct WeightSection {
    std::vector<std::uint64_t> dims;
    std::vector<double> data;
};
using WeightFile = std::map<std::string, WeightSection>;

void write_weights(const WeightFile& sections, std::ostream& out);
WeightFile read_weights(std::istream& in);

WeightFile pack_motion_model(const MotionModel& state);
MotionModel unpack_motion_model(const WeightFile& sections);
void save_motion_model(const MotionModel& state, const std::string& path);
MotionModel load_motion_model(const std::string& path);

// Voxel grid binary: u32 bins/height/width, then f64 values bin-major,
// row-major within a bin.
void write_grid(const VoxelGrid& grid, std::ostream& out);
VoxelGrid read_grid(std::istream& in);

// 8-bit binary PGM, min-max normalized.
void write_pgm(std::span<const double> image, int width, int height, const std::string& path);

// Joint CSV: "frame,joint,x,y,z" with a header comment.
void write_joints_csv(const JointSet& joints, std::ostream& out);
JointSet read_joints_csv(std::istream& in);
void save_joints_csv(const JointSet& joints, const std::string& path);
JointSet load_joints_csv(const std::string& path);

// Pose-trajectory CSV: per row t_us, root quaternion, root translation, then
// per-joint local quaternions.
void write_pose_csv(std::span<const double> times_s, std::span<const Pose> poses,
                    std::ostream& out);
struct PoseTrajectory {
    std::vector<double> times_s;
    std::vector<Pose> poses;
};
PoseTrajectory read_pose_csv(std::istream& in);
void save_pose_csv(std::span<const double> times_s, std::span<const Pose> poses,
                   const std::string& path);
PoseTrajectory load_pose_csv(const std::string& path);

Camera load_camera_file(const std::string& path);
void save_camera_file(const Camera& cam, const std::string& path);

Pose load_pose_json_file(const std::string& path, int joints);
void save_pose_json_file(const Pose& pose, const std::string& path);

// FNV-1a 64-bit content hash, hex-encoded; used by run manifests.
std::string file_hash_hex(const std::string& path);

// Reproducibility record written next to every CLI output.
struct RunManifest {
    std::string subcommand;
    std::map<std::string, std::string> flags;
    std::map<std::string, std::string> input_hashes;
    std::string version;
    double wall_seconds = 0.0;
    std::uint64_t seed = 0;
};
void write_manifest(const RunManifest& manifest, const std::string& path);

}  // namespace evm
