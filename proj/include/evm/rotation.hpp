#pragma once

#include <array>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace evm {

// Unit quaternion with the sign convention w >= 0 (q and -q encode the same
// rotation; construction flips to the canonical representative). Matrices are
// derived on demand.
class UnitQuaternion {
public:
    UnitQuaternion() = default;

    // Requires a near-unit 4-vector (norm within 1e-6 of 1); renormalizes and
    // canonicalizes. Throws std::invalid_argument otherwise.
    UnitQuaternion(double w, double x, double y, double z);

    // Normalizes an arbitrary nonzero 4-vector.
    static UnitQuaternion normalized(double w, double x, double y, double z);
    static UnitQuaternion from_axis_angle(const Eigen::Vector3d& axis, double angle);
    static UnitQuaternion from_matrix(const Eigen::Matrix3d& rot);
    static UnitQuaternion identity() { return UnitQuaternion(); }

    double w() const { return w_; }
    double x() const { return x_; }
    double y() const { return y_; }
    double z() const { return z_; }
    Eigen::Vector4d coeffs() const { return {w_, x_, y_, z_}; }

    Eigen::Matrix3d matrix() const;
    UnitQuaternion conjugate() const;
    double dot(const UnitQuaternion& other) const;

    // Vector part of the quaternion logarithm: axis * (angle / 2).
    Eigen::Vector3d log_vec() const;

    Eigen::Vector3d rotate(const Eigen::Vector3d& v) const;

    // Rotation angle in radians between two unit quaternions, in [0, pi].
    static double angle_between(const UnitQuaternion& a, const UnitQuaternion& b);

    friend UnitQuaternion operator*(const UnitQuaternion& a, const UnitQuaternion& b);

private:
    struct Unchecked {};
    UnitQuaternion(double w, double x, double y, double z, Unchecked)
        : w_(w), x_(x), y_(y), z_(z) {}
    void canonicalize();

    double w_ = 1.0, x_ = 0.0, y_ = 0.0, z_ = 0.0;
};

// Frobenius norm of log(r1 * r2^T): sqrt(2) times the relative rotation angle.
// Throws std::invalid_argument if an input is not a rotation matrix (within
// 1e-6 in orthonormality).
double geodesic(const Eigen::Matrix3d& r1, const Eigen::Matrix3d& r2);

// Shortest-arc constant-angular-velocity interpolation, u in [0, 1].
// Endpoints are returned exactly. When the inputs encode the same rotation
// (|dot| ~ 1) the arc degenerates and normalized linear interpolation is
// used; for exactly opposite quaternion 4-vectors that limit returns q0.
UnitQuaternion slerp(const UnitQuaternion& q0, const UnitQuaternion& q1, double u);

// 4x4 matrices of left/right Hamilton multiplication on (w,x,y,z) coefficient
// vectors: quat_left(a) * vec(b) = vec(a*b), quat_right(b) * vec(a) = vec(a*b).
Eigen::Matrix4d quat_left(const UnitQuaternion& q);
Eigen::Matrix4d quat_right(const UnitQuaternion& q);

// d(matrix)/dq of the unit-quaternion rotation matrix, as four 3x3 matrices
// (w, x, y, z components). Valid on the unit sphere; callers project out the
// radial direction when chaining through a normalization.
std::array<Eigen::Matrix3d, 4> rotation_matrix_jacobian(const UnitQuaternion& q);

}  // namespace evm
