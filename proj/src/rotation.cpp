#include "evm/rotation.hpp"

#include <cmath>
#include <stdexcept>

namespace evm {

UnitQuaternion::UnitQuaternion(double w, double x, double y, double z)
    : w_(w), x_(x), y_(y), z_(z) {
    double n = std::sqrt(w * w + x * x + y * y + z * z);
    if (std::abs(n - 1.0) > 1e-6) {
        throw std::invalid_argument("quaternion norm " + std::to_string(n) + " is not unit");
    }
    w_ /= n;
    x_ /= n;
    y_ /= n;
    z_ /= n;
    canonicalize();
}

UnitQuaternion UnitQuaternion::normalized(double w, double x, double y, double z) {
    double n = std::sqrt(w * w + x * x + y * y + z * z);
    if (n < 1e-300) throw std::invalid_argument("cannot normalize zero quaternion");
    UnitQuaternion q(w / n, x / n, y / n, z / n, Unchecked{});
    q.canonicalize();
    return q;
}

UnitQuaternion UnitQuaternion::from_axis_angle(const Eigen::Vector3d& axis, double angle) {
    double n = axis.norm();
    if (n < 1e-300) throw std::invalid_argument("zero rotation axis");
    Eigen::Vector3d u = axis / n;
    double h = 0.5 * angle, s = std::sin(h);
    UnitQuaternion q(std::cos(h), u.x() * s, u.y() * s, u.z() * s, Unchecked{});
    q.canonicalize();
    return q;
}

UnitQuaternion UnitQuaternion::from_matrix(const Eigen::Matrix3d& rot) {
    Eigen::Quaterniond q(rot);
    return UnitQuaternion::normalized(q.w(), q.x(), q.y(), q.z());
}

void UnitQuaternion::canonicalize() {
    if (w_ < 0.0) {
        w_ = -w_;
        x_ = -x_;
        y_ = -y_;
        z_ = -z_;
    }
}

Eigen::Matrix3d UnitQuaternion::matrix() const {
    const double w = w_, x = x_, y = y_, z = z_;
    Eigen::Matrix3d r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return r;
}

UnitQuaternion UnitQuaternion::conjugate() const {
    UnitQuaternion q(w_, -x_, -y_, -z_, Unchecked{});
    return q;  // w unchanged, already canonical
}

double UnitQuaternion::dot(const UnitQuaternion& o) const {
    return w_ * o.w_ + x_ * o.x_ + y_ * o.y_ + z_ * o.z_;
}

Eigen::Vector3d UnitQuaternion::log_vec() const {
    Eigen::Vector3d v(x_, y_, z_);
    double vn = v.norm();
    if (vn < 1e-15) return Eigen::Vector3d::Zero();
    double half_angle = std::atan2(vn, w_);
    return v * (half_angle / vn);
}

Eigen::Vector3d UnitQuaternion::rotate(const Eigen::Vector3d& v) const {
    return matrix() * v;
}

double UnitQuaternion::angle_between(const UnitQuaternion& a, const UnitQuaternion& b) {
    double d = std::min(1.0, std::abs(a.dot(b)));
    return 2.0 * std::acos(d);
}

UnitQuaternion operator*(const UnitQuaternion& a, const UnitQuaternion& b) {
    double w = a.w_ * b.w_ - a.x_ * b.x_ - a.y_ * b.y_ - a.z_ * b.z_;
    double x = a.w_ * b.x_ + a.x_ * b.w_ + a.y_ * b.z_ - a.z_ * b.y_;
    double y = a.w_ * b.y_ - a.x_ * b.z_ + a.y_ * b.w_ + a.z_ * b.x_;
    double z = a.w_ * b.z_ + a.x_ * b.y_ - a.y_ * b.x_ + a.z_ * b.w_;
    UnitQuaternion q(w, x, y, z, UnitQuaternion::Unchecked{});
    q.canonicalize();
    return q;
}

double geodesic(const Eigen::Matrix3d& r1, const Eigen::Matrix3d& r2) {
    auto check = [](const Eigen::Matrix3d& r) {
        if ((r * r.transpose() - Eigen::Matrix3d::Identity()).norm() > 1e-6 ||
            std::abs(r.determinant() - 1.0) > 1e-6) {
            throw std::invalid_argument("input is not a rotation matrix");
        }
    };
    check(r1);
    check(r2);
    Eigen::Matrix3d rel = r1 * r2.transpose();
    double c = std::clamp((rel.trace() - 1.0) / 2.0, -1.0, 1.0);
    double angle = std::acos(c);
    return std::sqrt(2.0) * angle;
}

UnitQuaternion slerp(const UnitQuaternion& q0, const UnitQuaternion& q1, double u) {
    if (u < 0.0 || u > 1.0) throw std::invalid_argument("slerp parameter outside [0,1]");
    if (u == 0.0) return q0;
    if (u == 1.0) return q1;
    Eigen::Vector4d a = q0.coeffs(), b = q1.coeffs();
    double d = a.dot(b);
    if (d < 0.0) {  // shortest arc
        b = -b;
        d = -d;
    }
    if (d > 1.0 - 1e-12) {  // degenerate arc: nlerp limit
        Eigen::Vector4d m = (1.0 - u) * a + u * b;
        return UnitQuaternion::normalized(m[0], m[1], m[2], m[3]);
    }
    double omega = std::acos(std::clamp(d, -1.0, 1.0));
    double s = std::sin(omega);
    Eigen::Vector4d m = (std::sin((1.0 - u) * omega) / s) * a + (std::sin(u * omega) / s) * b;
    return UnitQuaternion::normalized(m[0], m[1], m[2], m[3]);
}

Eigen::Matrix4d quat_left(const UnitQuaternion& q) {
    const double w = q.w(), x = q.x(), y = q.y(), z = q.z();
    Eigen::Matrix4d m;
    m << w, -x, -y, -z,
        x, w, -z, y,
        y, z, w, -x,
        z, -y, x, w;
    return m;
}

Eigen::Matrix4d quat_right(const UnitQuaternion& q) {
    const double w = q.w(), x = q.x(), y = q.y(), z = q.z();
    Eigen::Matrix4d m;
    m << w, -x, -y, -z,
        x, w, z, -y,
        y, -z, w, x,
        z, y, -x, w;
    return m;
}

std::array<Eigen::Matrix3d, 4> rotation_matrix_jacobian(const UnitQuaternion& q) {
    const double w = q.w(), x = q.x(), y = q.y(), z = q.z();
    std::array<Eigen::Matrix3d, 4> d;
    d[0] << 0, -z, y,
        z, 0, -x,
        -y, x, 0;
    d[1] << 0, y, z,
        y, -2 * x, -w,
        z, w, -2 * x;
    d[2] << -2 * y, x, w,
        x, 0, z,
        -w, z, -2 * y;
    d[3] << -2 * z, -w, x,
        w, -2 * z, y,
        x, y, 0;
    for (auto& m : d) m *= 2.0;
    return d;
}

}  // namespace evm
