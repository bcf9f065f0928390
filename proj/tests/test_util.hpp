#pragma once

#include <random>

#include <Eigen/Core>

#include "evm/rotation.hpp"

namespace test_util {

inline evm::UnitQuaternion random_quat(std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, 1.0);
    double w = dist(rng), x = dist(rng), y = dist(rng), z = dist(rng);
    return evm::UnitQuaternion::normalized(w, x, y, z);
}

inline Eigen::Vector3d random_vec3(std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> dist(0.0, scale);
    return {dist(rng), dist(rng), dist(rng)};
}

inline Eigen::Vector3d random_unit3(std::mt19937_64& rng) {
    Eigen::Vector3d v = random_vec3(rng);
    while (v.norm() < 1e-6) v = random_vec3(rng);
    return v.normalized();
}

// Relative error with a floor, for finite-difference gradient checks.
inline double rel_err(double a, double b, double floor = 1e-4) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace test_util
