#include <doctest.h>

#include <random>

#include "evm/common.hpp"
#include "evm/kinematics.hpp"
#include "test_models.hpp"
#include "test_util.hpp"

using evm::BodyModel;
using evm::Pose;
using evm::UnitQuaternion;
using test_util::random_quat;
using test_util::random_vec3;

TEST_CASE("projection basics") {
    evm::Camera cam{1.0, 1.0, 0.0, 0.0, 100, 100};
    Eigen::Vector2d p = evm::project(cam, {0.0, 0.0, 1.0});
    CHECK(p.x() == doctest::Approx(0.0));
    CHECK(p.y() == doctest::Approx(0.0));

    evm::Camera cam2{100.0, 100.0, 50.0, 50.0, 100, 100};
    Eigen::Vector2d q = evm::project(cam2, {1.0, 2.0, 2.0});
    CHECK(q.x() == doctest::Approx(100.0));
    CHECK(q.y() == doctest::Approx(150.0));

    CHECK_THROWS_AS(evm::project(cam, {0.0, 0.0, -1.0}), std::domain_error);
    CHECK_THROWS_AS(evm::project(cam, {0.0, 0.0, 0.0}), std::domain_error);
}

TEST_CASE("projection jacobian matches finite differences") {
    evm::Camera cam{120.0, 80.0, 64.0, 48.0, 128, 96};
    Eigen::Vector3d x(0.3, -0.2, 2.0);
    auto jac = evm::project_jacobian(cam, x);
    const double h = 1e-7;
    for (int c = 0; c < 3; ++c) {
        Eigen::Vector3d xp = x, xm = x;
        xp[c] += h;
        xm[c] -= h;
        Eigen::Vector2d fd = (evm::project(cam, xp) - evm::project(cam, xm)) / (2 * h);
        CHECK((fd - jac.col(c)).norm() < 1e-5);
    }
}

TEST_CASE("body model validation") {
    using SW = evm::SkinWeight;
    // cycle
    CHECK_THROWS_AS(BodyModel({-1, 2, 1}, {{0, 0, 0}, {1, 0, 0}, {1, 0, 0}}, {}, {}, {}, {}),
                    evm::DataError);
    // joint 0 must be root
    CHECK_THROWS_AS(BodyModel({1, -1}, {{0, 0, 0}, {1, 0, 0}}, {}, {}, {}, {}), evm::DataError);
    // bad skin weights
    CHECK_THROWS_AS(BodyModel({-1}, {{0, 0, 0}}, {}, {{0, 0, 0}}, {{SW{0, 0.5}}}, {}),
                    evm::DataError);
    // face index out of range
    CHECK_THROWS_AS(BodyModel({-1}, {{0, 0, 0}}, {}, {{0, 0, 0}}, {{SW{0, 1.0}}}, {{{0, 0, 5}}}),
                    evm::DataError);
}

TEST_CASE("fk identity pose gives cumulative offsets") {
    BodyModel model = test_models::chain(4, 0.5);
    evm::FkResult fk = evm::forward_kinematics(model, Pose::identity(4));
    for (int j = 0; j < 4; ++j) {
        CHECK(fk.position[j].x() == doctest::Approx(0.5 * j));
        CHECK(fk.position[j].y() == doctest::Approx(0.0));
    }
}

TEST_CASE("fk rotates children about the root") {
    BodyModel model = test_models::chain(2, 1.0);
    Pose pose = Pose::identity(2);
    pose.root_rot = UnitQuaternion::from_axis_angle(Eigen::Vector3d::UnitZ(), M_PI / 2);
    evm::FkResult fk = evm::forward_kinematics(model, pose);
    CHECK(fk.position[1].x() == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(fk.position[1].y() == doctest::Approx(1.0));
}

TEST_CASE("fk matches a homogeneous-transform oracle on a random chain") {
    std::mt19937_64 rng(71);
    BodyModel model = test_models::chain(6, 0.3);
    for (int trial = 0; trial < 25; ++trial) {
        Pose pose = Pose::identity(6);
        pose.root_rot = random_quat(rng);
        pose.root_t = random_vec3(rng);
        for (int j = 1; j < 6; ++j) pose.local[j] = random_quat(rng);

        evm::FkResult fk = evm::forward_kinematics(model, pose);

        // Oracle: explicit 4x4 composition along the chain.
        Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
        m.topLeftCorner<3, 3>() = pose.root_rot.matrix();
        m.topRightCorner<3, 1>() = pose.root_t;
        for (int j = 0; j < 6; ++j) {
            if (j > 0) {
                Eigen::Matrix4d local = Eigen::Matrix4d::Identity();
                local.topLeftCorner<3, 3>() = pose.local[j].matrix();
                local.topRightCorner<3, 1>() = model.scale()[j] * model.offset()[j];
                // translation applies in the parent frame, then rotate
                Eigen::Matrix4d step = Eigen::Matrix4d::Identity();
                step.topRightCorner<3, 1>() = model.scale()[j] * model.offset()[j];
                step.topLeftCorner<3, 3>() = pose.local[j].matrix();
                m = m * step;
            }
            CHECK((fk.position[j] - m.topRightCorner<3, 1>()).norm() < 1e-9);
            CHECK((fk.rotation[j].matrix() - m.topLeftCorner<3, 3>()).norm() < 1e-9);
        }
    }
}

TEST_CASE("fk positions are invariant to quaternion sign flips") {
    std::mt19937_64 rng(73);
    BodyModel model = test_models::chain(4, 0.3);
    Pose pose = Pose::identity(4);
    pose.root_rot = random_quat(rng);
    for (int j = 1; j < 4; ++j) pose.local[j] = random_quat(rng);
    evm::FkResult fk = evm::forward_kinematics(model, pose);

    // canonicalization folds the flip back; positions must agree exactly
    Pose flipped = pose;
    for (int j = 1; j < 4; ++j) {
        const UnitQuaternion& q = pose.local[j];
        flipped.local[j] = UnitQuaternion::normalized(-q.w(), -q.x(), -q.y(), -q.z());
    }
    evm::FkResult fk2 = evm::forward_kinematics(model, flipped);
    for (int j = 0; j < 4; ++j) {
        CHECK((fk.position[j] - fk2.position[j]).norm() < 1e-12);
    }
}

TEST_CASE("fk backward matches finite differences through local rotations") {
    std::mt19937_64 rng(79);
    BodyModel model = test_models::chain(5, 0.4);
    Pose pose = Pose::identity(5);
    pose.root_rot = random_quat(rng);
    pose.root_t = random_vec3(rng);
    for (int j = 1; j < 5; ++j) pose.local[j] = random_quat(rng);

    // Scalar loss: sum of dot(g_j, P_j) with fixed random g.
    std::vector<Eigen::Vector3d> g(5);
    for (auto& v : g) v = random_vec3(rng);

    evm::FkResult fk = evm::forward_kinematics(model, pose);
    evm::FkGrad grad = evm::fk_backward(model, pose, fk, g);

    CHECK((grad.d_root_t - (g[0] + g[1] + g[2] + g[3] + g[4])).norm() < 1e-12);

    const double h = 1e-6;
    for (int j = 1; j < 5; ++j) {
        Eigen::Vector4d fd;
        for (int c = 0; c < 4; ++c) {
            auto probe = [&](double eps) {
                Pose p2 = pose;
                Eigen::Vector4d q = pose.local[j].coeffs();
                q[c] += eps;
                q.normalize();
                p2.local[j] = evm::UnitQuaternion::normalized(q[0], q[1], q[2], q[3]);
                evm::FkResult f2 = evm::forward_kinematics(model, p2);
                double loss = 0.0;
                for (int k = 0; k < 5; ++k) loss += g[k].dot(f2.position[k]);
                return loss;
            };
            fd[c] = (probe(h) - probe(-h)) / (2 * h);
        }
        // The analytic gradient lives on the unit sphere; compare after
        // projecting out the radial direction (the FD probe renormalizes).
        Eigen::Vector4d q = pose.local[j].coeffs();
        Eigen::Vector4d analytic = grad.d_local[j] - q * q.dot(grad.d_local[j]);
        CHECK((analytic - fd).norm() < 1e-5);
    }
}

TEST_CASE("skinning identity and rigid binding") {
    BodyModel model = test_models::chain(3, 0.5);
    std::vector<Eigen::Vector3d> rest = evm::skin_vertices(model, Pose::identity(3));
    for (int v = 0; v < model.vertex_count(); ++v) {
        CHECK((rest[v] - model.vertices()[v]).norm() < 1e-12);
    }

    // vertex 2 is fully bound to joint 2: it must move rigidly with it
    Pose pose = Pose::identity(3);
    pose.local[1] = UnitQuaternion::from_axis_angle(Eigen::Vector3d::UnitZ(), M_PI / 2);
    evm::FkResult fk = evm::forward_kinematics(model, pose);
    std::vector<Eigen::Vector3d> skinned = evm::skin_vertices(model, pose);
    Eigen::Vector3d expect =
        fk.rotation[2].matrix() * (model.vertices()[2] - model.rest_joints()[2]) +
        fk.position[2];
    CHECK((skinned[2] - expect).norm() < 1e-12);
}

TEST_CASE("blended vertex matches the per-joint transform average") {
    std::mt19937_64 rng(83);
    BodyModel chain = test_models::chain(3, 0.5);
    // weighted vertex between joints 1 and 2
    std::vector<std::vector<evm::SkinWeight>> skin = chain.skin();
    std::vector<Eigen::Vector3d> verts = chain.vertices();
    verts.push_back({0.75, 0.1, 0.0});
    skin.push_back({{1, 0.3}, {2, 0.7}});
    BodyModel model(chain.parent(), chain.offset(), chain.scale(), verts, skin, {});

    Pose pose = Pose::identity(3);
    pose.root_rot = random_quat(rng);
    pose.root_t = random_vec3(rng);
    pose.local[1] = random_quat(rng);
    pose.local[2] = random_quat(rng);
    evm::FkResult fk = evm::forward_kinematics(model, pose);
    std::vector<Eigen::Vector3d> skinned = evm::skin_vertices(model, pose);

    Eigen::Vector3d v = verts.back();
    Eigen::Vector3d expect =
        0.3 * (fk.rotation[1].matrix() * (v - model.rest_joints()[1]) + fk.position[1]) +
        0.7 * (fk.rotation[2].matrix() * (v - model.rest_joints()[2]) + fk.position[2]);
    CHECK((skinned.back() - expect).norm() < 1e-12);
}

TEST_CASE("root-bound skinning is a rigid transform of the template") {
    std::mt19937_64 rng(89);
    BodyModel model = test_models::bar();
    Pose pose = Pose::identity(1);
    pose.root_rot = random_quat(rng);
    pose.root_t = random_vec3(rng);
    std::vector<Eigen::Vector3d> skinned = evm::skin_vertices(model, pose);
    for (int v = 0; v < model.vertex_count(); ++v) {
        Eigen::Vector3d expect = pose.root_rot.matrix() * model.vertices()[v] + pose.root_t;
        CHECK((skinned[v] - expect).norm() < 1e-12);
    }
}

TEST_CASE("visibility: front plate occludes a back plate") {
    // Two quads, both facing the camera; the front one is larger and closer.
    std::vector<Eigen::Vector3d> verts;
    std::vector<std::vector<evm::SkinWeight>> skin;
    // front quad at z=1 spanning +-0.5
    verts.push_back({-0.5, -0.5, 1.0});
    verts.push_back({0.5, -0.5, 1.0});
    verts.push_back({0.5, 0.5, 1.0});
    verts.push_back({-0.5, 0.5, 1.0});
    // back quad at z=2 spanning +-0.25
    verts.push_back({-0.25, -0.25, 2.0});
    verts.push_back({0.25, -0.25, 2.0});
    verts.push_back({0.25, 0.25, 2.0});
    verts.push_back({-0.25, 0.25, 2.0});
    skin.assign(verts.size(), {{0, 1.0}});
    std::vector<std::array<int, 3>> faces{{0, 1, 2}, {0, 2, 3}, {4, 5, 6}, {4, 6, 7}};
    BodyModel model({-1}, {Eigen::Vector3d::Zero()}, {1.0}, verts, skin, faces);

    evm::Camera cam = test_models::camera(100.0, 128, 128);
    std::vector<char> vis = evm::visibility(cam, model, Pose::identity(1));
    for (int v = 0; v < 4; ++v) CHECK(vis[v] == 1);
    for (int v = 4; v < 8; ++v) CHECK(vis[v] == 0);
}

TEST_CASE("visibility: unoccluded plate is fully visible, behind-camera is not") {
    BodyModel model = test_models::bar();
    evm::Camera cam = test_models::camera();
    Pose pose = Pose::identity(1);
    pose.root_t = {0.0, 0.0, 2.0};
    std::vector<char> vis = evm::visibility(cam, model, pose);
    for (int v = 0; v < model.vertex_count(); ++v) CHECK(vis[v] == 1);

    pose.root_t = {0.0, 0.0, -2.0};
    std::vector<char> behind = evm::visibility(cam, model, pose);
    for (int v = 0; v < model.vertex_count(); ++v) CHECK(behind[v] == 0);
}

TEST_CASE("head segment length") {
    std::vector<int> parent{-1, 0, 1};
    std::vector<Eigen::Vector3d> offset{{0, 0, 0}, {0, 0.5, 0}, {0, 0.25, 0}};
    BodyModel model(parent, offset, {}, {}, {}, {}, 2, 1);
    CHECK(model.head_segment_length() == doctest::Approx(0.25));
    BodyModel no_head = test_models::chain(3);
    CHECK_THROWS_AS(no_head.head_segment_length(), std::invalid_argument);
}
