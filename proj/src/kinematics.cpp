#include "evm/kinematics.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include <json.hpp>

#include "evm/common.hpp"

namespace evm {

Eigen::Vector2d project(const Camera& cam, const Eigen::Vector3d& point) {
    if (point.z() <= 0.0) throw std::domain_error("projection of a point with z <= 0");
    return {cam.fx * point.x() / point.z() + cam.cx, cam.fy * point.y() / point.z() + cam.cy};
}

Eigen::Matrix<double, 2, 3> project_jacobian(const Camera& cam, const Eigen::Vector3d& p) {
    if (p.z() <= 0.0) throw std::domain_error("projection of a point with z <= 0");
    Eigen::Matrix<double, 2, 3> j;
    const double iz = 1.0 / p.z();
    j << cam.fx * iz, 0.0, -cam.fx * p.x() * iz * iz,
        0.0, cam.fy * iz, -cam.fy * p.y() * iz * iz;
    return j;
}

BodyModel::BodyModel(std::vector<int> parent, std::vector<Eigen::Vector3d> offset,
                     std::vector<double> scale, std::vector<Eigen::Vector3d> vertices,
                     std::vector<std::vector<SkinWeight>> skin,
                     std::vector<std::array<int, 3>> faces, int head_joint, int neck_joint)
    : parent_(std::move(parent)),
      offset_(std::move(offset)),
      scale_(std::move(scale)),
      vertices_(std::move(vertices)),
      skin_(std::move(skin)),
      faces_(std::move(faces)),
      head_joint_(head_joint),
      neck_joint_(neck_joint) {
    const int joints = static_cast<int>(parent_.size());
    if (joints == 0) throw DataError("body model needs at least one joint");
    if (static_cast<int>(offset_.size()) != joints) throw DataError("offset count != joint count");
    if (scale_.empty()) scale_.assign(joints, 1.0);
    if (static_cast<int>(scale_.size()) != joints) throw DataError("scale count != joint count");
    if (parent_[0] != -1) throw DataError("joint 0 must be the root (parent -1)");

    // Tree check + evaluation order via child lists.
    std::vector<std::vector<int>> children(joints);
    for (int j = 1; j < joints; ++j) {
        if (parent_[j] < 0 || parent_[j] >= joints || parent_[j] == j) {
            throw DataError("joint " + std::to_string(j) + " has invalid parent");
        }
        children[parent_[j]].push_back(j);
    }
    order_.reserve(joints);
    order_.push_back(0);
    for (std::size_t i = 0; i < order_.size(); ++i) {
        for (int c : children[order_[i]]) order_.push_back(c);
    }
    if (static_cast<int>(order_.size()) != joints) {
        throw DataError("parent array contains a cycle");
    }

    if (skin_.size() != vertices_.size()) throw DataError("skin entry per vertex required");
    for (std::size_t v = 0; v < skin_.size(); ++v) {
        double total = 0.0;
        for (const SkinWeight& sw : skin_[v]) {
            if (sw.joint < 0 || sw.joint >= joints) throw DataError("skin joint out of range");
            if (sw.weight < 0.0) throw DataError("negative skin weight");
            total += sw.weight;
        }
        if (std::abs(total - 1.0) > 1e-9) {
            throw DataError("skin weights of vertex " + std::to_string(v) + " sum to " +
                            std::to_string(total));
        }
    }
    for (const auto& f : faces_) {
        for (int idx : f) {
            if (idx < 0 || idx >= static_cast<int>(vertices_.size())) {
                throw DataError("face vertex index out of range");
            }
        }
    }
    if (head_joint_ >= joints || neck_joint_ >= joints) {
        throw DataError("head/neck joint out of range");
    }

    rest_joints_.assign(joints, Eigen::Vector3d::Zero());
    for (int j : order_) {
        if (parent_[j] >= 0) {
            rest_joints_[j] = rest_joints_[parent_[j]] + scale_[j] * offset_[j];
        }
    }
}

double BodyModel::chain_length() const {
    double len = 0.0;
    for (int j = 1; j < joint_count(); ++j) len += scale_[j] * offset_[j].norm();
    return len;
}

double BodyModel::head_segment_length() const {
    if (head_joint_ < 0 || neck_joint_ < 0) {
        throw std::invalid_argument("model has no head/neck joints configured");
    }
    return (rest_joints_[head_joint_] - rest_joints_[neck_joint_]).norm();
}

Pose Pose::identity(int joints) {
    Pose p;
    p.local.assign(joints, UnitQuaternion());
    return p;
}

FkResult forward_kinematics(const BodyModel& model, const Pose& pose) {
    const int joints = model.joint_count();
    if (static_cast<int>(pose.local.size()) != joints) {
        throw std::invalid_argument("pose joint count mismatch");
    }
    FkResult fk;
    fk.position.resize(joints);
    fk.rotation.resize(joints);
    for (int j : model.order()) {
        int p = model.parent()[j];
        if (p < 0) {
            fk.rotation[j] = pose.root_rot;
            fk.position[j] = pose.root_t;
        } else {
            fk.rotation[j] = fk.rotation[p] * pose.local[j];
            fk.position[j] =
                fk.position[p] + fk.rotation[p].matrix() * (model.scale()[j] * model.offset()[j]);
        }
    }
    return fk;
}

FkGrad fk_backward(const BodyModel& model, const Pose& pose, const FkResult& fk,
                   std::span<const Eigen::Vector3d> d_position) {
    const int joints = model.joint_count();
    if (static_cast<int>(d_position.size()) != joints) {
        throw std::invalid_argument("one position gradient per joint required");
    }
    std::vector<Eigen::Vector3d> g_pos(d_position.begin(), d_position.end());
    std::vector<Eigen::Matrix3d> g_rot(joints, Eigen::Matrix3d::Zero());

    FkGrad out;
    out.d_local.assign(joints, Eigen::Vector4d::Zero());

    // Reverse evaluation order: children push their contributions into the
    // parent's world-rotation/position gradients.
    const auto& order = model.order();
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        int j = *it;
        int p = model.parent()[j];
        if (p < 0) {
            out.d_root_t = g_pos[j];
            auto dmat = rotation_matrix_jacobian(pose.root_rot);
            for (int c = 0; c < 4; ++c) {
                out.d_root_rot[c] = dmat[c].cwiseProduct(g_rot[j]).sum();
            }
            continue;
        }
        Eigen::Vector3d bone = model.scale()[j] * model.offset()[j];
        g_pos[p] += g_pos[j];
        g_rot[p] += g_pos[j] * bone.transpose() + g_rot[j] * pose.local[j].matrix().transpose();
        Eigen::Matrix3d d_local_mat = fk.rotation[p].matrix().transpose() * g_rot[j];
        auto dmat = rotation_matrix_jacobian(pose.local[j]);
        for (int c = 0; c < 4; ++c) {
            out.d_local[j][c] = dmat[c].cwiseProduct(d_local_mat).sum();
        }
    }
    return out;
}

std::vector<Eigen::Vector3d> skin_vertices(const BodyModel& model, const FkResult& fk) {
    std::vector<Eigen::Matrix3d> rot(model.joint_count());
    for (int j = 0; j < model.joint_count(); ++j) rot[j] = fk.rotation[j].matrix();
    std::vector<Eigen::Vector3d> out(model.vertex_count());
    for (int v = 0; v < model.vertex_count(); ++v) {
        Eigen::Vector3d acc = Eigen::Vector3d::Zero();
        const Eigen::Vector3d& tmpl = model.vertices()[v];
        for (const SkinWeight& sw : model.skin()[v]) {
            acc += sw.weight *
                   (rot[sw.joint] * (tmpl - model.rest_joints()[sw.joint]) + fk.position[sw.joint]);
        }
        out[v] = acc;
    }
    return out;
}

std::vector<Eigen::Vector3d> skin_vertices(const BodyModel& model, const Pose& pose) {
    return skin_vertices(model, forward_kinematics(model, pose));
}

std::vector<char> visibility(const Camera& cam, std::span<const Eigen::Vector3d> verts_world,
                             std::span<const std::array<int, 3>> faces,
                             double raster_scale, double depth_eps) {
    const int n = static_cast<int>(verts_world.size());
    const int bw = std::max(1, static_cast<int>(std::lround(cam.width * raster_scale)));
    const int bh = std::max(1, static_cast<int>(std::lround(cam.height * raster_scale)));

    std::vector<Eigen::Vector2d> px(n);
    std::vector<char> in_front(n, 0);
    for (int v = 0; v < n; ++v) {
        if (verts_world[v].z() > 0.0) {
            in_front[v] = 1;
            px[v] = project(cam, verts_world[v]) * raster_scale;
        }
    }

    std::vector<double> zbuf(static_cast<std::size_t>(bw) * bh,
                             std::numeric_limits<double>::infinity());
    for (const auto& f : faces) {
        if (!in_front[f[0]] || !in_front[f[1]] || !in_front[f[2]]) continue;
        const Eigen::Vector2d &a = px[f[0]], &b = px[f[1]], &c = px[f[2]];
        double za = verts_world[f[0]].z(), zb = verts_world[f[1]].z(), zc = verts_world[f[2]].z();
        double area = (b - a).x() * (c - a).y() - (b - a).y() * (c - a).x();
        if (std::abs(area) < 1e-12) continue;
        int x0 = std::max(0, static_cast<int>(std::floor(std::min({a.x(), b.x(), c.x()}))));
        int x1 = std::min(bw - 1, static_cast<int>(std::ceil(std::max({a.x(), b.x(), c.x()}))));
        int y0 = std::max(0, static_cast<int>(std::floor(std::min({a.y(), b.y(), c.y()}))));
        int y1 = std::min(bh - 1, static_cast<int>(std::ceil(std::max({a.y(), b.y(), c.y()}))));
        for (int y = y0; y <= y1; ++y) {
            for (int x = x0; x <= x1; ++x) {
                Eigen::Vector2d q(x, y);
                double wa = ((b - q).x() * (c - q).y() - (b - q).y() * (c - q).x()) / area;
                double wb = ((c - q).x() * (a - q).y() - (c - q).y() * (a - q).x()) / area;
                double wc = 1.0 - wa - wb;
                if (wa < 0.0 || wb < 0.0 || wc < 0.0) continue;
                double z = wa * za + wb * zb + wc * zc;
                double& cell = zbuf[static_cast<std::size_t>(y) * bw + x];
                if (z < cell) cell = z;
            }
        }
    }

    std::vector<char> visible(n, 0);
    for (int v = 0; v < n; ++v) {
        if (!in_front[v]) continue;
        int x = static_cast<int>(std::lround(px[v].x()));
        int y = static_cast<int>(std::lround(px[v].y()));
        if (x < 0 || x >= bw || y < 0 || y >= bh) continue;
        if (verts_world[v].z() <= zbuf[static_cast<std::size_t>(y) * bw + x] + depth_eps) {
            visible[v] = 1;
        }
    }
    return visible;
}

std::vector<char> visibility(const Camera& cam, const BodyModel& model, const Pose& pose,
                             double raster_scale, double depth_eps) {
    std::vector<Eigen::Vector3d> verts = skin_vertices(model, pose);
    return visibility(cam, verts, model.faces(), raster_scale, depth_eps);
}

namespace {

using nlohmann::json;

Eigen::Vector3d to_vec3(const json& j) {
    if (!j.is_array() || j.size() != 3) throw DataError("expected a 3-element array");
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

}  // namespace

BodyModel load_body_model(std::istream& in) {
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw DataError(std::string("body model JSON: ") + e.what());
    }
    try {
        std::vector<int> parent = j.at("parents").get<std::vector<int>>();
        std::vector<Eigen::Vector3d> offset, vertices;
        for (const auto& o : j.at("offsets")) offset.push_back(to_vec3(o));
        std::vector<double> scale;
        if (j.contains("scale")) scale = j["scale"].get<std::vector<double>>();
        for (const auto& v : j.at("vertices")) vertices.push_back(to_vec3(v));
        std::vector<std::vector<SkinWeight>> skin;
        for (const auto& per_vertex : j.at("weights")) {
            std::vector<SkinWeight> ws;
            for (const auto& w : per_vertex) {
                ws.push_back(SkinWeight{w.at(0).get<int>(), w.at(1).get<double>()});
            }
            skin.push_back(std::move(ws));
        }
        std::vector<std::array<int, 3>> faces;
        if (j.contains("faces")) {
            for (const auto& f : j["faces"]) {
                faces.push_back({f.at(0).get<int>(), f.at(1).get<int>(), f.at(2).get<int>()});
            }
        }
        int head = j.value("head_joint", -1);
        int neck = j.value("neck_joint", -1);
        return BodyModel(std::move(parent), std::move(offset), std::move(scale),
                         std::move(vertices), std::move(skin), std::move(faces), head, neck);
    } catch (const json::exception& e) {
        throw DataError(std::string("body model JSON: ") + e.what());
    }
}

BodyModel load_body_model_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    return load_body_model(in);
}

void save_body_model(const BodyModel& model, std::ostream& out) {
    json j;
    j["parents"] = model.parent();
    for (const auto& o : model.offset()) j["offsets"].push_back({o.x(), o.y(), o.z()});
    j["scale"] = model.scale();
    j["vertices"] = json::array();
    for (const auto& v : model.vertices()) j["vertices"].push_back({v.x(), v.y(), v.z()});
    j["weights"] = json::array();
    for (const auto& ws : model.skin()) {
        json per_vertex = json::array();
        for (const auto& w : ws) per_vertex.push_back({w.joint, w.weight});
        j["weights"].push_back(per_vertex);
    }
    j["faces"] = json::array();
    for (const auto& f : model.faces()) j["faces"].push_back({f[0], f[1], f[2]});
    if (model.head_joint() >= 0) j["head_joint"] = model.head_joint();
    if (model.neck_joint() >= 0) j["neck_joint"] = model.neck_joint();
    out << j.dump(2) << '\n';
}

}  // namespace evm
