#include "evm/serialize.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "evm/common.hpp"

namespace evm {

namespace {

using nlohmann::json;

template <typename T>
void put_le(std::ostream& out, T value) {
    unsigned char bytes[sizeof(T)];
    std::uint64_t v;
    if constexpr (std::is_same_v<T, double>) {
        v = std::bit_cast<std::uint64_t>(value);
    } else {
        v = static_cast<std::uint64_t>(value);
    }
    for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get_le(std::istream& in) {
    unsigned char bytes[sizeof(T)];
    in.read(reinterpret_cast<char*>(bytes), sizeof(T));
    if (in.gcount() != sizeof(T)) throw DataError("truncated weight file");
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
    if constexpr (std::is_same_v<T, double>) {
        return std::bit_cast<double>(v);
    } else {
        return static_cast<T>(v);
    }
}

constexpr char kWeightMagic[4] = {'E', 'V', 'W', '1'};

}  // namespace

void write_weights(const WeightFile& sections, std::ostream& out) {
    out.write(kWeightMagic, 4);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(sections.size()));
    for (const auto& [name, section] : sections) {
        put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_le<std::uint32_t>(out, static_cast<std::uint32_t>(section.dims.size()));
        std::uint64_t count = 1;
        for (std::uint64_t d : section.dims) {
            put_le<std::uint64_t>(out, d);
            count *= d;
        }
        if (count != section.data.size()) throw DataError("weight section size mismatch");
        for (double v : section.data) put_le<double>(out, v);
    }
    if (!out) throw DataError("failed writing weight file");
}

WeightFile read_weights(std::istream& in) {
    char magic[4];
    in.read(magic, 4);
    if (in.gcount() != 4 || std::memcmp(magic, kWeightMagic, 4) != 0) {
        throw DataError("bad weight file magic");
    }
    WeightFile sections;
    std::uint32_t n = get_le<std::uint32_t>(in);
    for (std::uint32_t i = 0; i < n; ++i) {
        std::uint32_t name_len = get_le<std::uint32_t>(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        if (in.gcount() != static_cast<std::streamsize>(name_len)) {
            throw DataError("truncated weight file");
        }
        WeightSection section;
        std::uint32_t rank = get_le<std::uint32_t>(in);
        std::uint64_t count = 1;
        for (std::uint32_t d = 0; d < rank; ++d) {
            section.dims.push_back(get_le<std::uint64_t>(in));
            count *= section.dims.back();
        }
        section.data.resize(count);
        for (std::uint64_t k = 0; k < count; ++k) section.data[k] = get_le<double>(in);
        sections[name] = std::move(section);
    }
    return sections;
}

namespace {

WeightSection vec_section(const Eigen::VectorXd& v) {
    WeightSection s;
    s.dims = {static_cast<std::uint64_t>(v.size())};
    s.data.assign(v.data(), v.data() + v.size());
    return s;
}

WeightSection mat_section(const Eigen::MatrixXd& m) {
    WeightSection s;
    s.dims = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
    s.data.reserve(m.size());
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) s.data.push_back(m(r, c));
    }
    return s;
}

WeightSection scalar_list(std::initializer_list<double> values) {
    WeightSection s;
    s.dims = {values.size()};
    s.data = values;
    return s;
}

Eigen::VectorXd to_vector(const WeightSection& s) {
    return Eigen::Map<const Eigen::VectorXd>(s.data.data(),
                                             static_cast<Eigen::Index>(s.data.size()));
}

Eigen::MatrixXd to_matrix(const WeightSection& s) {
    if (s.dims.size() != 2) throw DataError("expected a rank-2 weight section");
    Eigen::MatrixXd m(s.dims[0], s.dims[1]);
    std::size_t k = 0;
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = s.data[k++];
    }
    return m;
}

const WeightSection& need(const WeightFile& f, const std::string& name) {
    auto it = f.find(name);
    if (it == f.end()) throw DataError("weight file missing section '" + name + "'");
    return it->second;
}

void pack_mlp(WeightFile& f, const std::string& prefix, const Mlp& mlp) {
    const MlpConfig& cfg = mlp.config();
    f[prefix + "/in_out"] = scalar_list({static_cast<double>(cfg.input_dim),
                                         static_cast<double>(cfg.output_dim),
                                         cfg.act == Activation::Tanh ? 0.0 : 1.0});
    WeightSection hidden;
    hidden.dims = {cfg.hidden.size()};
    for (int hdim : cfg.hidden) hidden.data.push_back(hdim);
    f[prefix + "/hidden"] = std::move(hidden);
    WeightSection skips;
    skips.dims = {cfg.skips.size()};
    for (int s : cfg.skips) skips.data.push_back(s);
    f[prefix + "/skips"] = std::move(skips);
    for (int l = 0; l < mlp.layer_count(); ++l) {
        f[prefix + "/L" + std::to_string(l) + "/W"] = mat_section(mlp.weights()[l]);
        f[prefix + "/L" + std::to_string(l) + "/b"] = vec_section(mlp.biases()[l]);
    }
}

Mlp unpack_mlp(const WeightFile& f, const std::string& prefix) {
    const auto& io = need(f, prefix + "/in_out").data;
    MlpConfig cfg;
    cfg.input_dim = static_cast<int>(io.at(0));
    cfg.output_dim = static_cast<int>(io.at(1));
    cfg.act = io.at(2) == 0.0 ? Activation::Tanh : Activation::Relu;
    for (double hdim : need(f, prefix + "/hidden").data) cfg.hidden.push_back(static_cast<int>(hdim));
    for (double s : need(f, prefix + "/skips").data) cfg.skips.push_back(static_cast<int>(s));
    Mlp mlp(cfg);
    for (int l = 0; l < mlp.layer_count(); ++l) {
        mlp.weight(l) = to_matrix(need(f, prefix + "/L" + std::to_string(l) + "/W"));
        mlp.bias(l) = to_vector(need(f, prefix + "/L" + std::to_string(l) + "/b"));
    }
    return mlp;
}

}  // namespace

WeightFile pack_motion_model(const MotionModel& state) {
    WeightFile f;
    const DecoderConfig& dc = state.decoder.config();
    f["decoder/meta"] = scalar_list({static_cast<double>(dc.joints),
                                     static_cast<double>(dc.freqs),
                                     static_cast<double>(dc.d_local),
                                     static_cast<double>(dc.d_global)});
    pack_mlp(f, "decoder/mlp", state.decoder.mlp());
    pack_mlp(f, "gmp", state.gmp);
    f["z_l"] = vec_section(state.z.z_l);
    f["z_g"] = vec_section(state.z.z_g);
    f["span_s"] = scalar_list({state.span_s});
    f["t0_us"] = scalar_list({static_cast<double>(state.t0_us)});
    f["init/root_rot"] = scalar_list({state.init_pose.root_rot.w(), state.init_pose.root_rot.x(),
                                      state.init_pose.root_rot.y(), state.init_pose.root_rot.z()});
    f["init/root_t"] = scalar_list(
        {state.init_pose.root_t.x(), state.init_pose.root_t.y(), state.init_pose.root_t.z()});
    WeightSection locals;
    locals.dims = {state.init_pose.local.size(), 4};
    for (const UnitQuaternion& q : state.init_pose.local) {
        locals.data.insert(locals.data.end(), {q.w(), q.x(), q.y(), q.z()});
    }
    f["init/local"] = std::move(locals);
    return f;
}

MotionModel unpack_motion_model(const WeightFile& f) {
    MotionModel state;
    const auto& meta = need(f, "decoder/meta").data;
    state.span_s = need(f, "span_s").data.at(0);
    if (auto it = f.find("t0_us"); it != f.end() && !it->second.data.empty()) {
        state.t0_us = static_cast<std::int64_t>(it->second.data[0]);
    }

    Mlp decoder_mlp = unpack_mlp(f, "decoder/mlp");
    DecoderConfig dc;
    dc.joints = static_cast<int>(meta.at(0));
    dc.freqs = static_cast<int>(meta.at(1));
    dc.d_local = static_cast<int>(meta.at(2));
    dc.d_global = static_cast<int>(meta.at(3));
    dc.hidden = decoder_mlp.config().hidden;
    dc.skips = decoder_mlp.config().skips;
    dc.act = decoder_mlp.config().act;
    state.decoder = MotionDecoder(dc, state.span_s);
    state.decoder.mlp() = std::move(decoder_mlp);

    state.gmp = unpack_mlp(f, "gmp");
    state.z.z_l = to_vector(need(f, "z_l"));
    state.z.z_g = to_vector(need(f, "z_g"));

    const auto& rr = need(f, "init/root_rot").data;
    state.init_pose.root_rot = UnitQuaternion::normalized(rr.at(0), rr.at(1), rr.at(2), rr.at(3));
    const auto& rt = need(f, "init/root_t").data;
    state.init_pose.root_t = {rt.at(0), rt.at(1), rt.at(2)};
    const auto& locals = need(f, "init/local");
    for (std::size_t j = 0; j < locals.dims.at(0); ++j) {
        const double* q = locals.data.data() + 4 * j;
        state.init_pose.local.push_back(UnitQuaternion::normalized(q[0], q[1], q[2], q[3]));
    }
    return state;
}

void save_motion_model(const MotionModel& state, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open " + path + " for writing");
    write_weights(pack_motion_model(state), out);
}

MotionModel load_motion_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    return unpack_motion_model(read_weights(in));
}

void write_grid(const VoxelGrid& grid, std::ostream& out) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(grid.bins));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(grid.height));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(grid.width));
    for (double v : grid.values) put_le<double>(out, v);
    if (!out) throw DataError("failed writing grid");
}

VoxelGrid read_grid(std::istream& in) {
    VoxelGrid grid;
    grid.bins = static_cast<int>(get_le<std::uint32_t>(in));
    grid.height = static_cast<int>(get_le<std::uint32_t>(in));
    grid.width = static_cast<int>(get_le<std::uint32_t>(in));
    std::size_t count = static_cast<std::size_t>(grid.bins) * grid.height * grid.width;
    grid.values.resize(count);
    for (std::size_t i = 0; i < count; ++i) grid.values[i] = get_le<double>(in);
    return grid;
}

void write_pgm(std::span<const double> image, int width, int height, const std::string& path) {
    if (static_cast<std::size_t>(width) * height != image.size()) {
        throw std::invalid_argument("pgm size mismatch");
    }
    double lo = image.empty() ? 0.0 : image[0], hi = lo;
    for (double v : image) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    double scale = hi > lo ? 255.0 / (hi - lo) : 0.0;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open " + path + " for writing");
    out << "P5\n" << width << " " << height << "\n255\n";
    for (double v : image) {
        out.put(static_cast<char>(static_cast<unsigned char>(std::lround((v - lo) * scale))));
    }
    if (!out) throw DataError("failed writing " + path);
}

void write_joints_csv(const JointSet& joints, std::ostream& out) {
    out << "# frame,joint,x,y,z\n";
    out.precision(17);
    for (std::size_t frame = 0; frame < joints.frames.size(); ++frame) {
        for (int j = 0; j < joints.joints; ++j) {
            const Eigen::Vector3d& p = joints.frames[frame][j];
            out << frame << ',' << j << ',' << p.x() << ',' << p.y() << ',' << p.z() << '\n';
        }
    }
}

JointSet read_joints_csv(std::istream& in) {
    std::string line;
    std::size_t line_no = 0;
    std::vector<std::vector<std::pair<int, Eigen::Vector3d>>> rows;
    int max_joint = -1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        std::string field;
        double vals[5];
        for (int i = 0; i < 5; ++i) {
            if (!std::getline(ss, field, ',')) throw ParseError("expected 5 fields", line_no);
            try {
                vals[i] = std::stod(field);
            } catch (const std::exception&) {
                throw ParseError("malformed number '" + field + "'", line_no);
            }
        }
        int frame = static_cast<int>(vals[0]);
        int joint = static_cast<int>(vals[1]);
        if (frame < 0 || joint < 0) throw ParseError("negative frame/joint index", line_no);
        if (frame >= static_cast<int>(rows.size())) rows.resize(frame + 1);
        rows[frame].emplace_back(joint, Eigen::Vector3d(vals[2], vals[3], vals[4]));
        max_joint = std::max(max_joint, joint);
    }
    JointSet set;
    set.joints = max_joint + 1;
    set.frames.assign(rows.size(), std::vector<Eigen::Vector3d>(set.joints,
                                                                Eigen::Vector3d::Zero()));
    for (std::size_t f = 0; f < rows.size(); ++f) {
        if (static_cast<int>(rows[f].size()) != set.joints) {
            throw DataError("frame " + std::to_string(f) + " has " +
                            std::to_string(rows[f].size()) + " joints, expected " +
                            std::to_string(set.joints));
        }
        for (const auto& [joint, p] : rows[f]) set.frames[f][joint] = p;
    }
    return set;
}

void save_joints_csv(const JointSet& joints, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open " + path + " for writing");
    write_joints_csv(joints, out);
}

JointSet load_joints_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    return read_joints_csv(in);
}

void write_pose_csv(std::span<const double> times_s, std::span<const Pose> poses,
                    std::ostream& out) {
    if (times_s.size() != poses.size()) throw std::invalid_argument("times/poses size mismatch");
    out << "# t_us,root_qw,root_qx,root_qy,root_qz,tx,ty,tz,then per-joint local qw,qx,qy,qz\n";
    out.precision(17);
    for (std::size_t i = 0; i < poses.size(); ++i) {
        const Pose& p = poses[i];
        out << s_to_us(times_s[i]) << ',' << p.root_rot.w() << ',' << p.root_rot.x() << ','
            << p.root_rot.y() << ',' << p.root_rot.z() << ',' << p.root_t.x() << ','
            << p.root_t.y() << ',' << p.root_t.z();
        for (const UnitQuaternion& q : p.local) {
            out << ',' << q.w() << ',' << q.x() << ',' << q.y() << ',' << q.z();
        }
        out << '\n';
    }
}

PoseTrajectory read_pose_csv(std::istream& in) {
    PoseTrajectory traj;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        std::string field;
        std::vector<double> vals;
        while (std::getline(ss, field, ',')) {
            try {
                vals.push_back(std::stod(field));
            } catch (const std::exception&) {
                throw ParseError("malformed number '" + field + "'", line_no);
            }
        }
        if (vals.size() < 8 || (vals.size() - 8) % 4 != 0) {
            throw ParseError("pose row needs 8 + 4*joints fields", line_no);
        }
        Pose pose;
        pose.root_rot = UnitQuaternion::normalized(vals[1], vals[2], vals[3], vals[4]);
        pose.root_t = {vals[5], vals[6], vals[7]};
        for (std::size_t k = 8; k + 3 < vals.size(); k += 4) {
            pose.local.push_back(
                UnitQuaternion::normalized(vals[k], vals[k + 1], vals[k + 2], vals[k + 3]));
        }
        traj.times_s.push_back(us_to_s(static_cast<std::int64_t>(vals[0])));
        traj.poses.push_back(std::move(pose));
    }
    return traj;
}

void save_pose_csv(std::span<const double> times_s, std::span<const Pose> poses,
                   const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open " + path + " for writing");
    write_pose_csv(times_s, poses, out);
}

PoseTrajectory load_pose_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    return read_pose_csv(in);
}

Camera load_camera_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    try {
        json j = json::parse(in);
        Camera cam;
        cam.fx = j.at("fx").get<double>();
        cam.fy = j.at("fy").get<double>();
        cam.cx = j.at("cx").get<double>();
        cam.cy = j.at("cy").get<double>();
        cam.width = j.at("width").get<int>();
        cam.height = j.at("height").get<int>();
        if (cam.fx <= 0.0 || cam.fy <= 0.0) throw DataError("camera needs fx, fy > 0");
        return cam;
    } catch (const json::exception& e) {
        throw DataError(std::string("camera JSON: ") + e.what());
    }
}

void save_camera_file(const Camera& cam, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open " + path + " for writing");
    json j{{"fx", cam.fx}, {"fy", cam.fy}, {"cx", cam.cx},
           {"cy", cam.cy}, {"width", cam.width}, {"height", cam.height}};
    out << j.dump(2) << '\n';
}

Pose load_pose_json_file(const std::string& path, int joints) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    try {
        json j = json::parse(in);
        Pose pose = Pose::identity(joints);
        if (j.contains("root_rot")) {
            const json& q = j["root_rot"];
            pose.root_rot = UnitQuaternion::normalized(q.at(0).get<double>(), q.at(1).get<double>(),
                                                       q.at(2).get<double>(), q.at(3).get<double>());
        }
        if (j.contains("root_t")) {
            const json& t = j["root_t"];
            pose.root_t = {t.at(0).get<double>(), t.at(1).get<double>(), t.at(2).get<double>()};
        }
        if (j.contains("local")) {
            const json& locals = j["local"];
            if (static_cast<int>(locals.size()) != joints) {
                throw DataError("initial pose has " + std::to_string(locals.size()) +
                                " local rotations, model has " + std::to_string(joints));
            }
            for (int i = 0; i < joints; ++i) {
                const json& q = locals[i];
                pose.local[i] =
                    UnitQuaternion::normalized(q.at(0).get<double>(), q.at(1).get<double>(),
                                               q.at(2).get<double>(), q.at(3).get<double>());
            }
        }
        return pose;
    } catch (const json::exception& e) {
        throw DataError(std::string("pose JSON: ") + e.what());
    }
}

void save_pose_json_file(const Pose& pose, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open " + path + " for writing");
    json j;
    j["root_rot"] = {pose.root_rot.w(), pose.root_rot.x(), pose.root_rot.y(), pose.root_rot.z()};
    j["root_t"] = {pose.root_t.x(), pose.root_t.y(), pose.root_t.z()};
    j["local"] = json::array();
    for (const UnitQuaternion& q : pose.local) {
        j["local"].push_back({q.w(), q.x(), q.y(), q.z()});
    }
    out << j.dump(2) << '\n';
}

std::string file_hash_hex(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path + " for hashing");
    std::uint64_t hash = 0xcbf29ce484222325ull;
    char chunk[4096];
    while (in.read(chunk, sizeof(chunk)) || in.gcount() > 0) {
        for (std::streamsize i = 0; i < in.gcount(); ++i) {
            hash ^= static_cast<unsigned char>(chunk[i]);
            hash *= 0x100000001b3ull;
        }
        if (!in) break;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(hash));
    return buf;
}

void write_manifest(const RunManifest& manifest, const std::string& path) {
    json j;
    j["subcommand"] = manifest.subcommand;
    j["flags"] = manifest.flags;
    j["input_hashes"] = manifest.input_hashes;
    j["version"] = manifest.version;
    j["wall_seconds"] = manifest.wall_seconds;
    j["seed"] = manifest.seed;
    std::ofstream out(path);
    if (!out) throw DataError("cannot open " + path + " for writing");
    out << j.dump(2) << '\n';
}

}  // namespace evm
