// evmotion: event-stream tooling around the continuous-time articulated
// motion field. Subcommands: convert, info, voxelize, synth, fit, compensate,
// eval, slerp-gap.

#include <chrono>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "evm/cmax.hpp"
#include "evm/common.hpp"
#include "evm/encoder.hpp"
#include "evm/event_io.hpp"
#include "evm/fit.hpp"
#include "evm/kinematics.hpp"
#include "evm/losses.hpp"
#include "evm/metrics.hpp"
#include "evm/motion_field.hpp"
#include "evm/serialize.hpp"
#include "evm/synth.hpp"
#include "evm/threading.hpp"
#include "evm/voxel.hpp"

#ifndef EVM_BUILD_HASH
#define EVM_BUILD_HASH "unknown"
#endif

namespace {

using nlohmann::json;

constexpr const char* kSemver = "0.1.0";

std::string version_string() { return std::string(kSemver) + "+" EVM_BUILD_HASH; }

struct ManifestScope {
    evm::RunManifest manifest;
    std::chrono::steady_clock::time_point begin = std::chrono::steady_clock::now();

    explicit ManifestScope(std::string subcommand) {
        manifest.subcommand = std::move(subcommand);
        manifest.version = version_string();
    }
    void flag(const std::string& key, const std::string& value) {
        if (!value.empty()) manifest.flags[key] = value;
    }
    void flag(const std::string& key, double value) {
        manifest.flags[key] = std::to_string(value);
    }
    void flag(const std::string& key, std::int64_t value) {
        manifest.flags[key] = std::to_string(value);
    }
    void input(const std::string& path) {
        if (!path.empty()) manifest.input_hashes[path] = evm::file_hash_hex(path);
    }
    void write(const std::string& next_to_output) {
        manifest.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - begin).count();
        evm::write_manifest(manifest, next_to_output + ".manifest.json");
    }
};

evm::JointSet poses_to_joints(const evm::BodyModel& model, std::span<const evm::Pose> poses) {
    evm::JointSet set;
    set.joints = model.joint_count();
    for (const evm::Pose& pose : poses) {
        set.frames.push_back(evm::forward_kinematics(model, pose).position);
    }
    return set;
}

void write_flow_csv(std::span<const evm::FlowSamples> flows, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw evm::DataError("cannot open " + path + " for writing");
    out << "# window,vertex,fx,fy,visible\n";
    out.precision(17);
    for (std::size_t w = 0; w < flows.size(); ++w) {
        for (std::size_t v = 0; v < flows[w].size(); ++v) {
            out << w << ',' << v << ',' << flows[w].flow[v].x() << ',' << flows[w].flow[v].y()
                << ',' << int(flows[w].visible[v]) << '\n';
        }
    }
}

std::vector<std::vector<Eigen::Vector2d>> read_flow_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw evm::DataError("cannot open " + path);
    std::vector<std::vector<Eigen::Vector2d>> flows;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        std::string field;
        double vals[5];
        for (int i = 0; i < 5; ++i) {
            if (!std::getline(ss, field, ','))
                throw evm::ParseError("expected 5 fields", line_no);
            vals[i] = std::stod(field);
        }
        std::size_t w = static_cast<std::size_t>(vals[0]);
        std::size_t v = static_cast<std::size_t>(vals[1]);
        if (w >= flows.size()) flows.resize(w + 1);
        if (v >= flows[w].size()) flows[w].resize(v + 1, Eigen::Vector2d::Zero());
        flows[w][v] = {vals[2], vals[3]};
    }
    return flows;
}

std::vector<double> parse_int_list_as(const std::string& csv, std::vector<int>* out_int) {
    std::vector<double> vals;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        vals.push_back(std::stod(item));
        if (out_int) out_int->push_back(std::stoi(item));
    }
    return vals;
}

// --- subcommand bodies -----------------------------------------------------

struct ConvertArgs {
    std::string input, output;
    std::uint32_t width = 0, height = 0;
};

int run_convert(const ConvertArgs& a) {
    ManifestScope ms("convert");
    evm::EventStream stream = evm::load_events(a.input, a.width, a.height);
    evm::save_events(stream, a.output);
    ms.flag("input", a.input);
    ms.flag("output", a.output);
    ms.input(a.input);
    ms.write(a.output);
    return 0;
}

struct InfoArgs {
    std::string input;
    std::uint32_t width = 0, height = 0;
};

int run_info(const InfoArgs& a) {
    evm::EventStream stream = evm::load_events(a.input, a.width, a.height);
    json j;
    j["count"] = stream.size();
    j["width"] = stream.width;
    j["height"] = stream.height;
    j["t_span_us"] = stream.span_us();
    j["rate_eps"] = stream.span_s() > 0.0 ? static_cast<double>(stream.size()) / stream.span_s()
                                          : 0.0;
    std::cout << j.dump(2) << '\n';
    return 0;
}

struct VoxelizeArgs {
    std::string events, out, pgm_prefix;
    std::uint32_t width = 0, height = 0;
    int bins = 8;
    std::int64_t t0 = -1, t1 = -1;
};

int run_voxelize(const VoxelizeArgs& a) {
    ManifestScope ms("voxelize");
    evm::EventStream stream = evm::load_events(a.events, a.width, a.height);
    std::int64_t t0 = a.t0 >= 0 ? a.t0 : stream.t_start;
    std::int64_t t1 = a.t1 >= 0 ? a.t1 : stream.t_end + 1;
    evm::VoxelGrid grid = evm::voxelize(stream, a.bins, t0, t1);
    {
        std::ofstream out(a.out, std::ios::binary);
        if (!out) throw evm::DataError("cannot open " + a.out + " for writing");
        evm::write_grid(grid, out);
    }
    if (!a.pgm_prefix.empty()) {
        for (int b = 0; b < grid.bins; ++b) {
            std::span<const double> bin(grid.values.data() +
                                            static_cast<std::size_t>(b) * grid.height * grid.width,
                                        static_cast<std::size_t>(grid.height) * grid.width);
            evm::write_pgm(bin, grid.width, grid.height,
                           a.pgm_prefix + "_bin" + std::to_string(b) + ".pgm");
        }
    }
    ms.flag("events", a.events);
    ms.flag("bins", static_cast<std::int64_t>(a.bins));
    ms.flag("t0", t0);
    ms.flag("t1", t1);
    ms.input(a.events);
    ms.write(a.out);
    return 0;
}

struct SynthArgs {
    std::string model, cam, script, out, gt_poses, gt_joints, gt_flow;
    int flow_windows = 4;
    int samples_per_edge = 32;
    double dt_sim = 1e-4;
    double noise_rate = 0.0;
    std::uint64_t seed = 0;
};

int run_synth(const SynthArgs& a) {
    ManifestScope ms("synth");
    evm::BodyModel model = evm::load_body_model_file(a.model);
    evm::Camera cam = evm::load_camera_file(a.cam);
    evm::MotionScript script = evm::load_script_file(a.script);
    evm::SynthOutput out = evm::generate(model, cam, script, a.samples_per_edge, a.dt_sim);
    if (a.noise_rate > 0.0) {
        out.events = evm::add_noise(out.events, a.noise_rate, a.seed ? a.seed : script.seed);
    }
    evm::save_events(out.events, a.out);
    if (!a.gt_poses.empty()) evm::save_pose_csv(out.gt_times, out.gt_poses, a.gt_poses);
    if (!a.gt_joints.empty()) {
        evm::save_joints_csv(poses_to_joints(model, out.gt_poses), a.gt_joints);
    }
    if (!a.gt_flow.empty()) {
        std::vector<evm::FlowSamples> flows;
        for (int w = 0; w < a.flow_windows; ++w) {
            double t_i = script.duration * w / a.flow_windows;
            double t_j = script.duration * (w + 1) / a.flow_windows;
            flows.push_back(evm::gt_flow(model, cam, script, t_i, t_j));
        }
        write_flow_csv(flows, a.gt_flow);
    }
    ms.flag("model", a.model);
    ms.flag("cam", a.cam);
    ms.flag("script", a.script);
    ms.flag("samples_per_edge", static_cast<std::int64_t>(a.samples_per_edge));
    ms.flag("dt_sim", a.dt_sim);
    ms.flag("noise_rate", a.noise_rate);
    ms.manifest.seed = a.seed ? a.seed : script.seed;
    ms.input(a.model);
    ms.input(a.cam);
    ms.input(a.script);
    ms.write(a.out);
    return 0;
}

struct FitArgs {
    std::string events, model, cam, init, gt_joints, gt_poses, ref_flow, out, report;
    std::string pred_joints;
    int pred_frames = 100;
    std::uint32_t width = 0, height = 0;
    std::string mode = "latent";
    int iters = 500;
    double lr = 1e-2;
    double eps = 1e-8;
    double tol = 1e-6;
    int tol_window = 20;
    double clip_norm = 10.0;
    double lambda_ori = 10.0, lambda_t = 10.0, lambda_3d = 20.0, lambda_2d = 20.0;
    double lambda_flow = 0.1, lambda_c = 0.1, lambda_z = 1e-2;
    int windows = 4;
    int d_local = 32, d_global = 8, freqs = 6;
    std::string hidden = "128,128,128,128", skips = "2", gmp_hidden = "";
    int int_steps = 64;
    double dec_init_scale = 0.5;
    bool use_2d = false;
    std::uint64_t seed = 0;
    int theta_cap = 256;
    double fd_step = 1e-5;
    double radius = 8.0;
};

json report_to_json(const evm::FitReport& report) {
    json j;
    j["iterations"] = report.iterations;
    j["wall_seconds"] = report.wall_seconds;
    j["converged"] = report.converged;
    j["stage_boundaries"] = report.stage_boundaries;
    j["objective"] = report.objective_trace;
    for (const auto& [name, trace] : report.term_traces) j["terms"][name] = trace;
    return j;
}

int run_fit(const FitArgs& a) {
    ManifestScope ms("fit");
    evm::EventStream events = evm::load_events(a.events, a.width, a.height);
    evm::BodyModel model = evm::load_body_model_file(a.model);
    evm::Camera cam = evm::load_camera_file(a.cam);

    // Supervision defines the field clock: synthetic sequences (with ground
    // truth) start at stream time 0; pure event streams anchor at their
    // first event.
    evm::Supervision sup;
    bool have_sup = false;
    evm::Pose first_gt_pose = evm::Pose::identity(model.joint_count());
    bool have_first_gt = false;
    if (!a.gt_poses.empty()) {
        evm::PoseTrajectory traj = evm::load_pose_csv(a.gt_poses);
        sup.times_s = traj.times_s;
        if (!traj.poses.empty()) {
            first_gt_pose = traj.poses.front();
            have_first_gt = true;
        }
        for (const evm::Pose& p : traj.poses) {
            std::vector<evm::UnitQuaternion> frame;
            frame.push_back(p.root_rot);
            for (std::size_t j = 1; j < p.local.size(); ++j) frame.push_back(p.local[j]);
            sup.rotations.push_back(std::move(frame));
            sup.root_translation.push_back(p.root_t);
            sup.joints.push_back(evm::forward_kinematics(model, p).position);
        }
        have_sup = true;
    } else if (!a.gt_joints.empty()) {
        evm::JointSet joints = evm::load_joints_csv(a.gt_joints);
        if (joints.joints != model.joint_count()) {
            throw evm::DataError("ground-truth joint count does not match the model");
        }
        int frames = joints.frame_count();
        double ev_span = evm::us_to_s(events.t_end);
        for (int i = 0; i < frames; ++i) {
            sup.times_s.push_back(frames > 1 ? ev_span * i / (frames - 1) : 0.0);
            sup.joints.push_back(joints.frames[i]);
        }
        have_sup = true;
    }
    sup.use_2d = a.use_2d;

    evm::MotionModel state;
    state.t0_us = have_sup ? 0 : events.t_start;
    double sup_last = 0.0;
    for (double t : sup.times_s) sup_last = std::max(sup_last, t);
    state.span_s =
        std::max({evm::us_to_s(events.t_end - state.t0_us), sup_last, 1e-6});

    evm::DecoderConfig dc;
    dc.joints = model.joint_count();
    dc.freqs = a.freqs;
    dc.d_local = a.d_local;
    dc.d_global = a.d_global;
    dc.hidden.clear();
    parse_int_list_as(a.hidden, &dc.hidden);
    dc.skips.clear();
    parse_int_list_as(a.skips, &dc.skips);
    std::mt19937_64 rng(a.seed);
    state.decoder = a.dec_init_scale > 0.0
                        ? evm::MotionDecoder::random(dc, state.span_s, rng, a.dec_init_scale)
                        : evm::MotionDecoder(dc, state.span_s);

    evm::MlpConfig gc;
    gc.input_dim = evm::gmp_feature_dim(model.joint_count());
    gc.output_dim = 3;
    parse_int_list_as(a.gmp_hidden, &gc.hidden);
    state.gmp = evm::Mlp(gc);

    state.z = evm::LatentCode::zeros(a.d_local, a.d_global);
    if (!a.init.empty()) {
        state.init_pose = evm::load_pose_json_file(a.init, model.joint_count());
    } else if (have_first_gt) {
        state.init_pose = first_gt_pose;  // the sequence's known starting pose
    } else {
        state.init_pose = evm::Pose::identity(model.joint_count());
    }

    std::vector<std::vector<Eigen::Vector2d>> ref_flows;
    bool have_flow = false;
    if (!a.ref_flow.empty()) {
        ref_flows = read_flow_csv(a.ref_flow);
        have_flow = true;
    }

    evm::FitConfig cfg;
    cfg.weights = {a.lambda_ori, a.lambda_t, a.lambda_3d, a.lambda_2d,
                   a.lambda_flow, a.lambda_c, a.lambda_z};
    cfg.opt.lr = a.lr;
    cfg.opt.eps = a.eps;
    cfg.opt.tol = a.tol;
    cfg.opt.tol_window = a.tol_window;
    cfg.opt.clip_norm = a.clip_norm;
    cfg.opt.max_iters = a.iters;
    cfg.contrast_windows = a.windows;
    cfg.theta_cap = a.theta_cap;
    cfg.contrast_fd_step = a.fd_step;
    cfg.flow_radius = a.radius;
    cfg.field.integration_steps = a.int_steps;
    cfg.seed = a.seed;
    if (a.mode == "latent") cfg.mode = evm::FitMode::LatentOnly;
    else if (a.mode == "latent-gmp") cfg.mode = evm::FitMode::LatentGmp;
    else if (a.mode == "decoder") cfg.mode = evm::FitMode::DecoderPretrain;
    else throw std::invalid_argument("unknown fit mode '" + a.mode + "'");

    evm::FitReport report = evm::fit_latent(events, model, cam, have_sup ? &sup : nullptr, state,
                                            cfg, have_flow ? &ref_flows : nullptr);

    evm::save_motion_model(state, a.out);
    if (!a.pred_joints.empty()) {
        evm::FieldEvaluator field(model, state, cfg.field);
        std::vector<double> ts(std::max(2, a.pred_frames));
        for (std::size_t i = 0; i < ts.size(); ++i) {
            ts[i] = state.span_s * static_cast<double>(i) / (ts.size() - 1);
        }
        std::vector<evm::Pose> poses = field.sample(ts);
        evm::JointSet pred;
        pred.joints = model.joint_count();
        for (const evm::Pose& p : poses) {
            pred.frames.push_back(evm::forward_kinematics(model, p).position);
        }
        evm::save_joints_csv(pred, a.pred_joints);
    }
    if (!a.report.empty()) {
        std::ofstream out(a.report);
        if (!out) throw evm::DataError("cannot open " + a.report + " for writing");
        out << report_to_json(report).dump(2) << '\n';
    }
    ms.flag("mode", a.mode);
    ms.flag("iters", static_cast<std::int64_t>(a.iters));
    ms.flag("lr", a.lr);
    ms.manifest.seed = a.seed;
    ms.input(a.events);
    ms.input(a.model);
    ms.input(a.cam);
    if (!a.init.empty()) ms.input(a.init);
    if (!a.gt_joints.empty()) ms.input(a.gt_joints);
    if (!a.gt_poses.empty()) ms.input(a.gt_poses);
    if (!a.ref_flow.empty()) ms.input(a.ref_flow);
    ms.write(a.out);
    return 0;
}

struct CompensateArgs {
    std::string events, model, cam, state, out_prefix;
    std::uint32_t width = 0, height = 0;
    std::int64_t t0 = -1, t1 = -1;  // relative microseconds
};

int run_compensate(const CompensateArgs& a) {
    ManifestScope ms("compensate");
    evm::EventStream events = evm::load_events(a.events, a.width, a.height);
    evm::BodyModel model = evm::load_body_model_file(a.model);
    evm::Camera cam = evm::load_camera_file(a.cam);
    evm::MotionModel state = evm::load_motion_model(a.state);

    evm::EventStream rel = events;
    for (evm::Event& e : rel.events) e.t_us -= state.t0_us;
    rel.refresh_span();
    std::int64_t span_us = evm::s_to_us(state.span_s);
    std::int64_t t0 = a.t0 >= 0 ? a.t0 : 0;
    std::int64_t t1 = a.t1 >= 0 ? a.t1 : span_us;
    evm::EventStream win = evm::window(rel, t0, t1 + (t1 == span_us ? 1 : 0));
    if (win.events.empty()) throw evm::DataError("no events in the requested window");

    evm::FieldEvaluator field(model, state);
    evm::FlowSamples flow =
        evm::vertex_flow(model, cam, field, evm::us_to_s(t0), evm::us_to_s(t1));
    if (std::find(flow.visible.begin(), flow.visible.end(), 1) == flow.visible.end()) {
        std::cerr << "warning: no visible vertices; displacements are all zero\n";
    }
    std::vector<Eigen::Vector2d> disp = evm::flow_to_events(flow, win, t0, t1, t1);
    std::vector<Eigen::Vector2d> zero(win.size(), Eigen::Vector2d::Zero());

    evm::Iwe before = evm::make_iwe(win, zero, t1);
    evm::Iwe after = evm::make_iwe(win, disp, t1);
    evm::VarianceStats var_before = evm::iwe_variance(before);
    evm::VarianceStats var_after = evm::iwe_variance(after);

    auto write_sum = [&](const evm::Iwe& iwe, const std::string& path) {
        std::vector<double> sum(iwe.image.pos.size());
        for (std::size_t i = 0; i < sum.size(); ++i) {
            sum[i] = iwe.image.pos[i] + iwe.image.neg[i];
        }
        evm::write_pgm(sum, iwe.image.width, iwe.image.height, path);
    };
    write_sum(before, a.out_prefix + "_before.pgm");
    write_sum(after, a.out_prefix + "_after.pgm");

    json j;
    j["var_before"] = var_before.objective;
    j["var_after"] = var_after.objective;
    std::string json_path = a.out_prefix + ".json";
    {
        std::ofstream out(json_path);
        if (!out) throw evm::DataError("cannot open " + json_path + " for writing");
        out << j.dump(2) << '\n';
    }
    std::cout << j.dump(2) << '\n';
    ms.flag("t0", t0);
    ms.flag("t1", t1);
    ms.input(a.events);
    ms.input(a.model);
    ms.input(a.cam);
    ms.input(a.state);
    ms.write(json_path);
    return 0;
}

struct EvalArgs {
    std::string pred, gt, model, out;
    double head_len = 0.0;
};

int run_eval(const EvalArgs& a) {
    evm::JointSet pred = evm::load_joints_csv(a.pred);
    evm::JointSet gt = evm::load_joints_csv(a.gt);
    double head_len = a.head_len;
    if (head_len <= 0.0 && !a.model.empty()) {
        head_len = evm::load_body_model_file(a.model).head_segment_length();
    }
    if (head_len <= 0.0) {
        throw std::invalid_argument("pckh needs --head-len or a model with head/neck joints");
    }
    evm::MetricResult pa = evm::pa_mpjpe(pred, gt);
    json j;
    j["mpjpe"] = evm::mpjpe(pred, gt);
    j["pa_mpjpe"] = pa.value_mm;
    j["pel_mpjpe"] = evm::pel_mpjpe(pred, gt);
    j["pckh"] = evm::pckh(pred, gt, head_len);
    if (pa.fallback_frames > 0) j["pa_fallback_frames"] = pa.fallback_frames;
    std::cout << j.dump(2) << '\n';
    if (!a.out.empty()) {
        ManifestScope ms("eval");
        std::ofstream out(a.out);
        if (!out) throw evm::DataError("cannot open " + a.out + " for writing");
        out << j.dump(2) << '\n';
        ms.flag("pred", a.pred);
        ms.flag("gt", a.gt);
        ms.input(a.pred);
        ms.input(a.gt);
        ms.write(a.out);
    }
    return 0;
}

struct SlerpGapArgs {
    std::string poses, model, out_csv, out_json;
    int stride = 8;
};

int run_slerp_gap(const SlerpGapArgs& a) {
    ManifestScope ms("slerp-gap");
    evm::PoseTrajectory traj = evm::load_pose_csv(a.poses);
    evm::BodyModel model = evm::load_body_model_file(a.model);
    evm::SlerpGapResult gap = evm::slerp_gap(model, traj.times_s, traj.poses, a.stride);

    if (!a.out_csv.empty()) {
        std::ofstream out(a.out_csv);
        if (!out) throw evm::DataError("cannot open " + a.out_csv + " for writing");
        out << "# t_us,gap_mm\n";
        out.precision(17);
        for (std::size_t i = 0; i < gap.gap_m.size(); ++i) {
            out << evm::s_to_us(traj.times_s[i]) << ',' << 1000.0 * gap.gap_m[i] << '\n';
        }
    }
    json j;
    j["mean_mm"] = 1000.0 * gap.mean_m;
    j["max_mm"] = 1000.0 * gap.max_m;
    j["stride"] = a.stride;
    std::cout << j.dump(2) << '\n';
    if (!a.out_json.empty()) {
        std::ofstream out(a.out_json);
        if (!out) throw evm::DataError("cannot open " + a.out_json + " for writing");
        out << j.dump(2) << '\n';
        ms.flag("stride", static_cast<std::int64_t>(a.stride));
        ms.input(a.poses);
        ms.input(a.model);
        ms.write(a.out_json);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"event-based continuous-time articulated motion estimation"};
    app.set_version_flag("--version", version_string());
    app.require_subcommand(1);

    int threads = 0;
    app.add_option("--threads", threads, "cap on worker threads (0 = hardware)");

    ConvertArgs convert_args;
    auto* convert = app.add_subcommand("convert", "convert events between text and binary");
    convert->add_option("input", convert_args.input)->required();
    convert->add_option("output", convert_args.output)->required();
    convert->add_option("--width", convert_args.width, "resolution for text input");
    convert->add_option("--height", convert_args.height, "resolution for text input");

    InfoArgs info_args;
    auto* info = app.add_subcommand("info", "print stream statistics as JSON");
    info->add_option("input", info_args.input)->required();
    info->add_option("--width", info_args.width);
    info->add_option("--height", info_args.height);

    VoxelizeArgs vox_args;
    auto* vox = app.add_subcommand("voxelize", "build a time-binned event volume");
    vox->add_option("--events", vox_args.events)->required();
    vox->add_option("--width", vox_args.width);
    vox->add_option("--height", vox_args.height);
    vox->add_option("--bins", vox_args.bins);
    vox->add_option("--t0", vox_args.t0, "window start (stream microseconds)");
    vox->add_option("--t1", vox_args.t1, "window end (stream microseconds)");
    vox->add_option("--out", vox_args.out)->required();
    vox->add_option("--pgm", vox_args.pgm_prefix, "per-bin preview prefix");

    SynthArgs synth_args;
    auto* synth = app.add_subcommand("synth", "generate events from a motion script");
    synth->add_option("--model", synth_args.model)->required();
    synth->add_option("--cam", synth_args.cam)->required();
    synth->add_option("--script", synth_args.script)->required();
    synth->add_option("--out", synth_args.out)->required();
    synth->add_option("--gt-poses", synth_args.gt_poses);
    synth->add_option("--gt-joints", synth_args.gt_joints);
    synth->add_option("--gt-flow", synth_args.gt_flow);
    synth->add_option("--flow-windows", synth_args.flow_windows);
    synth->add_option("--samples-per-edge", synth_args.samples_per_edge);
    synth->add_option("--dt-sim", synth_args.dt_sim);
    synth->add_option("--noise-rate", synth_args.noise_rate, "background events / (px s)");
    synth->add_option("--seed", synth_args.seed);

    FitArgs fit_args;
    auto* fit = app.add_subcommand("fit", "optimize a motion field against events");
    fit->add_option("--events", fit_args.events)->required();
    fit->add_option("--model", fit_args.model)->required();
    fit->add_option("--cam", fit_args.cam)->required();
    fit->add_option("--init", fit_args.init, "initial pose JSON");
    fit->add_option("--gt", fit_args.gt_joints, "3D joint supervision CSV");
    fit->add_option("--gt-poses", fit_args.gt_poses, "pose trajectory supervision CSV");
    fit->add_option("--ref-flow", fit_args.ref_flow, "reference vertex flow CSV");
    fit->add_option("--out", fit_args.out)->required();
    fit->add_option("--report", fit_args.report);
    fit->add_option("--pred-joints", fit_args.pred_joints,
                    "write decoded joints at uniform times after the fit");
    fit->add_option("--pred-frames", fit_args.pred_frames);
    fit->add_option("--width", fit_args.width);
    fit->add_option("--height", fit_args.height);
    fit->add_option("--mode", fit_args.mode, "latent | latent-gmp | decoder");
    fit->add_option("--iters", fit_args.iters);
    fit->add_option("--lr", fit_args.lr);
    fit->add_option("--eps", fit_args.eps, "Adam epsilon");
    fit->add_option("--tol", fit_args.tol, "relative-decrease stop (<= 0 disables)");
    fit->add_option("--tol-window", fit_args.tol_window);
    fit->add_option("--clip", fit_args.clip_norm, "gradient norm cap");
    fit->add_option("--lambda-ori", fit_args.lambda_ori);
    fit->add_option("--lambda-t", fit_args.lambda_t);
    fit->add_option("--lambda-3d", fit_args.lambda_3d);
    fit->add_option("--lambda-2d", fit_args.lambda_2d);
    fit->add_option("--lambda-flow", fit_args.lambda_flow);
    fit->add_option("--lambda-c", fit_args.lambda_c);
    fit->add_option("--lambda-z", fit_args.lambda_z);
    fit->add_option("--windows", fit_args.windows);
    fit->add_option("--d-local", fit_args.d_local);
    fit->add_option("--d-global", fit_args.d_global);
    fit->add_option("--freqs", fit_args.freqs);
    fit->add_option("--hidden", fit_args.hidden, "decoder hidden widths, comma separated");
    fit->add_option("--skips", fit_args.skips, "decoder skip layers, comma separated");
    fit->add_option("--gmp-hidden", fit_args.gmp_hidden);
    fit->add_option("--int-steps", fit_args.int_steps);
    fit->add_option("--dec-init-scale", fit_args.dec_init_scale, "0 for a zero decoder");
    fit->add_flag("--use-2d", fit_args.use_2d);
    fit->add_option("--seed", fit_args.seed);
    fit->add_option("--theta-cap", fit_args.theta_cap);
    fit->add_option("--fd-step", fit_args.fd_step, "finite-difference step for flow Jacobians");
    fit->add_option("--radius", fit_args.radius, "event-to-anchor assignment radius (px)");

    CompensateArgs comp_args;
    auto* comp = app.add_subcommand("compensate", "motion-compensate events with a fitted field");
    comp->add_option("--events", comp_args.events)->required();
    comp->add_option("--model", comp_args.model)->required();
    comp->add_option("--cam", comp_args.cam)->required();
    comp->add_option("--state", comp_args.state)->required();
    comp->add_option("--t0", comp_args.t0, "window start (relative microseconds)");
    comp->add_option("--t1", comp_args.t1, "window end (relative microseconds)");
    comp->add_option("--out-prefix", comp_args.out_prefix)->required();
    comp->add_option("--width", comp_args.width);
    comp->add_option("--height", comp_args.height);

    EvalArgs eval_args;
    auto* eval = app.add_subcommand("eval", "compare predicted and ground-truth joints");
    eval->add_option("--pred", eval_args.pred)->required();
    eval->add_option("--gt", eval_args.gt)->required();
    eval->add_option("--model", eval_args.model, "model with head/neck joints for PCKh");
    eval->add_option("--head-len", eval_args.head_len, "head segment length in meters");
    eval->add_option("--out", eval_args.out);

    SlerpGapArgs gap_args;
    auto* gap = app.add_subcommand("slerp-gap", "interpolation gap of strided keyframes");
    gap->add_option("--poses", gap_args.poses)->required();
    gap->add_option("--model", gap_args.model)->required();
    gap->add_option("--stride", gap_args.stride);
    gap->add_option("--out-csv", gap_args.out_csv);
    gap->add_option("--out-json", gap_args.out_json);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help / --version
        app.exit(e);
        std::cerr << "error[usage]: " << e.what() << '\n';
        return 1;
    }

    if (threads > 0) evm::set_max_threads(threads);

    try {
        if (convert->parsed()) return run_convert(convert_args);
        if (info->parsed()) return run_info(info_args);
        if (vox->parsed()) return run_voxelize(vox_args);
        if (synth->parsed()) return run_synth(synth_args);
        if (fit->parsed()) return run_fit(fit_args);
        if (comp->parsed()) return run_compensate(comp_args);
        if (eval->parsed()) return run_eval(eval_args);
        if (gap->parsed()) return run_slerp_gap(gap_args);
    } catch (const std::invalid_argument& e) {
        std::cerr << "error[usage]: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error[data]: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
