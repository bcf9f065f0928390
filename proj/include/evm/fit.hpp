#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "evm/cmax.hpp"
#include "evm/event_io.hpp"
#include "evm/kinematics.hpp"
#include "evm/losses.hpp"
#include "evm/motion_field.hpp"

namespace evm {

struct OptimConfig {
    double lr = 1e-2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int max_iters = 500;
    double tol = 1e-6;     // relative objective decrease ...
    int tol_window = 20;   // ... over this many iterations
    double clip_norm = 10.0;
};

// First/second-moment stochastic gradient method with bias correction.
// Entries with active[i] == 0 are skipped entirely (moments untouched,
// parameter bit-identical).
class AdamOptimizer {
public:
    AdamOptimizer(int n, const OptimConfig& cfg);
    void step(Eigen::VectorXd& params, const Eigen::VectorXd& grad,
              const std::vector<char>* active = nullptr);

private:
    OptimConfig cfg_;
    Eigen::VectorXd m_, v_;
    long t_ = 0;
};

// Which parameter groups a fit optimizes.
enum class FitMode { LatentOnly, LatentGmp, DecoderPretrain };

struct FitConfig {
    LossWeights weights;
    OptimConfig opt;
    FitMode mode = FitMode::LatentOnly;
    int contrast_windows = 4;
    int theta_cap = 256;       // finite-difference parameter budget
    double contrast_fd_step = 1e-5;
    double flow_radius = 8.0;
    FieldConfig field;
    std::uint64_t seed = 0;
};

// Ground-truth samples driving the supervised terms. Empty members disable
// the matching loss. rotations is [time][joint] with entry 0 the root
// rotation; root translation defaults to joints[.][0] when absent.
struct Supervision {
    std::vector<double> times_s;
    std::vector<std::vector<Eigen::Vector3d>> joints;
    std::vector<std::vector<UnitQuaternion>> rotations;
    std::vector<Eigen::Vector3d> root_translation;
    bool use_2d = false;  // compare projected predictions against projected GT
};

struct FitReport {
    std::vector<double> objective_trace;
    std::map<std::string, std::vector<double>> term_traces;
    int iterations = 0;
    double wall_seconds = 0.0;
    bool converged = false;
    std::vector<int> stage_boundaries;
};

// One stage of the training schedule: an iteration budget plus the parameter
// groups left unfrozen.
struct FitStage {
    int iters = 0;
    bool optimize_z = true;
    bool optimize_gmp = false;
    bool optimize_decoder = false;

    static FitStage from_mode(FitMode mode, int iters);
};

// Optimizes the motion-model state in place against the weighted objective.
// ref_flows, when present, supplies per-window per-vertex reference flow for
// the flow loss. Throws on divergence (non-finite objective) and when neither
// events nor supervision provide any signal.
FitReport fit_latent(const EventStream& events, const BodyModel& model, const Camera& cam,
                     const Supervision* supervision, MotionModel& state, const FitConfig& cfg,
                     const std::vector<std::vector<Eigen::Vector2d>>* ref_flows = nullptr);

// fit_latent with an explicit freeze schedule; stage boundaries are recorded
// in the report.
FitReport staged_fit(const EventStream& events, const BodyModel& model, const Camera& cam,
                     const Supervision* supervision, MotionModel& state, const FitConfig& cfg,
                     std::span<const FitStage> stages,
                     const std::vector<std::vector<Eigen::Vector2d>>* ref_flows = nullptr);

// A rotation trajectory used for decoder pretraining ([time][joint], entry 0
// the root).
struct RotationTrajectory {
    std::vector<double> times_s;
    std::vector<std::vector<UnitQuaternion>> quats;
};

// Auto-decoder pretraining: jointly optimizes the provided decoder's weights
// and one latent code per trajectory by minimizing the orientation loss at
// randomly drawn (trajectory, iteration) pairings. The decoder is updated in
// place (zero iterations leave it untouched).
struct PretrainResult {
    std::vector<LatentCode> codes;
    FitReport report;
};
PretrainResult pretrain_decoder(const std::vector<RotationTrajectory>& family,
                                MotionDecoder& decoder, const OptimConfig& opt,
                                std::uint64_t seed);

}  // namespace evm
