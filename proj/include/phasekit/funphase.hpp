#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "phasekit/encodings.hpp"
#include "phasekit/kinematics.hpp"
#include "phasekit/periodic.hpp"
#include "phasekit/skeleton.hpp"
#include "phasekit/tensor.hpp"

namespace phasekit::fp {

struct PathwayConfig {
    int latents = 16;  // latent curves produced by the pathway
    int embed = 64;    // frame embedding width
    int blocks = 2;    // attention blocks over the frame sequence
};

struct ModelConfig {
    int channels = 16;   // C periodic channels
    int d_latent = 32;   // latent curve sample count N (even, >= 4)
    int heads = 4;
    int dec_blocks = 2;  // decoder self-attention blocks per pathway
    int conv_kernel = 5;
    PathwayConfig joints{16, 64, 2};
    PathwayConfig root{8, 32, 2};
    int time_freqs = 8;
    double time_f_min = 0.5;
    double time_f_max = 64.0;
    enc::GraphPE graph;  // laplacian dim 4 by default
    double w_rec = 0.5;
    double w_phys = 0.5;
    double w_foot = 0.01;
    double t_sec = 1.0;  // window duration in seconds

    void validate() const;
    // Nyquist of the latent sampling; the frequency bound carried by encoded params.
    double f_max() const { return static_cast<double>(d_latent) / (2.0 * t_sec); }
    std::string to_json() const;
    static ModelConfig from_json(const std::string& text);
};

// Precomputed per-clip training targets. Root positions are window-relative
// (frame 0 at the origin); contacts come from adaptive thresholds on the
// ground-truth foot trajectories.
struct ClipTargets {
    std::vector<double> rot9;        // T*J*9 row-major ground-truth matrices
    kin::JointPositions positions;   // FK on window-relative root
    std::vector<geo::Vec3> root_rel;
    kin::ContactMask contacts;
    std::vector<int> foot_joints;
};

ClipTargets make_targets(const MotionClip& clip, const std::vector<int>& foot_joints);

struct LossComponents {
    double rot = 0.0, root = 0.0, fk = 0.0, foot = 0.0, total = 0.0;
};

class FunPhase {
public:
    FunPhase(ModelConfig cfg, const Skeleton& skeleton, std::uint64_t seed);

    const ModelConfig& config() const { return cfg_; }
    const Skeleton& skeleton() const { return skel_; }
    std::vector<ag::Param>& params() { return params_; }
    const std::vector<ag::Param>& params() const { return params_; }
    std::int64_t param_count() const;
    void load_params(const std::vector<std::pair<std::string, ag::Tensor>>& named);

    // Per-frame feature rows for one clip: joint rows (T, J*6) of 6d
    // rotations, root rows (T, 3) window-relative with absolute height.
    // Absolute time never enters the encoder, so a frozen clip yields a
    // constant latent curve and near-zero spectral amplitude by construction.
    struct Tokens {
        ag::Tensor joints;
        ag::Tensor root;
        std::vector<double> times;
    };
    Tokens build_tokens(const MotionClip& clip, ag::Tape* tape) const;

    struct Encoded {
        ag::Tensor s, a, f, b;  // (C, 1) each
        ag::Tensor z;           // (C, d_latent) latent curve
    };
    Encoded encode_tokens(const Tokens& tokens, ag::Tape* tape) const;
    Encoded encode_t(const MotionClip& clip, ag::Tape* tape) const;
    per::PeriodicParams encode(const MotionClip& clip) const;

    struct Decoded {
        ag::Tensor rot6d;  // (times*joints, 6), time-major
        ag::Tensor root;   // (times, 3), window-relative
    };
    Decoded decode_t(const Encoded& enc, const std::vector<double>& times,
                     const std::vector<int>& joints, ag::Tape* tape) const;
    Decoded decode_params(const per::PeriodicParams& params, const std::vector<double>& times,
                          const std::vector<int>& joints) const;
    // Assembles a clip at the given frame rate; joints outside `joints` stay at
    // the rest pose; root positions re-anchor at `anchor`.
    MotionClip decode_clip(const per::PeriodicParams& params, int frames, double frame_rate,
                           const std::vector<int>& joints, const geo::Vec3& anchor) const;

    struct LossTensors {
        ag::Tensor rot, root, fk, foot, total;
    };
    // Differentiable loss over the selected frame indices; `loss_joints`
    // restricts the rotation/FK means (FK itself always uses every joint).
    LossTensors loss_t(const Decoded& dec, const ClipTargets& targets,
                       const std::vector<double>& times, const std::vector<int>& frame_idx,
                       const std::vector<int>& loss_joints, ag::Tape* tape) const;

    ag::Tensor circular_bottleneck(const ag::Tensor& x, ag::Tape* tape) const;  // conv only, for tests

private:
    ModelConfig cfg_;
    Skeleton skel_;
    enc::TemporalPE time_pe_;
    std::vector<std::vector<double>> graph_pe_;  // J x G
    std::vector<ag::Param> params_;
    std::unordered_map<std::string, int> index_;

    ag::Tensor reg(const std::string& name, ag::Tensor t);
    void init_weights(std::uint64_t seed);
};

// Plain-number loss over a full reconstruction; matches loss_t's definitions.
LossComponents loss_components(const ClipTargets& targets, const Skeleton& skeleton,
                               const std::vector<geo::Rot6d>& pred_rots,
                               const std::vector<geo::Vec3>& pred_root_rel,
                               const std::vector<double>& times, const ModelConfig& cfg);

struct TrainConfig {
    int steps = 2000;      // total steps including any already done
    int start_step = 0;    // resume point; per-step randomness derives from (seed, step)
    int stop_step = -1;    // pause before `steps`; the lr horizon stays `steps`
    int batch = 4;
    double lr = 1e-4;
    double warmup_frac = 0.05;
    double time_keep = 0.75;   // fraction of frames queried per step
    double joint_keep = 0.75;  // fraction of joints entering the rot/FK means
    std::uint64_t seed = 0;
    int log_every = 10;
    ag::AdamWConfig opt;
};

struct TrainResult {
    std::string log_csv;  // step, lr, l_rot, l_root, l_fk, l_foot, total
    bool aborted = false;
    int steps_done = 0;
    double first_loss = 0.0;
    double last_loss = 0.0;
};

// Cosine learning rate with linear warmup over warmup_frac of total steps.
double lr_at(int step, int total_steps, double base_lr, double warmup_frac);

TrainResult train(FunPhase& model, const std::vector<MotionClip>& clips,
                  const std::vector<ClipTargets>& targets, const TrainConfig& cfg, ag::AdamW& opt);

// Stride-1 sliding-window encoding of a clip; errors when the clip is shorter
// than one window.
std::vector<per::PeriodicParams> phase_trajectory(const FunPhase& model, const MotionClip& clip,
                                                  int window);

}  // namespace phasekit::fp
