#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "phasekit/periodic.hpp"
#include "phasekit/skeleton.hpp"
#include "phasekit/tensor.hpp"

namespace phasekit::dm {

// Unbounded per-channel coordinates for diffusion: Cartesian phase/amplitude,
// probit-transformed frequency, raw offset.
struct DiffParams {
    std::vector<double> a_cos, a_sin, f_probit, b;
    double f_max = 0.0;
    double t_sec = 1.0;

    int channels() const { return static_cast<int>(a_cos.size()); }
    std::vector<double> flatten() const;  // C*4, row-major (channel, component)
    static DiffParams from_flat(const std::vector<double>& flat, double f_max, double t_sec);
};

// a_cos = a cos(2 pi s), a_sin = a sin(2 pi s), f_probit = sqrt(2) erfinv(2 f/f_max - 1).
// Frequencies at the exact bounds are nudged inward by 1e-6 * f_max first.
DiffParams phase_to_diff(const per::PeriodicParams& params);
// Total inverse: a = sqrt(cos^2 + sin^2 + 1e-12), s = atan2/2pi mod 1,
// f = f_max * (1 + erf(p/sqrt 2)) / 2. Any real input yields valid params.
per::PeriodicParams diff_to_phase(const DiffParams& dp);

// The frequency bound tied to the latent width rather than its sampling rate.
inline double latent_width_f_max(int d_latent) { return 0.5 * d_latent / (2.0 * 3.14159265358979323846); }

struct NoiseSchedule {
    int steps = 0;
    double beta_min = 0.0, beta_max = 0.0;
    // Index 0 is a sentinel: beta[0] = 0, alpha_bar[0] = 1.
    std::vector<double> beta, alpha, alpha_bar;
};

NoiseSchedule make_schedule(int steps = 1000, double beta_min = 1e-4, double beta_max = 0.02);

std::vector<double> q_sample(const std::vector<double>& z0, int t, const std::vector<double>& eps,
                             const NoiseSchedule& s);
std::vector<double> v_target(const std::vector<double>& z0, const std::vector<double>& eps, int t,
                             const NoiseSchedule& s);
// Returns (z0_hat, eps_hat).
std::pair<std::vector<double>, std::vector<double>> recover(const std::vector<double>& z_t,
                                                            const std::vector<double>& v, int t,
                                                            const NoiseSchedule& s);
double min_snr_weight(int t, const NoiseSchedule& s, double gamma = 5.0);

// Per-component (a_cos, a_sin, f_probit, b) statistics over a training set.
struct Standardizer {
    std::array<double, 4> mean = {0, 0, 0, 0};
    std::array<double, 4> stddev = {1, 1, 1, 1};

    std::vector<double> apply(const std::vector<double>& flat) const;
    std::vector<double> invert(const std::vector<double>& flat) const;
};

struct DenoiserConfig {
    int channels = 16;  // latent channel count C (token count)
    int d_embed = 128;
    int blocks = 4;
    int heads = 4;
    int num_classes = 2;  // real classes; one extra null embedding is added

    void validate() const;
    std::string to_json() const;
    static DenoiserConfig from_json(const std::string& text);
};

struct Condition {
    int label = -1;               // -1 selects the null class
    std::vector<double> context;  // standardized C*4 partial-motion latent; empty = none
};

// Transformer denoiser with adaptive layer norm conditioning; predicts v.
class Denoiser {
public:
    Denoiser(DenoiserConfig cfg, std::uint64_t seed);

    const DenoiserConfig& config() const { return cfg_; }
    std::vector<ag::Param>& params() { return params_; }
    const std::vector<ag::Param>& params() const { return params_; }
    std::int64_t param_count() const;
    void load_params(const std::vector<std::pair<std::string, ag::Tensor>>& named);

    // z: standardized (C, 4). t in 1..schedule steps (scaled internally by T).
    ag::Tensor forward(const ag::Tensor& z, int t, int total_steps, const Condition& cond,
                       ag::Tape* tape) const;

private:
    DenoiserConfig cfg_;
    std::vector<ag::Param> params_;
    std::unordered_map<std::string, int> index_;
    std::vector<double> pos_;  // (C, d_embed) fixed sinusoidal channel positions

    ag::Tensor reg(const std::string& name, ag::Tensor t);
    void init_weights(std::uint64_t seed);
};

struct LatentItem {
    DiffParams params;
    int label = 0;
    std::vector<double> context_flat;  // unstandardized C*4; empty = none
};

Standardizer fit_standardizer(const std::vector<LatentItem>& items);

struct DiffTrainConfig {
    int steps = 3000;    // total steps including any already done
    int start_step = 0;  // resume point
    int stop_step = -1;  // pause before `steps`; the lr horizon stays `steps`
    int batch = 8;
    double lr = 1e-4;
    double gamma = 5.0;           // min-SNR cap
    double class_dropout = 0.1;   // probability of training on the null class
    double context_dropout = 0.5;
    std::uint64_t seed = 0;
    int log_every = 10;
    ag::AdamWConfig opt;
};

struct DiffTrainResult {
    std::string log_csv;  // step, lr, loss
    bool aborted = false;
    int steps_done = 0;
    double first_loss = 0.0;
    double last_loss = 0.0;
};

DiffTrainResult train_diffusion(Denoiser& model, const std::vector<LatentItem>& items,
                                const Standardizer& stats, const NoiseSchedule& schedule,
                                const DiffTrainConfig& cfg, ag::AdamW& opt);

struct SampleConfig {
    int steps = 900;       // S
    double eta = 1.0;
    double guidance = 1.0;  // classifier-free scale; 1 = conditional only
};

// DDIM/DDPM sampling on the grid floor(s*T/S). `clamp_warnings`, when given,
// counts steps where 1 - alpha_bar_prev - sigma^2 went negative.
DiffParams ddim_sample(const Denoiser& model, const Condition& cond, const Standardizer& stats,
                       const NoiseSchedule& schedule, const SampleConfig& cfg, std::uint64_t seed,
                       double f_max, double t_sec, int* clamp_warnings = nullptr);

// Keyframe conditioning convention: rotations and root positions of frames
// outside `keep` are zeroed before encoding with the frozen autoencoder.
MotionClip mask_keyframes(const MotionClip& clip, const std::vector<int>& keep);

}  // namespace phasekit::dm
