#include "phasekit/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

namespace phasekit::dm {

namespace {

constexpr double kTau = 2.0 * 3.14159265358979323846;
constexpr double kSqrt2 = 1.4142135623730950488;

struct P {
    const std::vector<ag::Param>& params;
    const std::unordered_map<std::string, int>& index;
    ag::Tape* tape;

    ag::Tensor operator()(const std::string& name) const {
        auto it = index.find(name);
        if (it == index.end()) throw Error("denoiser: unknown weight '" + name + "'");
        return params[static_cast<std::size_t>(it->second)].value.with_tape(tape);
    }
};

ag::Tensor lin(const P& p, const std::string& prefix, const ag::Tensor& x) {
    return ag::linear(x, p(prefix + ".w"), p(prefix + ".b"));
}

ag::Tensor mha(const P& p, const std::string& prefix, const ag::Tensor& x, int heads) {
    const std::int64_t d = p(prefix + ".q.w").dim(1);
    const std::int64_t dh = d / heads;
    ag::Tensor qq = lin(p, prefix + ".q", x);
    ag::Tensor kk = lin(p, prefix + ".k", x);
    ag::Tensor vv = lin(p, prefix + ".v", x);
    std::vector<ag::Tensor> outs;
    for (int h = 0; h < heads; ++h) {
        std::vector<std::int64_t> cols(static_cast<std::size_t>(dh));
        for (std::int64_t i = 0; i < dh; ++i) cols[static_cast<std::size_t>(i)] = h * dh + i;
        ag::Tensor qh = ag::select_cols(qq, cols);
        ag::Tensor kh = ag::select_cols(kk, cols);
        ag::Tensor vh = ag::select_cols(vv, cols);
        ag::Tensor att = ag::softmax(
            ag::scale(ag::matmul(qh, ag::transpose(kh)), 1.0 / std::sqrt(static_cast<double>(dh))));
        outs.push_back(ag::matmul(att, vh));
    }
    return lin(p, prefix + ".o", ag::concat(outs, 1));
}

// gamma(c) * LayerNorm(h) + beta(c); gamma/beta are (1, d) rows.
ag::Tensor adaln(const ag::Tensor& h, const ag::Tensor& gamma, const ag::Tensor& beta) {
    return ag::add(ag::mul(ag::layer_norm(h), gamma), beta);
}

std::vector<double> sinusoid(double value, int dim) {
    std::vector<double> out(static_cast<std::size_t>(dim));
    const int half = dim / 2;
    for (int i = 0; i < half; ++i) {
        const double freq = std::pow(10000.0, -static_cast<double>(i) / half);
        out[static_cast<std::size_t>(2 * i)] = std::sin(value * freq);
        out[static_cast<std::size_t>(2 * i + 1)] = std::cos(value * freq);
    }
    if (dim % 2 == 1) out[static_cast<std::size_t>(dim - 1)] = 0.0;
    return out;
}

}  // namespace

std::vector<double> DiffParams::flatten() const {
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(channels()) * 4);
    for (int c = 0; c < channels(); ++c) {
        out.push_back(a_cos[static_cast<std::size_t>(c)]);
        out.push_back(a_sin[static_cast<std::size_t>(c)]);
        out.push_back(f_probit[static_cast<std::size_t>(c)]);
        out.push_back(b[static_cast<std::size_t>(c)]);
    }
    return out;
}

DiffParams DiffParams::from_flat(const std::vector<double>& flat, double f_max, double t_sec) {
    if (flat.size() % 4 != 0) throw Error("diff params: flat length must be a multiple of 4");
    DiffParams dp;
    dp.f_max = f_max;
    dp.t_sec = t_sec;
    for (std::size_t i = 0; i < flat.size(); i += 4) {
        dp.a_cos.push_back(flat[i]);
        dp.a_sin.push_back(flat[i + 1]);
        dp.f_probit.push_back(flat[i + 2]);
        dp.b.push_back(flat[i + 3]);
    }
    return dp;
}

DiffParams phase_to_diff(const per::PeriodicParams& params) {
    params.validate();
    if (params.f_max <= 0.0) throw Error("phase_to_diff: params carry no frequency bound");
    DiffParams dp;
    dp.f_max = params.f_max;
    dp.t_sec = params.t_sec;
    const double nudge = 1e-6 * params.f_max;
    for (int c = 0; c < params.channels(); ++c) {
        const double a = params.a[static_cast<std::size_t>(c)];
        const double ang = kTau * params.s[static_cast<std::size_t>(c)];
        dp.a_cos.push_back(a * std::cos(ang));
        dp.a_sin.push_back(a * std::sin(ang));
        double f = params.f[static_cast<std::size_t>(c)];
        if (f < -1e-9 || f > params.f_max + 1e-9) throw Error("phase_to_diff: frequency outside [0, f_max]");
        f = std::clamp(f, nudge, params.f_max - nudge);
        dp.f_probit.push_back(kSqrt2 * ag::erfinv(2.0 * f / params.f_max - 1.0));
        dp.b.push_back(params.b[static_cast<std::size_t>(c)]);
    }
    return dp;
}

per::PeriodicParams diff_to_phase(const DiffParams& dp) {
    per::PeriodicParams p;
    p.f_max = dp.f_max;
    p.t_sec = dp.t_sec;
    for (int c = 0; c < dp.channels(); ++c) {
        const double ac = dp.a_cos[static_cast<std::size_t>(c)];
        const double as = dp.a_sin[static_cast<std::size_t>(c)];
        // The floor only has to keep the amplitude strictly positive; anything
        // larger visibly biases small amplitudes on the round trip.
        p.a.push_back(std::sqrt(ac * ac + as * as + 1e-12));
        double s = std::atan2(as, ac) / kTau;
        s -= std::floor(s);
        if (s >= 1.0) s = 0.0;
        p.s.push_back(s);
        p.f.push_back(dp.f_max * 0.5 * (1.0 + std::erf(dp.f_probit[static_cast<std::size_t>(c)] / kSqrt2)));
        p.b.push_back(dp.b[static_cast<std::size_t>(c)]);
    }
    return p;
}

NoiseSchedule make_schedule(int steps, double beta_min, double beta_max) {
    if (steps < 1) throw Error("schedule: need at least one step");
    if (!(beta_min > 0.0 && beta_min < beta_max && beta_max < 1.0))
        throw Error("schedule: need 0 < beta_min < beta_max < 1");
    NoiseSchedule s;
    s.steps = steps;
    s.beta_min = beta_min;
    s.beta_max = beta_max;
    s.beta.assign(static_cast<std::size_t>(steps) + 1, 0.0);
    s.alpha.assign(static_cast<std::size_t>(steps) + 1, 1.0);
    s.alpha_bar.assign(static_cast<std::size_t>(steps) + 1, 1.0);
    for (int t = 1; t <= steps; ++t) {
        s.beta[static_cast<std::size_t>(t)] =
            beta_min + (static_cast<double>(t) / steps) * (beta_max - beta_min);
        s.alpha[static_cast<std::size_t>(t)] = 1.0 - s.beta[static_cast<std::size_t>(t)];
        s.alpha_bar[static_cast<std::size_t>(t)] =
            s.alpha_bar[static_cast<std::size_t>(t - 1)] * s.alpha[static_cast<std::size_t>(t)];
    }
    if (s.alpha_bar[static_cast<std::size_t>(steps)] <= 0.0) throw Error("schedule: alpha_bar underflow");
    return s;
}

namespace {
void check_t(int t, const NoiseSchedule& s) {
    if (t < 1 || t > s.steps) throw Error("schedule: timestep out of range");
}
}  // namespace

std::vector<double> q_sample(const std::vector<double>& z0, int t, const std::vector<double>& eps,
                             const NoiseSchedule& s) {
    check_t(t, s);
    if (z0.size() != eps.size()) throw Error("q_sample: size mismatch");
    const double ab = s.alpha_bar[static_cast<std::size_t>(t)];
    const double c0 = std::sqrt(ab), c1 = std::sqrt(1.0 - ab);
    std::vector<double> out(z0.size());
    for (std::size_t i = 0; i < z0.size(); ++i) out[i] = c0 * z0[i] + c1 * eps[i];
    return out;
}

std::vector<double> v_target(const std::vector<double>& z0, const std::vector<double>& eps, int t,
                             const NoiseSchedule& s) {
    check_t(t, s);
    if (z0.size() != eps.size()) throw Error("v_target: size mismatch");
    const double ab = s.alpha_bar[static_cast<std::size_t>(t)];
    const double c0 = std::sqrt(ab), c1 = std::sqrt(1.0 - ab);
    std::vector<double> out(z0.size());
    for (std::size_t i = 0; i < z0.size(); ++i) out[i] = c0 * eps[i] - c1 * z0[i];
    return out;
}

std::pair<std::vector<double>, std::vector<double>> recover(const std::vector<double>& z_t,
                                                            const std::vector<double>& v, int t,
                                                            const NoiseSchedule& s) {
    check_t(t, s);
    if (z_t.size() != v.size()) throw Error("recover: size mismatch");
    const double ab = s.alpha_bar[static_cast<std::size_t>(t)];
    const double c0 = std::sqrt(ab), c1 = std::sqrt(1.0 - ab);
    std::vector<double> z0(z_t.size()), eps(z_t.size());
    for (std::size_t i = 0; i < z_t.size(); ++i) {
        z0[i] = c0 * z_t[i] - c1 * v[i];
        eps[i] = c1 * z_t[i] + c0 * v[i];
    }
    return {std::move(z0), std::move(eps)};
}

double min_snr_weight(int t, const NoiseSchedule& s, double gamma) {
    check_t(t, s);
    const double ab = s.alpha_bar[static_cast<std::size_t>(t)];
    return std::min(ab / (1.0 - ab), gamma);
}

std::vector<double> Standardizer::apply(const std::vector<double>& flat) const {
    std::vector<double> out(flat.size());
    for (std::size_t i = 0; i < flat.size(); ++i) out[i] = (flat[i] - mean[i % 4]) / stddev[i % 4];
    return out;
}

std::vector<double> Standardizer::invert(const std::vector<double>& flat) const {
    std::vector<double> out(flat.size());
    for (std::size_t i = 0; i < flat.size(); ++i) out[i] = flat[i] * stddev[i % 4] + mean[i % 4];
    return out;
}

Standardizer fit_standardizer(const std::vector<LatentItem>& items) {
    if (items.empty()) throw Error("standardizer: empty latent set");
    Standardizer s;
    std::array<double, 4> sum = {0, 0, 0, 0}, sq = {0, 0, 0, 0};
    long n = 0;
    for (const auto& item : items) {
        const std::vector<double> flat = item.params.flatten();
        for (std::size_t i = 0; i < flat.size(); ++i) {
            sum[i % 4] += flat[i];
            sq[i % 4] += flat[i] * flat[i];
        }
        n += item.params.channels();
    }
    for (int k = 0; k < 4; ++k) {
        s.mean[static_cast<std::size_t>(k)] = sum[static_cast<std::size_t>(k)] / n;
        const double var = sq[static_cast<std::size_t>(k)] / n -
                           s.mean[static_cast<std::size_t>(k)] * s.mean[static_cast<std::size_t>(k)];
        s.stddev[static_cast<std::size_t>(k)] = std::sqrt(std::max(var, 1e-12));
    }
    return s;
}

void DenoiserConfig::validate() const {
    if (channels < 1 || d_embed < 4 || blocks < 1 || heads < 1 || num_classes < 1)
        throw Error("denoiser config: nonpositive size");
    if (d_embed % heads != 0) throw Error("denoiser config: heads must divide d_embed");
}

std::string DenoiserConfig::to_json() const {
    nlohmann::json j;
    j["channels"] = channels;
    j["d_embed"] = d_embed;
    j["blocks"] = blocks;
    j["heads"] = heads;
    j["num_classes"] = num_classes;
    return j.dump(2);
}

DenoiserConfig DenoiserConfig::from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("denoiser config: invalid JSON: ") + e.what());
    }
    static const std::vector<std::string> allowed = {"channels", "d_embed", "blocks", "heads", "num_classes"};
    for (auto it = j.begin(); it != j.end(); ++it)
        if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end())
            throw Error("denoiser config: unknown key '" + it.key() + "'");
    DenoiserConfig c;
    if (j.contains("channels")) c.channels = j["channels"].get<int>();
    if (j.contains("d_embed")) c.d_embed = j["d_embed"].get<int>();
    if (j.contains("blocks")) c.blocks = j["blocks"].get<int>();
    if (j.contains("heads")) c.heads = j["heads"].get<int>();
    if (j.contains("num_classes")) c.num_classes = j["num_classes"].get<int>();
    c.validate();
    return c;
}

Denoiser::Denoiser(DenoiserConfig cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    pos_.reserve(static_cast<std::size_t>(cfg_.channels) * cfg_.d_embed);
    for (int c = 0; c < cfg_.channels; ++c) {
        const std::vector<double> row = sinusoid(static_cast<double>(c), cfg_.d_embed);
        pos_.insert(pos_.end(), row.begin(), row.end());
    }
    init_weights(seed);
}

ag::Tensor Denoiser::reg(const std::string& name, ag::Tensor t) {
    t.set_requires_grad(true);
    index_[name] = static_cast<int>(params_.size());
    params_.push_back({name, t});
    return t;
}

void Denoiser::init_weights(std::uint64_t seed) {
    Rng rng(seed);
    const std::int64_t d = cfg_.d_embed;
    auto w = [&](const std::string& name, std::int64_t rows, std::int64_t cols, double gain = 1.0) {
        if (gain == 0.0)
            reg(name + ".w", ag::Tensor::zeros({rows, cols}));
        else
            reg(name + ".w", ag::Tensor::randn({rows, cols}, rng, gain / std::sqrt(static_cast<double>(rows))));
        reg(name + ".b", ag::Tensor::zeros({1, cols}));
    };
    w("in", 4, d);
    w("time.fc1", d, d);
    w("time.fc2", d, d);
    reg("class.table", ag::Tensor::randn({cfg_.num_classes + 1, d}, rng, 0.5));
    w("ctx", 4, d);
    reg("ctx.null", ag::Tensor::randn({1, d}, rng, 0.5));
    w("cond.fc1", 3 * d, d);
    w("cond.fc2", d, d);
    for (int i = 0; i < cfg_.blocks; ++i) {
        const std::string b = "block" + std::to_string(i);
        w(b + ".attn.q", d, d);
        w(b + ".attn.k", d, d);
        w(b + ".attn.v", d, d);
        w(b + ".attn.o", d, d);
        w(b + ".fc1", d, d);
        w(b + ".fc2", d, d);
        // Modulation heads start as the identity modulation.
        w(b + ".gamma1", d, d, 0.0);
        w(b + ".beta1", d, d, 0.0);
        w(b + ".gamma2", d, d, 0.0);
        w(b + ".beta2", d, d, 0.0);
        for (const char* g : {".gamma1", ".gamma2"}) {
            auto it = index_.find(b + g + ".b");
            std::vector<double>& bias = params_[static_cast<std::size_t>(it->second)].value.data();
            std::fill(bias.begin(), bias.end(), 1.0);
        }
    }
    w("out", d, 4, 0.0);  // zero init: the untrained model predicts v = 0
}

std::int64_t Denoiser::param_count() const {
    std::int64_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
}

void Denoiser::load_params(const std::vector<std::pair<std::string, ag::Tensor>>& named) {
    for (const auto& [name, tensor] : named) {
        auto it = index_.find(name);
        if (it == index_.end()) throw Error("denoiser: checkpoint has unknown weight '" + name + "'");
        ag::Tensor& dst = params_[static_cast<std::size_t>(it->second)].value;
        if (dst.shape() != tensor.shape()) throw Error("denoiser: shape mismatch for weight '" + name + "'");
        dst.data() = tensor.data();
    }
    if (named.size() != params_.size()) throw Error("denoiser: checkpoint weight count mismatch");
}

ag::Tensor Denoiser::forward(const ag::Tensor& z, int t, int total_steps, const Condition& cond,
                             ag::Tape* tape) const {
    if (z.ndim() != 2 || z.dim(0) != cfg_.channels || z.dim(1) != 4)
        throw ShapeError("denoiser: expected a (C, 4) latent");
    if (cond.label >= cfg_.num_classes) throw Error("denoiser: class label out of range");
    P p{params_, index_, tape};

    ag::Tensor pos = ag::Tensor::from(pos_, {cfg_.channels, cfg_.d_embed}).with_tape(tape);
    ag::Tensor h = ag::add(lin(p, "in", z.with_tape(tape)), pos);

    const double tv = 1000.0 * static_cast<double>(t) / static_cast<double>(total_steps);
    ag::Tensor et = ag::Tensor::from(sinusoid(tv, cfg_.d_embed), {1, cfg_.d_embed}).with_tape(tape);
    et = lin(p, "time.fc2", ag::relu(lin(p, "time.fc1", et)));

    const std::int64_t row = cond.label < 0 ? cfg_.num_classes : cond.label;
    ag::Tensor ey = ag::index_rows(p("class.table"), {row});

    ag::Tensor ec;
    if (cond.context.empty()) {
        ec = p("ctx.null");
    } else {
        if (static_cast<int>(cond.context.size()) != cfg_.channels * 4)
            throw ShapeError("denoiser: context latent size mismatch");
        ag::Tensor ctx = ag::Tensor::from(cond.context, {cfg_.channels, 4}).with_tape(tape);
        ec = ag::mean_axis(lin(p, "ctx", ctx), 0, true);  // (1, d)
    }

    ag::Tensor c = ag::concat({et, ey, ec}, 1);
    c = lin(p, "cond.fc2", ag::relu(lin(p, "cond.fc1", c)));

    for (int i = 0; i < cfg_.blocks; ++i) {
        const std::string b = "block" + std::to_string(i);
        ag::Tensor g1 = lin(p, b + ".gamma1", c);
        ag::Tensor b1 = lin(p, b + ".beta1", c);
        ag::Tensor g2 = lin(p, b + ".gamma2", c);
        ag::Tensor b2 = lin(p, b + ".beta2", c);
        h = ag::add(h, mha(p, b + ".attn", adaln(h, g1, b1), cfg_.heads));
        h = ag::add(h, lin(p, b + ".fc2", ag::relu(lin(p, b + ".fc1", adaln(h, g2, b2)))));
    }
    return lin(p, "out", ag::layer_norm(h));
}

DiffTrainResult train_diffusion(Denoiser& model, const std::vector<LatentItem>& items,
                                const Standardizer& stats, const NoiseSchedule& schedule,
                                const DiffTrainConfig& cfg, ag::AdamW& opt) {
    if (items.empty()) throw Error("train_diffusion: empty latent set");
    const int c = model.config().channels;
    for (const auto& item : items)
        if (item.params.channels() != c) throw Error("train_diffusion: latent channel mismatch");

    std::ostringstream log;
    log.precision(10);
    log << "step,lr,loss\n";
    DiffTrainResult result;
    std::vector<std::vector<double>> snapshot(model.params().size());

    if (cfg.start_step < 0 || cfg.start_step > cfg.steps) throw Error("train_diffusion: bad resume step");
    const int stop = cfg.stop_step < 0 ? cfg.steps : std::min(cfg.stop_step, cfg.steps);
    for (int step = cfg.start_step; step < stop; ++step) {
        Rng rng(Rng::derive(cfg.seed ^ 0x9e3779b9ULL, static_cast<std::uint64_t>(step)));
        for (std::size_t i = 0; i < model.params().size(); ++i) snapshot[i] = model.params()[i].value.data();

        ag::Tape tape;
        ag::Tensor total;
        for (int bi = 0; bi < cfg.batch; ++bi) {
            const LatentItem& item = items[rng.integer(items.size())];
            const int t = static_cast<int>(rng.integer(static_cast<std::uint64_t>(schedule.steps))) + 1;
            const std::vector<double> z0 = stats.apply(item.params.flatten());
            std::vector<double> eps(z0.size());
            for (double& e : eps) e = rng.normal();
            const std::vector<double> zt = q_sample(z0, t, eps, schedule);
            const std::vector<double> v = v_target(z0, eps, t, schedule);

            Condition cond;
            cond.label = rng.uniform() < cfg.class_dropout ? -1 : item.label;
            if (!item.context_flat.empty() && rng.uniform() >= cfg.context_dropout)
                cond.context = stats.apply(item.context_flat);

            ag::Tensor z = ag::Tensor::from(zt, {c, 4}).with_tape(&tape);
            ag::Tensor vt = ag::Tensor::from(v, {c, 4}).with_tape(&tape);
            ag::Tensor vh = model.forward(z, t, schedule.steps, cond, &tape);
            ag::Tensor d = ag::sub(vh, vt);
            const double w = min_snr_weight(t, schedule, cfg.gamma) / cfg.batch;
            ag::Tensor item_loss = ag::scale(ag::mean(ag::mul(d, d)), w);
            total = bi == 0 ? item_loss : ag::add(total, item_loss);
        }

        const double loss_val = total.item();
        if (!std::isfinite(loss_val)) {
            for (std::size_t i = 0; i < model.params().size(); ++i)
                model.params()[i].value.data() = snapshot[i];
            result.aborted = true;
            break;
        }
        if (step == cfg.start_step) result.first_loss = loss_val;
        result.last_loss = loss_val;

        tape.backward(total);
        opt.step(model.params(), cfg.lr);
        opt.zero_grad(model.params());
        result.steps_done = step + 1;
        if (step % std::max(1, cfg.log_every) == 0 || step == cfg.steps - 1)
            log << step << "," << cfg.lr << "," << loss_val << "\n";
    }
    result.log_csv = log.str();
    return result;
}

DiffParams ddim_sample(const Denoiser& model, const Condition& cond, const Standardizer& stats,
                       const NoiseSchedule& schedule, const SampleConfig& cfg, std::uint64_t seed,
                       double f_max, double t_sec, int* clamp_warnings) {
    if (cfg.steps < 1 || cfg.steps > schedule.steps) throw Error("ddim: need 1 <= S <= T");
    const int c = model.config().channels;
    Rng rng(seed);
    std::vector<double> z(static_cast<std::size_t>(c) * 4);
    for (double& v : z) v = rng.normal();

    auto predict = [&](int t) {
        ag::Tensor zt = ag::Tensor::from(z, {c, 4});
        ag::Tensor vh = model.forward(zt, t, schedule.steps, cond, nullptr);
        std::vector<double> v = vh.data();
        if (cfg.guidance != 1.0) {
            Condition null_cond;
            ag::Tensor vn = model.forward(zt, t, schedule.steps, null_cond, nullptr);
            for (std::size_t i = 0; i < v.size(); ++i)
                v[i] = vn.data()[i] + cfg.guidance * (v[i] - vn.data()[i]);
        }
        return v;
    };

    for (int s = cfg.steps; s >= 1; --s) {
        const int t = static_cast<int>(static_cast<long long>(s) * schedule.steps / cfg.steps);
        const int t_prev = static_cast<int>(static_cast<long long>(s - 1) * schedule.steps / cfg.steps);
        const double ab = schedule.alpha_bar[static_cast<std::size_t>(t)];
        const double abp = schedule.alpha_bar[static_cast<std::size_t>(t_prev)];

        const std::vector<double> v = predict(t);
        auto [z0, eps] = recover(z, v, t, schedule);

        const double sigma = cfg.eta * std::sqrt((1.0 - abp) / (1.0 - ab)) * std::sqrt(1.0 - ab / abp);
        double coef = 1.0 - abp - sigma * sigma;
        if (coef < 0.0) {
            if (clamp_warnings) ++*clamp_warnings;
            coef = 0.0;
        }
        const double c0 = std::sqrt(abp), c1 = std::sqrt(coef);
        for (std::size_t i = 0; i < z.size(); ++i) {
            z[i] = c0 * z0[i] + c1 * eps[i];
            if (sigma > 0.0) z[i] += sigma * rng.normal();
            if (!std::isfinite(z[i])) throw Error("ddim: non-finite sample state");
        }
    }
    return DiffParams::from_flat(stats.invert(z), f_max, t_sec);
}

MotionClip mask_keyframes(const MotionClip& clip, const std::vector<int>& keep) {
    if (keep.empty()) throw Error("mask_keyframes: empty keyframe set");
    std::vector<char> is_key(static_cast<std::size_t>(clip.frames()), 0);
    for (int k : keep) {
        if (k < 0 || k >= clip.frames()) throw Error("mask_keyframes: keyframe index out of range");
        is_key[static_cast<std::size_t>(k)] = 1;
    }
    MotionClip out = clip;
    for (int f = 0; f < clip.frames(); ++f) {
        if (is_key[static_cast<std::size_t>(f)]) continue;
        for (int j = 0; j < clip.joint_count(); ++j) out.rot(f, j) = geo::Rot6d{0, 0, 0, 0, 0, 0};
        out.root_positions[static_cast<std::size_t>(f)] = {0, 0, 0};
    }
    return out;
}

}  // namespace phasekit::dm
