#include "phasekit/funphase.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

namespace phasekit::fp {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Weight lookup bound to one forward pass; attaches the tape at use sites so
// recorded ops see every parameter.
struct P {
    const std::vector<ag::Param>& params;
    const std::unordered_map<std::string, int>& index;
    ag::Tape* tape;

    ag::Tensor operator()(const std::string& name) const {
        auto it = index.find(name);
        if (it == index.end()) throw Error("funphase: unknown weight '" + name + "'");
        return params[static_cast<std::size_t>(it->second)].value.with_tape(tape);
    }
};

ag::Tensor lin(const P& p, const std::string& prefix, const ag::Tensor& x) {
    return ag::linear(x, p(prefix + ".w"), p(prefix + ".b"));
}

ag::Tensor mha(const P& p, const std::string& prefix, const ag::Tensor& q, const ag::Tensor& kv,
               int heads) {
    const std::int64_t d = p(prefix + ".q.w").dim(1);
    if (d % heads != 0) throw Error("funphase: head count must divide embed width");
    const std::int64_t dh = d / heads;
    ag::Tensor qq = lin(p, prefix + ".q", q);
    ag::Tensor kk = lin(p, prefix + ".k", kv);
    ag::Tensor vv = lin(p, prefix + ".v", kv);
    std::vector<ag::Tensor> outs;
    for (int h = 0; h < heads; ++h) {
        std::vector<std::int64_t> cols(static_cast<std::size_t>(dh));
        for (std::int64_t i = 0; i < dh; ++i) cols[static_cast<std::size_t>(i)] = h * dh + i;
        ag::Tensor qh = ag::select_cols(qq, cols);
        ag::Tensor kh = ag::select_cols(kk, cols);
        ag::Tensor vh = ag::select_cols(vv, cols);
        ag::Tensor att = ag::softmax(ag::scale(ag::matmul(qh, ag::transpose(kh)), 1.0 / std::sqrt(static_cast<double>(dh))));
        outs.push_back(ag::matmul(att, vh));
    }
    return lin(p, prefix + ".o", ag::concat(outs, 1));
}

ag::Tensor mlp(const P& p, const std::string& prefix, const ag::Tensor& x) {
    return lin(p, prefix + ".fc2", ag::relu(lin(p, prefix + ".fc1", x)));
}

// Pre-LN transformer block: self-attention and MLP residuals.
ag::Tensor self_block(const P& p, const std::string& prefix, ag::Tensor x, int heads) {
    ag::Tensor n = ag::layer_norm(x);
    x = ag::add(x, mha(p, prefix + ".attn", n, n, heads));
    x = ag::add(x, mlp(p, prefix, ag::layer_norm(x)));
    return x;
}

// Time-preserving encoder pathway. Frames are embedded by a shared linear
// map and mixed by attention blocks with no positional input, so a frame's
// output depends only on its own content plus an order-free summary of the
// clip; a frozen clip maps to a constant curve and its spectral amplitude
// vanishes by construction, not by training. The per-frame (T, L) outputs are
// then linearly interpolated in time onto the uniform latent grid i/N.
ag::Tensor encode_path(const P& p, const std::string& base, const ag::Tensor& rows,
                       const std::vector<double>& times, const PathwayConfig& pc, int heads,
                       int d_latent) {
    ag::Tensor x = lin(p, base + ".embed", rows);
    for (int i = 0; i < pc.blocks; ++i) x = self_block(p, base + ".block" + std::to_string(i), x, heads);
    x = lin(p, base + ".proj", ag::layer_norm(x));  // (T, L)

    const std::int64_t t = x.dim(0);
    if (static_cast<std::size_t>(t) != times.size())
        throw Error("funphase: encoder frame count does not match the time stamps");
    std::vector<double> wv(static_cast<std::size_t>(d_latent * t), 0.0);
    for (int i = 0; i < d_latent; ++i) {
        const double g = static_cast<double>(i) / static_cast<double>(d_latent);
        std::size_t k = static_cast<std::size_t>(
            std::upper_bound(times.begin(), times.end(), g) - times.begin());
        double* row = wv.data() + static_cast<std::size_t>(i) * t;
        if (k == 0) {
            row[0] = 1.0;
        } else if (k >= times.size()) {
            row[times.size() - 1] = 1.0;
        } else {
            const double span = times[k] - times[k - 1];
            const double a = span > 0.0 ? (g - times[k - 1]) / span : 0.0;
            row[k - 1] = 1.0 - a;
            row[k] = a;
        }
    }
    ag::Tensor w = ag::Tensor::from(std::move(wv), {d_latent, t}).with_tape(x.tape);
    return ag::transpose(ag::matmul(w, x));  // (L, d_latent)
}

// Row-wise Gram-Schmidt decode of (K, 6) into (K, 9) rotation matrices;
// mirrors geo::rot6d_to_matrix so detached re-computations agree exactly.
ag::Tensor rows_rot6d_to_matrix(const ag::Tensor& x) {
    ag::Tensor v1 = ag::select_cols(x, {0, 1, 2});
    ag::Tensor v2 = ag::select_cols(x, {3, 4, 5});
    ag::Tensor n1 = ag::sqrt(ag::sum_axis(ag::mul(v1, v1), 1, true));
    ag::Tensor c1 = ag::div(v1, n1);
    ag::Tensor d = ag::sum_axis(ag::mul(c1, v2), 1, true);
    ag::Tensor u2 = ag::sub(v2, ag::mul(c1, d));
    ag::Tensor n2 = ag::sqrt(ag::sum_axis(ag::mul(u2, u2), 1, true));
    ag::Tensor c2 = ag::div(u2, n2);
    ag::Tensor c3 = ag::cross3(c1, c2);
    auto col = [](const ag::Tensor& t, std::int64_t i) { return ag::select_cols(t, {i}); };
    return ag::concat({col(c1, 0), col(c2, 0), col(c3, 0), col(c1, 1), col(c2, 1), col(c3, 1),
                       col(c1, 2), col(c2, 2), col(c3, 2)},
                      1);
}

std::vector<double> flatten_pe(const std::vector<double>& a, const std::vector<double>& b) {
    std::vector<double> out;
    out.reserve(a.size() + b.size());
    out.insert(out.end(), a.begin(), a.end());
    out.insert(out.end(), b.begin(), b.end());
    return out;
}

}  // namespace

void ModelConfig::validate() const {
    if (channels < 1 || d_latent < 4 || d_latent % 2 != 0)
        throw Error("model config: channels >= 1 and even d_latent >= 4 required");
    if (heads < 1 || joints.embed % heads != 0 || root.embed % heads != 0)
        throw Error("model config: heads must divide both embed widths");
    if (joints.latents < 1 || root.latents < 1 || joints.blocks < 0 || root.blocks < 0 || dec_blocks < 0)
        throw Error("model config: nonpositive architecture size");
    if (conv_kernel < 1 || conv_kernel > d_latent) throw Error("model config: bad conv kernel");
    if (time_freqs < 1 || time_f_min <= 0.0 || time_f_max <= time_f_min)
        throw Error("model config: bad temporal frequency range");
    if (t_sec <= 0.0) throw Error("model config: window duration must be positive");
    if (w_rec < 0.0 || w_phys < 0.0 || w_foot < 0.0) throw Error("model config: negative loss weight");
}

std::string ModelConfig::to_json() const {
    nlohmann::json j;
    j["channels"] = channels;
    j["d_latent"] = d_latent;
    j["heads"] = heads;
    j["dec_blocks"] = dec_blocks;
    j["conv_kernel"] = conv_kernel;
    j["joints"] = {{"latents", joints.latents}, {"embed", joints.embed}, {"blocks", joints.blocks}};
    j["root"] = {{"latents", root.latents}, {"embed", root.embed}, {"blocks", root.blocks}};
    j["time_freqs"] = time_freqs;
    j["time_f_min"] = time_f_min;
    j["time_f_max"] = time_f_max;
    j["graph"] = {{"mode", graph.mode == enc::GraphPEMode::Laplacian ? "laplacian" : "heat"},
                  {"dim", graph.dim},
                  {"heat_times", graph.heat_times},
                  {"seed", graph.seed}};
    j["w_rec"] = w_rec;
    j["w_phys"] = w_phys;
    j["w_foot"] = w_foot;
    j["t_sec"] = t_sec;
    return j.dump(2);
}

ModelConfig ModelConfig::from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("model config: invalid JSON: ") + e.what());
    }
    static const std::vector<std::string> allowed = {
        "channels", "d_latent", "heads", "dec_blocks", "conv_kernel", "joints", "root",
        "time_freqs", "time_f_min", "time_f_max", "graph", "w_rec", "w_phys", "w_foot", "t_sec"};
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end())
            throw Error("model config: unknown key '" + it.key() + "'");
    }
    ModelConfig c;
    auto path = [](const nlohmann::json& p, PathwayConfig d) {
        if (p.contains("latents")) d.latents = p["latents"].get<int>();
        if (p.contains("embed")) d.embed = p["embed"].get<int>();
        if (p.contains("blocks")) d.blocks = p["blocks"].get<int>();
        return d;
    };
    if (j.contains("channels")) c.channels = j["channels"].get<int>();
    if (j.contains("d_latent")) c.d_latent = j["d_latent"].get<int>();
    if (j.contains("heads")) c.heads = j["heads"].get<int>();
    if (j.contains("dec_blocks")) c.dec_blocks = j["dec_blocks"].get<int>();
    if (j.contains("conv_kernel")) c.conv_kernel = j["conv_kernel"].get<int>();
    if (j.contains("joints")) c.joints = path(j["joints"], c.joints);
    if (j.contains("root")) c.root = path(j["root"], c.root);
    if (j.contains("time_freqs")) c.time_freqs = j["time_freqs"].get<int>();
    if (j.contains("time_f_min")) c.time_f_min = j["time_f_min"].get<double>();
    if (j.contains("time_f_max")) c.time_f_max = j["time_f_max"].get<double>();
    if (j.contains("graph")) {
        const auto& g = j["graph"];
        if (g.contains("mode")) {
            const std::string m = g["mode"].get<std::string>();
            if (m == "laplacian") c.graph.mode = enc::GraphPEMode::Laplacian;
            else if (m == "heat") c.graph.mode = enc::GraphPEMode::Heat;
            else throw Error("model config: graph mode must be 'laplacian' or 'heat'");
        }
        if (g.contains("dim")) c.graph.dim = g["dim"].get<int>();
        if (g.contains("heat_times")) c.graph.heat_times = g["heat_times"].get<std::vector<double>>();
        if (g.contains("seed")) c.graph.seed = g["seed"].get<std::uint64_t>();
    }
    if (j.contains("w_rec")) c.w_rec = j["w_rec"].get<double>();
    if (j.contains("w_phys")) c.w_phys = j["w_phys"].get<double>();
    if (j.contains("w_foot")) c.w_foot = j["w_foot"].get<double>();
    if (j.contains("t_sec")) c.t_sec = j["t_sec"].get<double>();
    c.validate();
    return c;
}

ClipTargets make_targets(const MotionClip& clip, const std::vector<int>& foot_joints) {
    const int t = clip.frames();
    const int j = clip.joint_count();
    ClipTargets out;
    out.foot_joints = foot_joints;
    out.root_rel.resize(static_cast<std::size_t>(t));
    for (int i = 0; i < t; ++i)
        out.root_rel[static_cast<std::size_t>(i)] =
            geo::sub(clip.root_positions[static_cast<std::size_t>(i)], clip.root_positions[0]);
    // Keep absolute heights so penetration targets stay meaningful.
    for (int i = 0; i < t; ++i) out.root_rel[static_cast<std::size_t>(i)][1] = clip.root_positions[static_cast<std::size_t>(i)][1];

    out.rot9.resize(static_cast<std::size_t>(t) * j * 9);
    for (int f = 0; f < t; ++f) {
        for (int ji = 0; ji < j; ++ji) {
            const geo::Mat3 m = geo::rot6d_to_matrix(clip.rot(f, ji));
            for (int k = 0; k < 9; ++k) out.rot9[static_cast<std::size_t>((f * j + ji) * 9 + k)] = m[static_cast<std::size_t>(k)];
        }
    }
    out.positions = kin::forward_kinematics(*clip.skeleton, clip.rotations, out.root_rel);

    // Adaptive contact thresholds from the ground-truth foot trajectories:
    // a foot counts as grounded in its lowest, slowest quartile.
    if (!foot_joints.empty() && t >= 2) {
        double ymin = 1e300, ymax = -1e300, vmin = 1e300, vmax = -1e300;
        for (int fj : foot_joints) {
            for (int f = 0; f < t; ++f) {
                const double y = out.positions.at(f, fj, 1);
                ymin = std::min(ymin, y);
                ymax = std::max(ymax, y);
                const int f0 = f > 0 ? f - 1 : f;
                const int f1 = f < t - 1 ? f + 1 : f;
                const double v = geo::norm(geo::sub(out.positions.pos(f1, fj), out.positions.pos(f0, fj))) *
                                 clip.frame_rate / static_cast<double>(f1 - f0);
                vmin = std::min(vmin, v);
                vmax = std::max(vmax, v);
            }
        }
        const double h_c = std::max(1e-9, ymin + 0.25 * (ymax - ymin) + 1e-6);
        const double v_c = std::max(1e-9, vmin + 0.25 * (vmax - vmin) + 1e-6);
        out.contacts = kin::detect_contacts(out.positions, foot_joints, h_c, v_c, clip.frame_rate);
    } else {
        out.contacts.frames = t;
        out.contacts.feet = static_cast<int>(foot_joints.size());
        out.contacts.mask.assign(static_cast<std::size_t>(t) * foot_joints.size(), 0);
    }
    return out;
}

FunPhase::FunPhase(ModelConfig cfg, const Skeleton& skeleton, std::uint64_t seed)
    : cfg_(std::move(cfg)), skel_(skeleton) {
    cfg_.validate();
    skel_.validate();
    time_pe_ = enc::TemporalPE::geometric(cfg_.time_freqs, cfg_.time_f_min, cfg_.time_f_max);
    graph_pe_ = enc::graph_pe(skel_, cfg_.graph);
    init_weights(seed);
}

ag::Tensor FunPhase::reg(const std::string& name, ag::Tensor t) {
    t.set_requires_grad(true);
    index_[name] = static_cast<int>(params_.size());
    params_.push_back({name, t});
    return t;
}

void FunPhase::init_weights(std::uint64_t seed) {
    Rng rng(seed);
    auto w = [&](const std::string& name, std::int64_t rows, std::int64_t cols, double gain = 1.0) {
        reg(name + ".w", ag::Tensor::randn({rows, cols}, rng, gain / std::sqrt(static_cast<double>(rows))));
        reg(name + ".b", ag::Tensor::zeros({1, cols}));
    };
    auto attn = [&](const std::string& name, std::int64_t d) {
        w(name + ".q", d, d);
        w(name + ".k", d, d);
        w(name + ".v", d, d);
        w(name + ".o", d, d);
    };
    auto block = [&](const std::string& name, std::int64_t d) {
        attn(name + ".attn", d);
        w(name + ".fc1", d, d);
        w(name + ".fc2", d, d);
    };

    const int g = cfg_.graph.dim;
    const int k2 = time_pe_.out_dim();
    const std::int64_t dl = cfg_.d_latent;
    auto enc_path = [&](const std::string& base, const PathwayConfig& pc, std::int64_t row_dim) {
        w(base + ".embed", row_dim, pc.embed);
        for (int i = 0; i < pc.blocks; ++i) block(base + ".block" + std::to_string(i), pc.embed);
        w(base + ".proj", pc.embed, pc.latents);
    };
    enc_path("enc.joints", cfg_.joints, static_cast<std::int64_t>(skel_.joint_count()) * 6);
    enc_path("enc.root", cfg_.root, 3);

    const std::int64_t ltot = cfg_.joints.latents + cfg_.root.latents;
    reg("bottleneck.conv.w",
        ag::Tensor::randn({cfg_.channels, ltot, cfg_.conv_kernel}, rng,
                          1.0 / std::sqrt(static_cast<double>(ltot * cfg_.conv_kernel))));
    reg("bottleneck.conv.b", ag::Tensor::zeros({cfg_.channels}));
    reg("bottleneck.deconv.w",
        ag::Tensor::randn({ltot, cfg_.channels, cfg_.conv_kernel}, rng,
                          1.0 / std::sqrt(static_cast<double>(cfg_.channels * cfg_.conv_kernel))));
    reg("bottleneck.deconv.b", ag::Tensor::zeros({ltot}));

    reg("phase.w", ag::Tensor::randn({dl, 2}, rng, 1.0 / std::sqrt(static_cast<double>(dl))));
    // Bias away from the atan2 dead zone at the origin.
    reg("phase.b", ag::Tensor::from({1.0, 0.0}, {1, 2}));

    auto dec_path = [&](const std::string& base, const PathwayConfig& pc, std::int64_t query_dim,
                        std::int64_t head_out) {
        w(base + ".latproj", dl, pc.embed);
        for (int i = 0; i < cfg_.dec_blocks; ++i) block(base + ".block" + std::to_string(i), pc.embed);
        w(base + ".query", query_dim, pc.embed);
        attn(base + ".cross", pc.embed);
        w(base + ".fc1", pc.embed, pc.embed);
        w(base + ".fc2", pc.embed, pc.embed);
        w(base + ".head", pc.embed, head_out, 0.01);
    };
    dec_path("dec.joints", cfg_.joints, g + k2, 6);
    dec_path("dec.root", cfg_.root, k2, 3);

    // Identity rotation in 6D form keeps untrained decodes valid.
    auto it = index_.find("dec.joints.head.b");
    std::vector<double>& hb = params_[static_cast<std::size_t>(it->second)].value.data();
    hb = {1.0, 0.0, 0.0, 0.0, 1.0, 0.0};
}

std::int64_t FunPhase::param_count() const {
    std::int64_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
}

void FunPhase::load_params(const std::vector<std::pair<std::string, ag::Tensor>>& named) {
    for (const auto& [name, tensor] : named) {
        auto it = index_.find(name);
        if (it == index_.end()) throw Error("funphase: checkpoint has unknown weight '" + name + "'");
        ag::Tensor& dst = params_[static_cast<std::size_t>(it->second)].value;
        if (dst.shape() != tensor.shape())
            throw Error("funphase: shape mismatch for weight '" + name + "'");
        dst.data() = tensor.data();
    }
    if (named.size() != params_.size()) throw Error("funphase: checkpoint weight count mismatch");
}

FunPhase::Tokens FunPhase::build_tokens(const MotionClip& clip, ag::Tape* tape) const {
    if (clip.joint_count() != skel_.joint_count())
        throw Error("funphase: clip skeleton does not match the model skeleton");
    const int t = clip.frames();
    const int j = clip.joint_count();
    if (t < 2) throw Error("funphase: clip needs at least 2 frames");

    Tokens out;
    out.times = clip.times;
    std::vector<double> jt;
    jt.reserve(static_cast<std::size_t>(t) * j * 6);
    std::vector<double> rt;
    rt.reserve(static_cast<std::size_t>(t) * 3);
    for (int f = 0; f < t; ++f) {
        for (int ji = 0; ji < j; ++ji) {
            const geo::Rot6d& r = clip.rot(f, ji);
            jt.insert(jt.end(), r.begin(), r.end());
        }
        const geo::Vec3 rel = geo::sub(clip.root_positions[static_cast<std::size_t>(f)], clip.root_positions[0]);
        rt.push_back(rel[0]);
        rt.push_back(clip.root_positions[static_cast<std::size_t>(f)][1]);
        rt.push_back(rel[2]);
    }
    out.joints = ag::Tensor::from(std::move(jt), {t, static_cast<std::int64_t>(j) * 6}).with_tape(tape);
    out.root = ag::Tensor::from(std::move(rt), {t, 3}).with_tape(tape);
    return out;
}

ag::Tensor FunPhase::circular_bottleneck(const ag::Tensor& x, ag::Tape* tape) const {
    P p{params_, index_, tape};
    return ag::circular_conv1d(x, p("bottleneck.conv.w"), p("bottleneck.conv.b"));
}

FunPhase::Encoded FunPhase::encode_tokens(const Tokens& tokens, ag::Tape* tape) const {
    P p{params_, index_, tape};
    ag::Tensor lj =
        encode_path(p, "enc.joints", tokens.joints, tokens.times, cfg_.joints, cfg_.heads, cfg_.d_latent);
    ag::Tensor lr =
        encode_path(p, "enc.root", tokens.root, tokens.times, cfg_.root, cfg_.heads, cfg_.d_latent);
    ag::Tensor cat = ag::concat({lj, lr}, 0);  // (Ltot, d_latent)
    ag::Tensor z = ag::circular_conv1d(cat, p("bottleneck.conv.w"), p("bottleneck.conv.b"));

    per::DftResult dft = per::dft_decompose(z, cfg_.t_sec);
    Encoded out;
    out.z = z;
    out.a = dft.a;
    out.f = dft.f;
    out.b = dft.b;
    out.s = per::phase_regress(z, p("phase.w"), p("phase.b"));
    return out;
}

FunPhase::Encoded FunPhase::encode_t(const MotionClip& clip, ag::Tape* tape) const {
    return encode_tokens(build_tokens(clip, tape), tape);
}

per::PeriodicParams FunPhase::encode(const MotionClip& clip) const {
    Encoded e = encode_t(clip, nullptr);
    per::PeriodicParams p;
    p.s = e.s.data();
    p.a = e.a.data();
    p.f = e.f.data();
    p.b = e.b.data();
    p.t_sec = cfg_.t_sec;
    p.f_max = cfg_.f_max();
    p.validate();
    return p;
}

FunPhase::Decoded FunPhase::decode_t(const Encoded& enc, const std::vector<double>& times,
                                     const std::vector<int>& joints, ag::Tape* tape) const {
    if (times.empty() || joints.empty()) throw Error("funphase: empty decode query set");
    for (int j : joints)
        if (j < 0 || j >= skel_.joint_count()) throw Error("funphase: decode joint index out of range");
    P p{params_, index_, tape};

    // Latent curve sampled on the DFT grid, then expanded back to tokens.
    std::vector<double> grid(static_cast<std::size_t>(cfg_.d_latent));
    for (int i = 0; i < cfg_.d_latent; ++i)
        grid[static_cast<std::size_t>(i)] = static_cast<double>(i) / static_cast<double>(cfg_.d_latent);
    ag::Tensor zhat = per::eval_latent(enc.s.with_tape(tape), enc.a.with_tape(tape), enc.f.with_tape(tape),
                                       enc.b.with_tape(tape), grid, cfg_.t_sec);
    ag::Tensor tok = ag::circular_conv1d(zhat, p("bottleneck.deconv.w"), p("bottleneck.deconv.b"));
    ag::Tensor lat_j = ag::slice_rows(tok, 0, cfg_.joints.latents);
    ag::Tensor lat_r = ag::slice_rows(tok, cfg_.joints.latents, cfg_.root.latents);

    const int k2 = time_pe_.out_dim();
    const int g = cfg_.graph.dim;
    auto run_path = [&](const std::string& base, const PathwayConfig& pc, const ag::Tensor& lat,
                        const ag::Tensor& queries) {
        ag::Tensor x = lin(p, base + ".latproj", lat);
        for (int i = 0; i < cfg_.dec_blocks; ++i) x = self_block(p, base + ".block" + std::to_string(i), x, cfg_.heads);
        ag::Tensor q = lin(p, base + ".query", queries);
        q = ag::add(q, mha(p, base + ".cross", ag::layer_norm(q), ag::layer_norm(x), cfg_.heads));
        q = ag::add(q, mlp(p, base, ag::layer_norm(q)));
        return lin(p, base + ".head", ag::layer_norm(q));
    };

    std::vector<double> jq;
    jq.reserve(times.size() * joints.size() * static_cast<std::size_t>(g + k2));
    std::vector<double> rq;
    rq.reserve(times.size() * static_cast<std::size_t>(k2));
    for (double t : times) {
        const std::vector<double> tp = enc::temporal_encode(t, time_pe_);
        for (int j : joints) {
            const auto& gp = graph_pe_[static_cast<std::size_t>(j)];
            jq.insert(jq.end(), gp.begin(), gp.end());
            jq.insert(jq.end(), tp.begin(), tp.end());
        }
        rq.insert(rq.end(), tp.begin(), tp.end());
    }
    ag::Tensor joint_queries =
        ag::Tensor::from(std::move(jq), {static_cast<std::int64_t>(times.size() * joints.size()), g + k2})
            .with_tape(tape);
    ag::Tensor root_queries =
        ag::Tensor::from(std::move(rq), {static_cast<std::int64_t>(times.size()), k2}).with_tape(tape);

    Decoded out;
    out.rot6d = run_path("dec.joints", cfg_.joints, lat_j, joint_queries);
    out.root = run_path("dec.root", cfg_.root, lat_r, root_queries);
    return out;
}

FunPhase::Decoded FunPhase::decode_params(const per::PeriodicParams& params,
                                          const std::vector<double>& times,
                                          const std::vector<int>& joints) const {
    params.validate();
    if (params.channels() != cfg_.channels) throw Error("funphase: channel count mismatch in params");
    const std::int64_t c = params.channels();
    Encoded e;
    e.s = ag::Tensor::from(params.s, {c, 1});
    e.a = ag::Tensor::from(params.a, {c, 1});
    e.f = ag::Tensor::from(params.f, {c, 1});
    e.b = ag::Tensor::from(params.b, {c, 1});
    e.z = ag::Tensor::zeros({c, cfg_.d_latent});
    return decode_t(e, times, joints, nullptr);
}

MotionClip FunPhase::decode_clip(const per::PeriodicParams& params, int frames, double frame_rate,
                                 const std::vector<int>& joints, const geo::Vec3& anchor) const {
    if (frames < 2) throw Error("funphase: need at least 2 output frames");
    std::vector<double> times(static_cast<std::size_t>(frames));
    for (int i = 0; i < frames; ++i) times[static_cast<std::size_t>(i)] = static_cast<double>(i) / (frames - 1);
    Decoded d = decode_params(params, times, joints);

    const int j = skel_.joint_count();
    MotionClip clip;
    clip.skeleton = std::make_shared<Skeleton>(skel_);
    clip.frame_rate = frame_rate;
    clip.times = times;
    clip.rotations.assign(static_cast<std::size_t>(frames) * j, geo::Rot6d{1, 0, 0, 0, 1, 0});
    clip.root_positions.resize(static_cast<std::size_t>(frames));
    const std::vector<double>& rot = d.rot6d.data();
    const std::vector<double>& root = d.root.data();
    // x/z are window-relative, so frame 0 lands exactly on the anchor; y is
    // absolute and the anchor acts as a plain height offset there.
    const double ax = anchor[0] - root[0];
    const double az = anchor[2] - root[2];
    for (int f = 0; f < frames; ++f) {
        for (std::size_t qi = 0; qi < joints.size(); ++qi) {
            geo::Rot6d raw;
            const std::size_t base = (static_cast<std::size_t>(f) * joints.size() + qi) * 6;
            for (int k = 0; k < 6; ++k) raw[static_cast<std::size_t>(k)] = rot[base + static_cast<std::size_t>(k)];
            clip.rot(f, joints[qi]) = geo::matrix_to_rot6d(geo::rot6d_to_matrix(raw, "decoded frame " + std::to_string(f)));
        }
        clip.root_positions[static_cast<std::size_t>(f)] = {root[static_cast<std::size_t>(f * 3)] + ax,
                                                            root[static_cast<std::size_t>(f * 3 + 1)] + anchor[1],
                                                            root[static_cast<std::size_t>(f * 3 + 2)] + az};
    }
    return clip;
}

FunPhase::LossTensors FunPhase::loss_t(const Decoded& dec, const ClipTargets& targets,
                                       const std::vector<double>& times, const std::vector<int>& frame_idx,
                                       const std::vector<int>& loss_joints, ag::Tape* tape) const {
    const int j = skel_.joint_count();
    const int nt = static_cast<int>(times.size());
    if (static_cast<int>(frame_idx.size()) != nt) throw Error("funphase loss: frame index size mismatch");
    if (dec.rot6d.dim(0) != static_cast<std::int64_t>(nt) * j)
        throw Error("funphase loss: decoded rotations must cover every joint");
    if (loss_joints.empty()) throw Error("funphase loss: empty joint selection");

    // Gather ground truth at the selected frames.
    std::vector<double> gtr(static_cast<std::size_t>(nt) * j * 9);
    std::vector<double> gt_root(static_cast<std::size_t>(nt) * 3);
    for (int i = 0; i < nt; ++i) {
        const int f = frame_idx[static_cast<std::size_t>(i)];
        std::copy(targets.rot9.begin() + static_cast<std::ptrdiff_t>(f) * j * 9,
                  targets.rot9.begin() + static_cast<std::ptrdiff_t>(f + 1) * j * 9,
                  gtr.begin() + static_cast<std::ptrdiff_t>(i) * j * 9);
        for (int k = 0; k < 3; ++k)
            gt_root[static_cast<std::size_t>(i * 3 + k)] = targets.root_rel[static_cast<std::size_t>(f)][static_cast<std::size_t>(k)];
    }
    ag::Tensor gtR = ag::Tensor::from(std::move(gtr), {static_cast<std::int64_t>(nt) * j, 9}).with_tape(tape);
    ag::Tensor gtRoot = ag::Tensor::from(std::move(gt_root), {nt, 3}).with_tape(tape);

    ag::Tensor predR = rows_rot6d_to_matrix(dec.rot6d);
    ag::Tensor rel = ag::bmm3(predR, gtR, false, true);
    ag::Tensor tr = ag::sum_axis(ag::select_cols(rel, {0, 4, 8}), 1, true);
    ag::Tensor ang = ag::arccos(ag::scale(ag::add_scalar(tr, -1.0), 0.5));
    std::vector<std::int64_t> rot_rows;
    rot_rows.reserve(static_cast<std::size_t>(nt) * loss_joints.size());
    for (int i = 0; i < nt; ++i)
        for (int lj : loss_joints) rot_rows.push_back(static_cast<std::int64_t>(i) * j + lj);
    LossTensors out;
    out.rot = ag::mean(ag::index_rows(ang, rot_rows));

    // Positions are stored in cm but the loss weights assume meter-scale
    // terms; without the conversion the squared-position losses are ~1e4
    // larger than the rotation term and starve it of gradient.
    constexpr double kPos2 = 1e-4;

    ag::Tensor droot = ag::sub(dec.root, gtRoot);
    out.root = ag::scale(ag::mean(ag::mul(droot, droot)), kPos2);

    // FK on the full joint set; the position mean is restricted afterwards.
    std::vector<ag::Tensor> local(static_cast<std::size_t>(j));
    for (int ji = 0; ji < j; ++ji) {
        std::vector<std::int64_t> rows(static_cast<std::size_t>(nt));
        for (int i = 0; i < nt; ++i) rows[static_cast<std::size_t>(i)] = static_cast<std::int64_t>(i) * j + ji;
        local[static_cast<std::size_t>(ji)] = ag::index_rows(predR, rows);
    }
    std::vector<ag::Tensor> pos = kin::forward_kinematics_ag(skel_, local, dec.root);

    std::vector<ag::Tensor> fk_terms;
    for (int lj : loss_joints) {
        std::vector<double> gp(static_cast<std::size_t>(nt) * 3);
        for (int i = 0; i < nt; ++i)
            for (int k = 0; k < 3; ++k)
                gp[static_cast<std::size_t>(i * 3 + k)] =
                    targets.positions.at(frame_idx[static_cast<std::size_t>(i)], lj, k);
        ag::Tensor gt = ag::Tensor::from(std::move(gp), {nt, 3}).with_tape(tape);
        ag::Tensor d = ag::sub(pos[static_cast<std::size_t>(lj)], gt);
        fk_terms.push_back(ag::mul(d, d));
    }
    out.fk = ag::scale(ag::mean(ag::concat(fk_terms, 0)), kPos2);

    // Penetration below y=0 plus horizontal speed where ground truth says the
    // foot is planted.
    std::vector<ag::Tensor> pen_terms;
    std::vector<ag::Tensor> slide_terms;
    long slide_count = 0;
    for (std::size_t fi = 0; fi < targets.foot_joints.size(); ++fi) {
        const int fj = targets.foot_joints[fi];
        ag::Tensor y = ag::select_cols(pos[static_cast<std::size_t>(fj)], {1});
        ag::Tensor pen = ag::relu(ag::neg(y));
        pen_terms.push_back(ag::mul(pen, pen));
        if (nt >= 2) {
            ag::Tensor px = ag::select_cols(pos[static_cast<std::size_t>(fj)], {0});
            ag::Tensor pz = ag::select_cols(pos[static_cast<std::size_t>(fj)], {2});
            ag::Tensor dx = ag::sub(ag::slice_rows(px, 1, nt - 1), ag::slice_rows(px, 0, nt - 1));
            ag::Tensor dz = ag::sub(ag::slice_rows(pz, 1, nt - 1), ag::slice_rows(pz, 0, nt - 1));
            std::vector<double> invdt(static_cast<std::size_t>(nt - 1));
            std::vector<double> mask(static_cast<std::size_t>(nt - 1));
            for (int i = 0; i + 1 < nt; ++i) {
                invdt[static_cast<std::size_t>(i)] =
                    1.0 / ((times[static_cast<std::size_t>(i + 1)] - times[static_cast<std::size_t>(i)]) * cfg_.t_sec);
                const bool on = targets.contacts.at(frame_idx[static_cast<std::size_t>(i)], static_cast<int>(fi)) &&
                                targets.contacts.at(frame_idx[static_cast<std::size_t>(i + 1)], static_cast<int>(fi));
                mask[static_cast<std::size_t>(i)] = on ? 1.0 : 0.0;
                if (on) ++slide_count;
            }
            ag::Tensor w = ag::Tensor::from(std::move(invdt), {nt - 1, 1}).with_tape(tape);
            ag::Tensor m = ag::Tensor::from(std::move(mask), {nt - 1, 1}).with_tape(tape);
            ag::Tensor vx = ag::mul(dx, w);
            ag::Tensor vz = ag::mul(dz, w);
            slide_terms.push_back(ag::mul(ag::add(ag::mul(vx, vx), ag::mul(vz, vz)), m));
        }
    }
    if (pen_terms.empty()) {
        out.foot = ag::Tensor::scalar(0.0).with_tape(tape);
    } else {
        ag::Tensor pen = ag::mean(ag::concat(pen_terms, 0));
        if (slide_terms.empty() || slide_count == 0) {
            out.foot = ag::scale(pen, kPos2);
        } else {
            ag::Tensor slide = ag::scale(ag::sum(ag::concat(slide_terms, 0)), 1.0 / static_cast<double>(slide_count));
            out.foot = ag::scale(ag::add(pen, slide), kPos2);
        }
    }

    out.total = ag::add(ag::scale(ag::add(out.rot, out.root), cfg_.w_rec),
                        ag::scale(ag::add(out.fk, ag::scale(out.foot, cfg_.w_foot)), cfg_.w_phys));
    return out;
}

LossComponents loss_components(const ClipTargets& targets, const Skeleton& skeleton,
                               const std::vector<geo::Rot6d>& pred_rots,
                               const std::vector<geo::Vec3>& pred_root_rel,
                               const std::vector<double>& times, const ModelConfig& cfg) {
    const int j = skeleton.joint_count();
    const int nt = static_cast<int>(pred_root_rel.size());
    if (static_cast<int>(pred_rots.size()) != nt * j || static_cast<int>(times.size()) != nt)
        throw Error("loss_components: prediction sizes do not match");

    LossComponents out;
    for (int i = 0; i < nt; ++i) {
        for (int ji = 0; ji < j; ++ji) {
            geo::Mat3 gt;
            for (int k = 0; k < 9; ++k) gt[static_cast<std::size_t>(k)] = targets.rot9[static_cast<std::size_t>((i * j + ji) * 9 + k)];
            out.rot += geo::geodesic_distance(geo::rot6d_to_matrix(pred_rots[static_cast<std::size_t>(i * j + ji)]), gt);
        }
        const geo::Vec3 d = geo::sub(pred_root_rel[static_cast<std::size_t>(i)], targets.root_rel[static_cast<std::size_t>(i)]);
        out.root += d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
    }
    // Same cm^2 -> m^2 conversion as the tensor loss.
    constexpr double kPos2 = 1e-4;
    out.rot /= static_cast<double>(nt) * j;
    out.root *= kPos2 / (static_cast<double>(nt) * 3);

    kin::JointPositions pos = kin::forward_kinematics(skeleton, pred_rots, pred_root_rel);
    double fk = 0.0;
    for (int i = 0; i < nt; ++i)
        for (int ji = 0; ji < j; ++ji)
            for (int k = 0; k < 3; ++k) {
                const double d = pos.at(i, ji, k) - targets.positions.at(i, ji, k);
                fk += d * d;
            }
    out.fk = kPos2 * fk / (static_cast<double>(nt) * j * 3);

    double pen = 0.0, slide = 0.0;
    long slide_count = 0;
    for (std::size_t fi = 0; fi < targets.foot_joints.size(); ++fi) {
        const int fj = targets.foot_joints[fi];
        for (int i = 0; i < nt; ++i) {
            const double p = std::max(0.0, -pos.at(i, fj, 1));
            pen += p * p;
        }
        for (int i = 0; i + 1 < nt; ++i) {
            if (!targets.contacts.at(i, static_cast<int>(fi)) || !targets.contacts.at(i + 1, static_cast<int>(fi)))
                continue;
            const double dt = (times[static_cast<std::size_t>(i + 1)] - times[static_cast<std::size_t>(i)]) * cfg.t_sec;
            const double vx = (pos.at(i + 1, fj, 0) - pos.at(i, fj, 0)) / dt;
            const double vz = (pos.at(i + 1, fj, 2) - pos.at(i, fj, 2)) / dt;
            slide += vx * vx + vz * vz;
            ++slide_count;
        }
    }
    if (!targets.foot_joints.empty()) {
        out.foot = pen / (static_cast<double>(nt) * targets.foot_joints.size());
        if (slide_count > 0) out.foot += slide / static_cast<double>(slide_count);
        out.foot *= kPos2;
    }
    out.total = cfg.w_rec * (out.rot + out.root) + cfg.w_phys * (out.fk + cfg.w_foot * out.foot);
    return out;
}

double lr_at(int step, int total_steps, double base_lr, double warmup_frac) {
    if (total_steps <= 0) return base_lr;
    const int warm = std::max(1, static_cast<int>(std::llround(warmup_frac * total_steps)));
    if (step < warm) return base_lr * static_cast<double>(step + 1) / warm;
    if (total_steps <= warm) return base_lr;
    const double u = static_cast<double>(step - warm) / static_cast<double>(total_steps - warm);
    return base_lr * 0.5 * (1.0 + std::cos(kPi * u));
}

TrainResult train(FunPhase& model, const std::vector<MotionClip>& clips,
                  const std::vector<ClipTargets>& targets, const TrainConfig& cfg, ag::AdamW& opt) {
    if (clips.empty() || clips.size() != targets.size())
        throw Error("train: need a nonempty dataset with matching targets");
    const int t_frames = clips[0].frames();
    const int j = model.skeleton().joint_count();
    for (const auto& c : clips)
        if (c.frames() != t_frames) throw Error("train: clips must share one window length");

    std::vector<int> all_joints(static_cast<std::size_t>(j));
    for (int i = 0; i < j; ++i) all_joints[static_cast<std::size_t>(i)] = i;

    std::ostringstream log;
    log.precision(10);
    log << "step,lr,l_rot,l_root,l_fk,l_foot,total\n";

    TrainResult result;
    std::vector<std::vector<double>> snapshot(model.params().size());

    if (cfg.start_step < 0 || cfg.start_step > cfg.steps) throw Error("train: bad resume step");
    const int stop = cfg.stop_step < 0 ? cfg.steps : std::min(cfg.stop_step, cfg.steps);
    for (int step = cfg.start_step; step < stop; ++step) {
        Rng rng(Rng::derive(cfg.seed, static_cast<std::uint64_t>(step)));
        for (std::size_t i = 0; i < model.params().size(); ++i) snapshot[i] = model.params()[i].value.data();

        // Frame subset shared across the batch; joint subset restricts the means.
        const int nt = std::max(2, static_cast<int>(std::llround(cfg.time_keep * t_frames)));
        std::vector<int> frame_idx(static_cast<std::size_t>(t_frames));
        for (int i = 0; i < t_frames; ++i) frame_idx[static_cast<std::size_t>(i)] = i;
        for (int i = t_frames - 1; i > 0; --i)
            std::swap(frame_idx[static_cast<std::size_t>(i)], frame_idx[rng.integer(static_cast<std::uint64_t>(i + 1))]);
        frame_idx.resize(static_cast<std::size_t>(std::min(nt, t_frames)));
        std::sort(frame_idx.begin(), frame_idx.end());

        const int nj = std::max(1, static_cast<int>(std::llround(cfg.joint_keep * j)));
        std::vector<int> joint_sel(static_cast<std::size_t>(j));
        for (int i = 0; i < j; ++i) joint_sel[static_cast<std::size_t>(i)] = i;
        for (int i = j - 1; i > 0; --i)
            std::swap(joint_sel[static_cast<std::size_t>(i)], joint_sel[rng.integer(static_cast<std::uint64_t>(i + 1))]);
        joint_sel.resize(static_cast<std::size_t>(std::min(nj, j)));
        std::sort(joint_sel.begin(), joint_sel.end());

        ag::Tape tape;
        ag::Tensor total, lrot, lroot, lfk, lfoot;
        for (int bi = 0; bi < cfg.batch; ++bi) {
            const std::size_t ci = rng.integer(clips.size());
            const MotionClip& clip = clips[ci];
            std::vector<double> sel_times(frame_idx.size());
            for (std::size_t i = 0; i < frame_idx.size(); ++i)
                sel_times[i] = clip.times[static_cast<std::size_t>(frame_idx[i])];

            FunPhase::Encoded enc = model.encode_t(clip, &tape);
            FunPhase::Decoded dec = model.decode_t(enc, sel_times, all_joints, &tape);
            FunPhase::LossTensors l = model.loss_t(dec, targets[ci], sel_times, frame_idx, joint_sel, &tape);
            const double w = 1.0 / cfg.batch;
            if (bi == 0) {
                total = ag::scale(l.total, w);
                lrot = ag::scale(l.rot, w);
                lroot = ag::scale(l.root, w);
                lfk = ag::scale(l.fk, w);
                lfoot = ag::scale(l.foot, w);
            } else {
                total = ag::add(total, ag::scale(l.total, w));
                lrot = ag::add(lrot, ag::scale(l.rot, w));
                lroot = ag::add(lroot, ag::scale(l.root, w));
                lfk = ag::add(lfk, ag::scale(l.fk, w));
                lfoot = ag::add(lfoot, ag::scale(l.foot, w));
            }
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
        const double lr = lr_at(step, cfg.steps, cfg.lr, cfg.warmup_frac);
        opt.step(model.params(), lr);
        opt.zero_grad(model.params());
        result.steps_done = step + 1;

        if (step % std::max(1, cfg.log_every) == 0 || step == cfg.steps - 1) {
            log << step << "," << lr << "," << lrot.item() << "," << lroot.item() << "," << lfk.item()
                << "," << lfoot.item() << "," << loss_val << "\n";
        }
    }
    result.log_csv = log.str();
    return result;
}

std::vector<per::PeriodicParams> phase_trajectory(const FunPhase& model, const MotionClip& clip,
                                                  int window) {
    ClipWindowSpec spec;
    spec.window = window;
    spec.stride = 1;
    std::vector<MotionClip> windows = window_clips(clip, spec);
    if (windows.empty()) throw Error("phase_trajectory: clip shorter than one window");
    std::vector<per::PeriodicParams> out;
    out.reserve(windows.size());
    for (const auto& w : windows) out.push_back(model.encode(w));
    return out;
}

}  // namespace phasekit::fp
