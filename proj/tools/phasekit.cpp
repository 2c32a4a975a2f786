// Batch front-end: dataset synthesis, training, encode/decode, diffusion
// sampling, evaluation, and plot emission. Every subcommand is deterministic
// given (inputs, config, seed) and exits nonzero with an "error:" line on
// failure.
#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <mutex>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "phasekit/checkpoint.hpp"
#include "phasekit/diffusion.hpp"
#include "phasekit/funphase.hpp"
#include "phasekit/metrics.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace phasekit;

namespace {

// ---- small utilities --------------------------------------------------------

std::string read_file(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open '" + path.string() + "'");
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open '" + path.string() + "' for writing");
    f << text;
    if (!f) throw Error("write failed for '" + path.string() + "'");
}

void write_bytes(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open '" + path.string() + "' for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open '" + path.string() + "'");
    return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

void ensure_out_dir(const fs::path& out, bool force) {
    if (fs::exists(out) && !force) throw Error("output dir '" + out.string() + "' exists; pass --force to reuse");
    fs::create_directories(out);
}

int thread_budget() {
    const char* env = std::getenv("PHASEKIT_THREADS");
    if (!env) return 1;
    const int n = std::atoi(env);
    return n < 1 ? 1 : n;
}

// Runs fn(i) for i in [0, n) on up to PHASEKIT_THREADS threads.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
    const std::size_t threads = std::min(static_cast<std::size_t>(thread_budget()), n);
    if (threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    std::atomic<bool> failed{false};
    std::string first_error;
    std::mutex err_mu;
    for (std::size_t t = 0; t < threads; ++t) {
        pool.emplace_back([&] {
            for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
                if (failed.load()) return;
                try {
                    fn(i);
                } catch (const std::exception& e) {
                    std::lock_guard<std::mutex> lock(err_mu);
                    if (!failed.exchange(true)) first_error = e.what();
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    if (failed.load()) throw Error(first_error);
}

struct ConfigFile {
    json model;     // optional overrides for the autoencoder config
    json denoiser;  // optional overrides for the denoiser config
};

ConfigFile load_config(const std::string& path) {
    ConfigFile cf;
    if (path.empty()) return cf;
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw Error(std::string("config: invalid JSON: ") + e.what());
    }
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (it.key() == "model") cf.model = it.value();
        else if (it.key() == "denoiser") cf.denoiser = it.value();
        else throw Error("config: unknown key '" + it.key() + "'");
    }
    return cf;
}

std::vector<ManifestEntry> load_manifest(const fs::path& path) {
    std::vector<ManifestEntry> entries = manifest_from_json(read_file(path));
    for (auto& e : entries) {
        const fs::path p(e.path);
        if (p.is_relative()) e.path = (path.parent_path() / p).string();
    }
    if (entries.empty()) throw Error("manifest '" + path.string() + "' is empty");
    return entries;
}

std::vector<int> foot_joint_indices(const Skeleton& skel) {
    std::vector<int> feet;
    for (int i = 0; i < skel.joint_count(); ++i)
        if (skel.joints[static_cast<std::size_t>(i)].name.find("Foot") != std::string::npos) feet.push_back(i);
    if (!feet.empty()) return feet;
    // Fall back to leaf joints.
    std::vector<char> has_child(static_cast<std::size_t>(skel.joint_count()), 0);
    for (const auto& j : skel.joints)
        if (j.parent >= 0) has_child[static_cast<std::size_t>(j.parent)] = 1;
    for (int i = 0; i < skel.joint_count(); ++i)
        if (!has_child[static_cast<std::size_t>(i)]) feet.push_back(i);
    return feet;
}

std::vector<int> parse_keyframes(const std::string& mask, int frames) {
    const std::string prefix = "keyframes:";
    if (mask.rfind(prefix, 0) != 0) throw Error("mask must look like 'keyframes:0,12,24'");
    std::vector<int> keep;
    std::stringstream ss(mask.substr(prefix.size()));
    std::string item;
    while (std::getline(ss, item, ',')) {
        const int idx = std::stoi(item);
        if (idx < 0 || idx >= frames) throw Error("keyframe index out of range");
        keep.push_back(idx);
    }
    if (keep.empty()) throw Error("mask lists no keyframes");
    return keep;
}

std::vector<int> even_keyframes(int count, int frames) {
    std::vector<int> keep;
    for (int i = 0; i < count; ++i)
        keep.push_back(static_cast<int>(std::llround(static_cast<double>(i) * (frames - 1) / std::max(1, count - 1))));
    keep.erase(std::unique(keep.begin(), keep.end()), keep.end());
    return keep;
}

// ---- checkpoint packing -------------------------------------------------------

void pack_optimizer(ckpt::Checkpoint& c, const std::vector<ag::Param>& params, ag::AdamW& opt) {
    if (opt.moment1().empty()) return;
    for (std::size_t i = 0; i < params.size(); ++i) {
        c.tensors.emplace_back("opt.m." + params[i].name,
                               ag::Tensor::from(opt.moment1()[i], params[i].value.shape()));
        c.tensors.emplace_back("opt.v." + params[i].name,
                               ag::Tensor::from(opt.moment2()[i], params[i].value.shape()));
    }
}

void unpack_optimizer(const ckpt::Checkpoint& c, const std::vector<ag::Param>& params, ag::AdamW& opt,
                      std::int64_t opt_step) {
    if (!c.find("opt.m." + params[0].name)) return;
    opt.moment1().resize(params.size());
    opt.moment2().resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        const ag::Tensor* m = c.find("opt.m." + params[i].name);
        const ag::Tensor* v = c.find("opt.v." + params[i].name);
        if (!m || !v) throw Error("checkpoint: incomplete optimizer state");
        opt.moment1()[i] = m->data();
        opt.moment2()[i] = v->data();
    }
    opt.set_step_count(opt_step);
}

void save_ae_checkpoint(const fs::path& path, const fp::FunPhase& model, ag::AdamW& opt,
                        int steps_done, std::uint64_t seed, int window, double rate) {
    ckpt::Checkpoint c;
    json meta;
    meta["kind"] = "funphase";
    meta["model"] = json::parse(model.config().to_json());
    meta["skeleton"] = json::parse(skeleton_to_json(model.skeleton()));
    meta["steps_done"] = steps_done;
    meta["seed"] = seed;
    meta["opt_step"] = opt.step_count();
    meta["window"] = window;
    meta["rate"] = rate;
    c.meta_json = meta.dump();
    for (const auto& p : model.params()) c.tensors.emplace_back(p.name, p.value);
    pack_optimizer(c, model.params(), opt);
    ckpt::save(path.string(), c);
}

struct LoadedAe {
    std::unique_ptr<fp::FunPhase> model;
    json meta;
    ckpt::Checkpoint raw;
};

LoadedAe load_ae_checkpoint(const fs::path& path) {
    LoadedAe out;
    out.raw = ckpt::load(path.string());
    out.meta = json::parse(out.raw.meta_json);
    if (out.meta.value("kind", "") != "funphase") throw Error("'" + path.string() + "' is not an autoencoder checkpoint");
    const fp::ModelConfig cfg = fp::ModelConfig::from_json(out.meta["model"].dump());
    const Skeleton skel = skeleton_from_json(out.meta["skeleton"].dump());
    out.model = std::make_unique<fp::FunPhase>(cfg, skel, 0);
    std::vector<std::pair<std::string, ag::Tensor>> weights;
    for (const auto& [name, t] : out.raw.tensors)
        if (name.rfind("opt.", 0) != 0) weights.emplace_back(name, t);
    out.model->load_params(weights);
    return out;
}

void save_diff_checkpoint(const fs::path& path, const dm::Denoiser& model, ag::AdamW& opt,
                          int steps_done, const dm::Standardizer& stats, const dm::NoiseSchedule& sched,
                          double f_max, double t_sec, std::uint64_t seed) {
    ckpt::Checkpoint c;
    json meta;
    meta["kind"] = "denoiser";
    meta["config"] = json::parse(model.config().to_json());
    meta["steps_done"] = steps_done;
    meta["seed"] = seed;
    meta["opt_step"] = opt.step_count();
    meta["stats"] = {{"mean", stats.mean}, {"std", stats.stddev}};
    meta["schedule"] = {{"steps", sched.steps}, {"beta_min", sched.beta_min}, {"beta_max", sched.beta_max}};
    meta["f_max"] = f_max;
    meta["t_sec"] = t_sec;
    c.meta_json = meta.dump();
    for (const auto& p : model.params()) c.tensors.emplace_back(p.name, p.value);
    pack_optimizer(c, model.params(), opt);
    ckpt::save(path.string(), c);
}

struct LoadedDiff {
    std::unique_ptr<dm::Denoiser> model;
    dm::Standardizer stats;
    dm::NoiseSchedule schedule;
    double f_max = 0.0;
    double t_sec = 1.0;
    json meta;
    ckpt::Checkpoint raw;
};

LoadedDiff load_diff_checkpoint(const fs::path& path) {
    LoadedDiff out;
    out.raw = ckpt::load(path.string());
    out.meta = json::parse(out.raw.meta_json);
    if (out.meta.value("kind", "") != "denoiser") throw Error("'" + path.string() + "' is not a denoiser checkpoint");
    out.model = std::make_unique<dm::Denoiser>(dm::DenoiserConfig::from_json(out.meta["config"].dump()), 0);
    std::vector<std::pair<std::string, ag::Tensor>> weights;
    for (const auto& [name, t] : out.raw.tensors)
        if (name.rfind("opt.", 0) != 0) weights.emplace_back(name, t);
    out.model->load_params(weights);
    for (int k = 0; k < 4; ++k) {
        out.stats.mean[static_cast<std::size_t>(k)] = out.meta["stats"]["mean"][static_cast<std::size_t>(k)].get<double>();
        out.stats.stddev[static_cast<std::size_t>(k)] = out.meta["stats"]["std"][static_cast<std::size_t>(k)].get<double>();
    }
    out.schedule = dm::make_schedule(out.meta["schedule"]["steps"].get<int>(),
                                     out.meta["schedule"]["beta_min"].get<double>(),
                                     out.meta["schedule"]["beta_max"].get<double>());
    out.f_max = out.meta["f_max"].get<double>();
    out.t_sec = out.meta["t_sec"].get<double>();
    return out;
}

// ---- SVG emission --------------------------------------------------------------

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(4);
    os << std::fixed << v;
    return os.str();
}

std::string svg_scatter_line(const std::vector<std::vector<double>>& pts, const std::string& caption) {
    const double w = 640, h = 640, margin = 60;
    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (const auto& p : pts) {
        xmin = std::min(xmin, p[0]);
        xmax = std::max(xmax, p[0]);
        ymin = std::min(ymin, p[1]);
        ymax = std::max(ymax, p[1]);
    }
    const double xr = std::max(xmax - xmin, 1e-12), yr = std::max(ymax - ymin, 1e-12);
    auto px = [&](double x) { return margin + (x - xmin) / xr * (w - 2 * margin); };
    auto py = [&](double y) { return h - margin - (y - ymin) / yr * (h - 2 * margin); };

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<line x1=\"" << margin << "\" y1=\"" << h - margin << "\" x2=\"" << w - margin << "\" y2=\""
       << h - margin << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << margin << "\" y1=\"" << margin << "\" x2=\"" << margin << "\" y2=\"" << h - margin
       << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << w / 2 << "\" y=\"" << h - margin / 3 << "\" text-anchor=\"middle\">PC1 ["
       << fmt(xmin) << ", " << fmt(xmax) << "]</text>\n";
    os << "<text x=\"" << margin / 3 << "\" y=\"" << h / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 "
       << margin / 3 << " " << h / 2 << ")\">PC2 [" << fmt(ymin) << ", " << fmt(ymax) << "]</text>\n";
    os << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"1.5\" points=\"";
    for (const auto& p : pts) os << fmt(px(p[0])) << "," << fmt(py(p[1])) << " ";
    os << "\"/>\n";
    for (const auto& p : pts)
        os << "<circle cx=\"" << fmt(px(p[0])) << "\" cy=\"" << fmt(py(p[1])) << "\" r=\"2.5\" fill=\"crimson\"/>\n";
    os << "<text x=\"" << w / 2 << "\" y=\"" << margin / 2 << "\" text-anchor=\"middle\">" << caption
       << "</text>\n</svg>\n";
    return os.str();
}

// ---- shared pipeline helpers -----------------------------------------------------

struct WindowSet {
    Skeleton skeleton;
    double rate = 60.0;
    int window = 60;
    std::vector<MotionClip> clips;
    std::vector<int> labels;
};

WindowSet load_windows(const fs::path& manifest_path, int window) {
    WindowSet ws;
    ws.window = window;
    const auto entries = load_manifest(manifest_path);
    bool first = true;
    for (const auto& e : entries) {
        auto [skel, clip] = parse_bvh(read_file(e.path));
        if (first) {
            ws.skeleton = skel;
            ws.rate = clip.frame_rate;
            first = false;
        } else if (skel.joint_count() != ws.skeleton.joint_count()) {
            throw Error("manifest clips use different skeletons");
        }
        ClipWindowSpec spec;
        spec.window = window;
        spec.stride = window;
        for (auto& w : window_clips(clip, spec)) {
            ws.clips.push_back(std::move(w));
            ws.labels.push_back(e.class_label);
        }
    }
    if (ws.clips.empty()) throw Error("no windows of length " + std::to_string(window) + " in the dataset");
    return ws;
}

fp::ModelConfig make_model_config(const ConfigFile& cf, const WindowSet& ws) {
    fp::ModelConfig cfg;
    if (!cf.model.is_null()) cfg = fp::ModelConfig::from_json(cf.model.dump());
    cfg.t_sec = ws.window / ws.rate;
    const int max_graph = ws.skeleton.joint_count() - 1;
    if (cfg.graph.mode == enc::GraphPEMode::Laplacian && cfg.graph.dim > max_graph) cfg.graph.dim = max_graph;
    cfg.validate();
    return cfg;
}

// ---- subcommands ---------------------------------------------------------------

struct CommonArgs {
    std::string out;
    std::string config;
    std::uint64_t seed = 0;
    bool force = false;
};

void add_common(CLI::App* cmd, CommonArgs& a) {
    cmd->add_option("--out", a.out, "output directory")->required();
    cmd->add_option("--config", a.config, "JSON config file");
    cmd->add_option("--seed", a.seed, "random seed");
    cmd->add_flag("--force", a.force, "reuse an existing output directory");
}

void cmd_synth(const CommonArgs& a, int num, int frames, double rate, const std::string& tmpl,
               int classes) {
    if (num < 1) throw Error("synth: --num must be >= 1");
    if (classes < 1 || classes > 2) throw Error("synth: 1 or 2 classes supported");
    SynthSpec spec;
    if (tmpl == "chain") spec.skeleton = SkeletonTemplate::Chain;
    else if (tmpl == "biped") spec.skeleton = SkeletonTemplate::Biped;
    else throw Error("synth: --template must be chain or biped");
    ensure_out_dir(a.out, a.force);

    std::vector<ManifestEntry> manifest;
    for (int c = 0; c < classes; ++c) {
        for (int i = 0; i < num; ++i) {
            const std::uint64_t clip_seed = Rng::derive(a.seed, static_cast<std::uint64_t>(c) * num + i);
            auto [skel, clip] = synth_motion(c, spec, frames, rate, clip_seed);
            const std::string name = "clip_c" + std::to_string(c) + "_" + std::to_string(i) + ".bvh";
            write_file(fs::path(a.out) / name, write_bvh(skel, clip));
            manifest.push_back({name, c});
        }
    }
    write_file(fs::path(a.out) / "manifest.json", manifest_to_json(manifest));
    std::cout << "wrote " << manifest.size() << " clips to " << a.out << "\n";
}

void cmd_train_ae(const CommonArgs& a, const std::string& manifest, int window, int steps, int batch,
                  double lr, const std::string& resume) {
    ensure_out_dir(a.out, a.force);
    const ConfigFile cf = load_config(a.config);
    WindowSet ws = load_windows(manifest, window);

    fp::TrainConfig tc;
    tc.steps = steps;
    tc.batch = batch;
    tc.lr = lr;
    tc.seed = a.seed;

    std::unique_ptr<fp::FunPhase> model;
    ag::AdamW opt(tc.opt);
    if (!resume.empty()) {
        LoadedAe ae = load_ae_checkpoint(resume);
        model = std::move(ae.model);
        tc.start_step = ae.meta["steps_done"].get<int>();
        tc.seed = ae.meta["seed"].get<std::uint64_t>();
        unpack_optimizer(ae.raw, model->params(), opt, ae.meta["opt_step"].get<std::int64_t>());
        if (tc.start_step > tc.steps) throw Error("train-ae: checkpoint already past --steps");
    } else {
        const fp::ModelConfig cfg = make_model_config(cf, ws);
        model = std::make_unique<fp::FunPhase>(cfg, ws.skeleton, Rng::derive(a.seed, 0xAE));
    }

    const std::vector<int> feet = foot_joint_indices(model->skeleton());
    std::vector<fp::ClipTargets> targets;
    targets.reserve(ws.clips.size());
    for (const auto& c : ws.clips) targets.push_back(fp::make_targets(c, feet));

    const fp::TrainResult res = fp::train(*model, ws.clips, targets, tc, opt);
    write_file(fs::path(a.out) / "train_ae_log.csv", res.log_csv);
    save_ae_checkpoint(fs::path(a.out) / "ae.ckpt", *model, opt, res.steps_done > 0 ? res.steps_done : tc.start_step,
                       tc.seed, window, ws.rate);
    if (res.aborted) throw Error("train-ae: non-finite loss; last-good checkpoint saved");
    std::cout << "params=" << model->param_count() << " steps=" << res.steps_done
              << " first_loss=" << res.first_loss << " last_loss=" << res.last_loss << "\n";
}

// Encodes every window of every manifest clip with a frozen model.
void cmd_encode(const CommonArgs& a, const std::string& ae_path, const std::string& manifest,
                bool emit_csv) {
    ensure_out_dir(a.out, a.force);
    LoadedAe ae = load_ae_checkpoint(ae_path);
    const int window = ae.meta["window"].get<int>();
    WindowSet ws = load_windows(manifest, window);
    if (ws.skeleton.joint_count() != ae.model->skeleton().joint_count())
        throw Error("encode: manifest skeleton does not match the checkpoint");

    std::vector<std::string> names(ws.clips.size());
    parallel_for(ws.clips.size(), [&](std::size_t i) {
        const per::PeriodicParams p = ae.model->encode(ws.clips[i]);
        const std::string stem = "window_" + std::to_string(i);
        write_bytes(fs::path(a.out) / (stem + ".pkp"), per::params_to_binary(p));
        if (emit_csv) write_file(fs::path(a.out) / (stem + ".csv"), per::params_to_csv(p));
        names[i] = stem + ".pkp";
    });
    std::vector<ManifestEntry> out_manifest;
    for (std::size_t i = 0; i < names.size(); ++i) out_manifest.push_back({names[i], ws.labels[i]});
    write_file(fs::path(a.out) / "params_manifest.json", manifest_to_json(out_manifest));
    std::cout << "encoded " << ws.clips.size() << " windows\n";
}

void cmd_decode(const CommonArgs& a, const std::string& ae_path, const std::vector<std::string>& params,
                double rate, const std::string& joints_csv) {
    if (params.empty()) throw Error("decode: pass at least one --params file");
    if (rate <= 0.0) throw Error("decode: --rate must be positive");
    ensure_out_dir(a.out, a.force);
    LoadedAe ae = load_ae_checkpoint(ae_path);

    std::vector<int> joints;
    if (joints_csv.empty()) {
        for (int i = 0; i < ae.model->skeleton().joint_count(); ++i) joints.push_back(i);
    } else {
        std::stringstream ss(joints_csv);
        std::string name;
        while (std::getline(ss, name, ',')) {
            const int idx = ae.model->skeleton().find_joint(name);
            if (idx < 0) throw Error("decode: unknown joint '" + name + "'");
            joints.push_back(idx);
        }
    }

    parallel_for(params.size(), [&](std::size_t i) {
        const per::PeriodicParams p = per::params_from_binary(read_bytes(params[i]));
        const int frames = std::max(2, static_cast<int>(std::llround(p.t_sec * rate)));
        const MotionClip clip = ae.model->decode_clip(p, frames, rate, joints, {0, 0, 0});
        const std::string stem = fs::path(params[i]).stem().string();
        write_file(fs::path(a.out) / (stem + ".bvh"), write_bvh(ae.model->skeleton(), clip));
        if (!joints_csv.empty()) {
            json side;
            side["decoded_joints"] = json::array();
            for (int j : joints) side["decoded_joints"].push_back(ae.model->skeleton().joints[static_cast<std::size_t>(j)].name);
            side["masked_held_at_rest"] = true;
            write_file(fs::path(a.out) / (stem + ".mask.json"), side.dump(2) + "\n");
        }
    });
    std::cout << "decoded " << params.size() << " params files at " << rate << " Hz\n";
}

void cmd_train_diff(const CommonArgs& a, const std::string& manifest, const std::string& ae_path,
                    int steps, int batch, double lr, int keyframes, const std::string& resume) {
    ensure_out_dir(a.out, a.force);
    const ConfigFile cf = load_config(a.config);
    LoadedAe ae = load_ae_checkpoint(ae_path);
    const int window = ae.meta["window"].get<int>();
    WindowSet ws = load_windows(manifest, window);

    int num_classes = 1;
    for (int l : ws.labels) num_classes = std::max(num_classes, l + 1);

    // Frozen-encoder latents; the optional context encodes a keyframe-masked
    // copy of the same window.
    std::vector<dm::LatentItem> items(ws.clips.size());
    const std::vector<int> keep = keyframes > 0 ? even_keyframes(keyframes, window) : std::vector<int>{};
    parallel_for(ws.clips.size(), [&](std::size_t i) {
        dm::LatentItem item;
        item.params = dm::phase_to_diff(ae.model->encode(ws.clips[i]));
        item.label = ws.labels[i];
        if (!keep.empty())
            item.context_flat = dm::phase_to_diff(ae.model->encode(dm::mask_keyframes(ws.clips[i], keep))).flatten();
        items[i] = std::move(item);
    });

    dm::DiffTrainConfig tc;
    tc.steps = steps;
    tc.batch = batch;
    tc.lr = lr;
    tc.seed = a.seed;

    const dm::NoiseSchedule sched = dm::make_schedule();
    std::unique_ptr<dm::Denoiser> model;
    ag::AdamW opt(tc.opt);
    dm::Standardizer stats;
    if (!resume.empty()) {
        LoadedDiff d = load_diff_checkpoint(resume);
        model = std::move(d.model);
        stats = d.stats;
        tc.start_step = d.meta["steps_done"].get<int>();
        tc.seed = d.meta["seed"].get<std::uint64_t>();
        unpack_optimizer(d.raw, model->params(), opt, d.meta["opt_step"].get<std::int64_t>());
    } else {
        dm::DenoiserConfig dc;
        if (!cf.denoiser.is_null()) dc = dm::DenoiserConfig::from_json(cf.denoiser.dump());
        dc.channels = ae.model->config().channels;
        dc.num_classes = num_classes;
        model = std::make_unique<dm::Denoiser>(dc, Rng::derive(a.seed, 0xD1FF));
        stats = dm::fit_standardizer(items);
    }

    const dm::DiffTrainResult res = dm::train_diffusion(*model, items, stats, sched, tc, opt);
    write_file(fs::path(a.out) / "train_diff_log.csv", res.log_csv);
    save_diff_checkpoint(fs::path(a.out) / "diff.ckpt", *model, opt,
                         res.steps_done > 0 ? res.steps_done : tc.start_step, stats, sched,
                         items[0].params.f_max, items[0].params.t_sec, tc.seed);
    if (res.aborted) throw Error("train-diff: non-finite loss; last-good checkpoint saved");
    std::cout << "params=" << model->param_count() << " steps=" << res.steps_done
              << " first_loss=" << res.first_loss << " last_loss=" << res.last_loss << "\n";
}

void cmd_sample(const CommonArgs& a, const std::string& diff_path, const std::string& ae_path, int num,
                int class_id, int s_steps, double eta, double guidance, const std::string& condition_clip,
                const std::string& mask) {
    if (num < 1) throw Error("sample: --num must be >= 1");
    ensure_out_dir(a.out, a.force);
    LoadedDiff diff = load_diff_checkpoint(diff_path);
    LoadedAe ae = load_ae_checkpoint(ae_path);
    const int window = ae.meta["window"].get<int>();
    const double rate = ae.meta["rate"].get<double>();

    dm::Condition cond;
    cond.label = class_id;
    if (!condition_clip.empty()) {
        auto [skel, clip] = parse_bvh(read_file(condition_clip));
        ClipWindowSpec spec;
        spec.window = window;
        spec.stride = window;
        const auto windows = window_clips(clip, spec);
        if (windows.empty()) throw Error("sample: condition clip shorter than one window");
        std::vector<int> keep = mask.empty() ? even_keyframes(6, window) : parse_keyframes(mask, window);
        cond.context =
            diff.stats.apply(dm::phase_to_diff(ae.model->encode(dm::mask_keyframes(windows[0], keep))).flatten());
    }

    dm::SampleConfig sc;
    sc.steps = s_steps;
    sc.eta = eta;
    sc.guidance = guidance;

    std::vector<int> all_joints(static_cast<std::size_t>(ae.model->skeleton().joint_count()));
    for (std::size_t i = 0; i < all_joints.size(); ++i) all_joints[i] = static_cast<int>(i);

    std::ostringstream manifest;
    std::vector<std::string> lines(static_cast<std::size_t>(num));
    parallel_for(static_cast<std::size_t>(num), [&](std::size_t i) {
        const std::uint64_t sample_seed = Rng::derive(a.seed, i);
        int warnings = 0;
        const dm::DiffParams dp = dm::ddim_sample(*diff.model, cond, diff.stats, diff.schedule, sc,
                                                  sample_seed, diff.f_max, diff.t_sec, &warnings);
        const per::PeriodicParams p = dm::diff_to_phase(dp);
        const std::string stem = "sample_" + std::to_string(i);
        write_bytes(fs::path(a.out) / (stem + ".pkp"), per::params_to_binary(p));
        const MotionClip clip = ae.model->decode_clip(p, window, rate, all_joints, {0, 0, 0});
        write_file(fs::path(a.out) / (stem + ".bvh"), write_bvh(ae.model->skeleton(), clip));
        json line = {{"seed", sample_seed}, {"class", class_id},         {"S", s_steps},
                     {"eta", eta},          {"params", stem + ".pkp"},   {"bvh", stem + ".bvh"},
                     {"clamp_warnings", warnings}};
        lines[i] = line.dump();
    });
    for (const auto& l : lines) manifest << l << "\n";
    write_file(fs::path(a.out) / "samples.jsonl", manifest.str());
    std::cout << "sampled " << num << " clips\n";
}

void cmd_eval(const CommonArgs& a, const std::string& gt_path, const std::string& pred_path) {
    ensure_out_dir(a.out, a.force);
    auto [gt_skel, gt] = parse_bvh(read_file(gt_path));
    auto [pred_skel, pred] = parse_bvh(read_file(pred_path));
    if (gt.frames() != pred.frames()) throw Error("eval: ground truth and prediction frame counts differ");
    if (gt_skel.joint_count() != pred_skel.joint_count()) throw Error("eval: skeletons differ");

    const kin::JointPositions gp = kin::forward_kinematics(gt);
    const kin::JointPositions pp = kin::forward_kinematics(pred);

    // Spectral features: per-joint axis-angle channels plus root velocity.
    auto features = [](const MotionClip& c, const kin::JointPositions&) {
        std::vector<std::vector<double>> f;
        const int t = c.frames();
        for (int j = 0; j < c.joint_count(); ++j) {
            std::vector<double> ax(static_cast<std::size_t>(t)), ay(static_cast<std::size_t>(t)), az(static_cast<std::size_t>(t));
            for (int i = 0; i < t; ++i) {
                const geo::Vec3 aa = geo::matrix_to_axis_angle(geo::rot6d_to_matrix(c.rot(i, j)));
                ax[static_cast<std::size_t>(i)] = aa[0];
                ay[static_cast<std::size_t>(i)] = aa[1];
                az[static_cast<std::size_t>(i)] = aa[2];
            }
            f.push_back(ax);
            f.push_back(ay);
            f.push_back(az);
        }
        for (int k = 0; k < 3; ++k) {
            std::vector<double> v(static_cast<std::size_t>(t), 0.0);
            for (int i = 0; i + 1 < t; ++i)
                v[static_cast<std::size_t>(i)] = (c.root_positions[static_cast<std::size_t>(i + 1)][static_cast<std::size_t>(k)] -
                                                  c.root_positions[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)]) *
                                                 c.frame_rate;
            f.push_back(v);
        }
        return f;
    };

    met::MetricReport report;
    report.frames = gt.frames();
    {
        std::hash<std::string> h;
        report.config_hash = std::to_string(h(gt_path + "|" + pred_path));
    }
    report.add("position_error", met::position_error(gp, pp), "cm");
    report.add("orientation_error", met::orientation_error(gt.rotations, pred.rotations), "rad");
    report.add("npss", met::npss(features(gt, gp), features(pred, pp)), "emd");
    const std::vector<int> feet = foot_joint_indices(pred_skel);
    const fp::ClipTargets pred_targets = fp::make_targets(pred, feet);
    const kin::SlidingResult slide =
        kin::foot_sliding_penalty(pred_targets.positions, feet, pred_targets.contacts, pred.frame_rate);
    report.add("foot_sliding", slide.value, slide.no_contact ? "cm/s (no contacts)" : "cm/s");
    report.add("foot_penetration", kin::foot_penetration_penalty(pp, feet), "cm");
    report.add("acl", met::acl(pp, pred.frame_rate), "cm/s^2");
    report.add("coherence", met::coherence_proxy(pp, pred.frame_rate), "lag-1 autocorr", true);

    write_file(fs::path(a.out) / "report.csv", report.to_csv());
    write_file(fs::path(a.out) / "report.json", report.to_json());
    std::cout << report.to_csv();
}

void cmd_plot_phase(const CommonArgs& a, const std::string& ae_path, const std::string& input, int k) {
    if (k != 2 && k != 3) throw Error("plot-phase: -k must be 2 or 3");
    ensure_out_dir(a.out, a.force);
    LoadedAe ae = load_ae_checkpoint(ae_path);
    const int window = ae.meta["window"].get<int>();
    auto [skel, clip] = parse_bvh(read_file(input));
    const auto traj = fp::phase_trajectory(*ae.model, clip, window);

    std::vector<std::vector<double>> points;
    points.reserve(traj.size());
    for (const auto& p : traj) points.push_back(per::phase_manifold(p));
    const met::PcaResult pca = met::pca_project(points, k);

    std::ostringstream caption;
    caption.precision(3);
    caption << "phase trajectory, explained variance:";
    for (double v : pca.explained_variance) caption << " " << v;
    write_file(fs::path(a.out) / "phase.svg", svg_scatter_line(pca.coords, caption.str()));
    std::cout << "plotted " << points.size() << " windows\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"periodic motion autoencoder and latent diffusion toolkit"};
    app.require_subcommand(1);

    CommonArgs synth_a, tae_a, tdf_a, enc_a, dec_a, smp_a, evl_a, plt_a;

    auto* synth = app.add_subcommand("synth", "generate synthetic BVH clips and a manifest");
    add_common(synth, synth_a);
    int synth_num = 4, synth_frames = 60, synth_classes = 2;
    double synth_rate = 60.0;
    std::string synth_tmpl = "chain";
    synth->add_option("--num", synth_num, "clips per class");
    synth->add_option("--frames", synth_frames, "frames per clip");
    synth->add_option("--rate", synth_rate, "frame rate (Hz)");
    synth->add_option("--template", synth_tmpl, "chain or biped");
    synth->add_option("--classes", synth_classes, "class count (1 or 2)");

    auto* tae = app.add_subcommand("train-ae", "train the autoencoder");
    add_common(tae, tae_a);
    std::string tae_manifest, tae_resume;
    int tae_window = 60, tae_steps = 2000, tae_batch = 4;
    double tae_lr = 1e-4;
    tae->add_option("--manifest", tae_manifest, "dataset manifest")->required();
    tae->add_option("--window", tae_window, "window length in frames");
    tae->add_option("--steps", tae_steps, "total training steps");
    tae->add_option("--batch", tae_batch, "windows per step");
    tae->add_option("--lr", tae_lr, "peak learning rate");
    tae->add_option("--resume", tae_resume, "checkpoint to continue from");

    auto* tdf = app.add_subcommand("train-diff", "train the latent denoiser");
    add_common(tdf, tdf_a);
    std::string tdf_manifest, tdf_ae, tdf_resume;
    int tdf_steps = 3000, tdf_batch = 8, tdf_keyframes = 6;
    double tdf_lr = 1e-4;
    tdf->add_option("--manifest", tdf_manifest, "dataset manifest")->required();
    tdf->add_option("--ae", tdf_ae, "autoencoder checkpoint")->required();
    tdf->add_option("--steps", tdf_steps, "total training steps");
    tdf->add_option("--batch", tdf_batch, "latents per step");
    tdf->add_option("--lr", tdf_lr, "learning rate");
    tdf->add_option("--keyframes", tdf_keyframes, "keyframes per window for context latents (0 = none)");
    tdf->add_option("--resume", tdf_resume, "checkpoint to continue from");

    auto* enc = app.add_subcommand("encode", "encode windows to periodic params");
    add_common(enc, enc_a);
    std::string enc_ae, enc_manifest;
    bool enc_csv = false;
    enc->add_option("--ae", enc_ae, "autoencoder checkpoint")->required();
    enc->add_option("--manifest", enc_manifest, "dataset manifest")->required();
    enc->add_flag("--csv", enc_csv, "also emit CSV params");

    auto* dec = app.add_subcommand("decode", "decode params files to BVH");
    add_common(dec, dec_a);
    std::string dec_ae, dec_joints;
    std::vector<std::string> dec_params;
    double dec_rate = 60.0;
    dec->add_option("--ae", dec_ae, "autoencoder checkpoint")->required();
    dec->add_option("--params", dec_params, "params files (.pkp)")->required();
    dec->add_option("--rate", dec_rate, "output frame rate (Hz)");
    dec->add_option("--joints", dec_joints, "comma-separated joint subset");

    auto* smp = app.add_subcommand("sample", "draw samples from the trained denoiser");
    add_common(smp, smp_a);
    std::string smp_diff, smp_ae, smp_cond, smp_mask;
    int smp_num = 10, smp_class = 0, smp_s = 900;
    double smp_eta = 1.0, smp_guidance = 1.0;
    smp->add_option("--diff", smp_diff, "denoiser checkpoint")->required();
    smp->add_option("--ae", smp_ae, "autoencoder checkpoint")->required();
    smp->add_option("--num", smp_num, "sample count");
    smp->add_option("--class", smp_class, "class label (-1 = unconditional)");
    smp->add_option("--steps", smp_s, "sampling steps S");
    smp->add_option("--eta", smp_eta, "stochasticity (0 = DDIM, 1 = DDPM)");
    smp->add_option("--guidance", smp_guidance, "classifier-free guidance scale");
    smp->add_option("--condition-clip", smp_cond, "BVH clip supplying keyframe context");
    smp->add_option("--mask", smp_mask, "keyframes:i,j,... (with --condition-clip)");

    auto* evl = app.add_subcommand("eval", "metric report for prediction vs ground truth");
    add_common(evl, evl_a);
    std::string evl_gt, evl_pred;
    evl->add_option("--gt", evl_gt, "ground-truth BVH")->required();
    evl->add_option("--pred", evl_pred, "predicted BVH")->required();

    auto* plt = app.add_subcommand("plot-phase", "SVG of the PCA-projected phase trajectory");
    add_common(plt, plt_a);
    std::string plt_ae, plt_input;
    int plt_k = 2;
    plt->add_option("--ae", plt_ae, "autoencoder checkpoint")->required();
    plt->add_option("--input", plt_input, "BVH clip")->required();
    plt->add_option("-k", plt_k, "projection dimension (2 or 3)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) cmd_synth(synth_a, synth_num, synth_frames, synth_rate, synth_tmpl, synth_classes);
        else if (tae->parsed()) cmd_train_ae(tae_a, tae_manifest, tae_window, tae_steps, tae_batch, tae_lr, tae_resume);
        else if (tdf->parsed()) cmd_train_diff(tdf_a, tdf_manifest, tdf_ae, tdf_steps, tdf_batch, tdf_lr, tdf_keyframes, tdf_resume);
        else if (enc->parsed()) cmd_encode(enc_a, enc_ae, enc_manifest, enc_csv);
        else if (dec->parsed()) cmd_decode(dec_a, dec_ae, dec_params, dec_rate, dec_joints);
        else if (smp->parsed()) cmd_sample(smp_a, smp_diff, smp_ae, smp_num, smp_class, smp_s, smp_eta, smp_guidance, smp_cond, smp_mask);
        else if (evl->parsed()) cmd_eval(evl_a, evl_gt, evl_pred);
        else if (plt->parsed()) cmd_plot_phase(plt_a, plt_ae, plt_input, plt_k);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
