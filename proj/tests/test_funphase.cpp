#include <doctest.h>

#include <cmath>
#include <vector>

#include "../tests/helpers.hpp"
#include "phasekit/funphase.hpp"

using namespace phasekit;

namespace {

fp::ModelConfig tiny_config() {
    fp::ModelConfig cfg;
    cfg.channels = 4;
    cfg.d_latent = 8;
    cfg.heads = 2;
    cfg.dec_blocks = 1;
    cfg.conv_kernel = 3;
    cfg.joints = {4, 16, 1};
    cfg.root = {2, 8, 1};
    cfg.time_freqs = 3;
    cfg.graph.dim = 2;
    cfg.t_sec = 0.5;
    return cfg;
}

std::pair<Skeleton, MotionClip> tiny_clip(std::uint64_t seed, int frames = 8) {
    SynthSpec spec;
    spec.chain_joints = 4;
    return synth_motion(static_cast<int>(seed % 2), spec, frames, 16.0, seed);
}

std::vector<int> foot_of(const Skeleton& s) {
    std::vector<int> feet;
    for (int i = 0; i < s.joint_count(); ++i)
        if (s.joints[static_cast<std::size_t>(i)].name.find("Foot") != std::string::npos) feet.push_back(i);
    return feet;
}

std::vector<int> all_ints(int n) {
    std::vector<int> v(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(i)] = i;
    return v;
}

}  // namespace

TEST_SUITE("funphase") {

TEST_CASE("config json round trip and validation") {
    fp::ModelConfig cfg = tiny_config();
    const fp::ModelConfig back = fp::ModelConfig::from_json(cfg.to_json());
    CHECK(back.channels == cfg.channels);
    CHECK(back.d_latent == cfg.d_latent);
    CHECK(back.joints.embed == cfg.joints.embed);
    CHECK(back.t_sec == cfg.t_sec);
    CHECK(back.f_max() == doctest::Approx(cfg.d_latent / (2.0 * cfg.t_sec)));
    CHECK_THROWS_AS(fp::ModelConfig::from_json("{\"chnnels\":4}"), Error);
    cfg.d_latent = 7;  // must be even
    CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("make_targets anchors x/z at frame zero and keeps y absolute") {
    auto [skel, clip] = tiny_clip(1);
    const auto targets = fp::make_targets(clip, foot_of(skel));
    CHECK(targets.root_rel[0][0] == 0.0);
    CHECK(targets.root_rel[0][2] == 0.0);
    CHECK(targets.root_rel[0][1] == clip.root_positions[0][1]);
    for (int t = 1; t < clip.frames(); ++t) {
        CHECK(targets.root_rel[static_cast<std::size_t>(t)][0] ==
              doctest::Approx(clip.root_positions[static_cast<std::size_t>(t)][0] - clip.root_positions[0][0]));
        CHECK(targets.root_rel[static_cast<std::size_t>(t)][1] ==
              doctest::Approx(clip.root_positions[static_cast<std::size_t>(t)][1]));
    }
    CHECK(targets.contacts.frames == clip.frames());
    CHECK(static_cast<int>(targets.rot9.size()) == clip.frames() * skel.joint_count() * 9);
}

TEST_CASE("parameter budget of the default configuration stays under 200k") {
    SynthSpec spec;
    auto [skel, clip] = synth_motion(0, spec, 4, 60.0, 3);
    fp::ModelConfig cfg;  // defaults
    fp::FunPhase model(cfg, skel, 1);
    CHECK(model.param_count() < 200000);
    CHECK(model.param_count() > 100000);
}

TEST_CASE("encode is deterministic and respects parameter invariants") {
    auto [skel, clip] = tiny_clip(2);
    fp::FunPhase model(tiny_config(), skel, 42);
    const per::PeriodicParams p = model.encode(clip);
    const per::PeriodicParams q = model.encode(clip);
    p.validate();
    CHECK(p.channels() == 4);
    CHECK(p.f_max == doctest::Approx(8.0 / (2.0 * 0.5)));
    CHECK(p.s == q.s);
    CHECK(p.a == q.a);
    CHECK(p.f == q.f);
    CHECK(p.b == q.b);

    // Different seeds give different encoders.
    fp::FunPhase other(tiny_config(), skel, 43);
    const per::PeriodicParams r = other.encode(clip);
    CHECK(p.s != r.s);
}

TEST_CASE("bottleneck convolution is circular-shift equivariant") {
    auto [skel, clip] = tiny_clip(3);
    const fp::ModelConfig cfg = tiny_config();
    fp::FunPhase model(cfg, skel, 7);
    Rng rng(600);
    const int n = cfg.d_latent;
    // The conv consumes the concatenated joint and root token latents, so the
    // input row count comes from the weight tensor, not `channels`.
    std::int64_t cin = 0;
    for (const auto& p : model.params())
        if (p.name == "bottleneck.conv.w") cin = p.value.dim(1);
    REQUIRE(cin > 0);
    ag::Tensor x = ag::Tensor::randn({cin, n}, rng);
    const ag::Tensor y = model.circular_bottleneck(x, nullptr);

    std::vector<double> shifted(x.data().size());
    const int sh = 3;
    for (int c = 0; c < static_cast<int>(cin); ++c)
        for (int i = 0; i < n; ++i)
            shifted[static_cast<std::size_t>(c * n + (i + sh) % n)] = x.data()[static_cast<std::size_t>(c * n + i)];
    const ag::Tensor ys = model.circular_bottleneck(ag::Tensor::from(shifted, x.shape()), nullptr);
    for (int c = 0; c < static_cast<int>(y.dim(0)); ++c)
        for (int i = 0; i < n; ++i)
            CHECK(ys.data()[static_cast<std::size_t>(c * n + (i + sh) % n)] ==
                  doctest::Approx(y.data()[static_cast<std::size_t>(c * n + i)]).epsilon(1e-10));
}

TEST_CASE("decoding a joint subset matches the corresponding slice of a full decode") {
    auto [skel, clip] = tiny_clip(4);
    fp::FunPhase model(tiny_config(), skel, 11);
    const per::PeriodicParams p = model.encode(clip);
    const std::vector<double> times = {0.0, 0.3, 0.85};
    const int J = skel.joint_count();

    const fp::FunPhase::Decoded full = model.decode_params(p, times, all_ints(J));
    const std::vector<int> subset = {2, 0};
    const fp::FunPhase::Decoded part = model.decode_params(p, times, subset);
    REQUIRE(part.rot6d.dim(0) == static_cast<std::int64_t>(times.size() * subset.size()));
    for (std::size_t t = 0; t < times.size(); ++t)
        for (std::size_t sj = 0; sj < subset.size(); ++sj)
            for (int k = 0; k < 6; ++k) {
                const double got = part.rot6d.data()[(t * subset.size() + sj) * 6 + static_cast<std::size_t>(k)];
                const double want = full.rot6d.data()[(t * static_cast<std::size_t>(J) +
                                                       static_cast<std::size_t>(subset[sj])) * 6 + static_cast<std::size_t>(k)];
                CHECK(got == doctest::Approx(want).epsilon(1e-9));
            }
    for (std::size_t i = 0; i < part.root.data().size(); ++i)
        CHECK(part.root.data()[i] == doctest::Approx(full.root.data()[i]).epsilon(1e-12));
}

TEST_CASE("decode_clip holds unqueried joints at the rest pose and applies the anchor") {
    auto [skel, clip] = tiny_clip(5);
    fp::FunPhase model(tiny_config(), skel, 13);
    const per::PeriodicParams p = model.encode(clip);
    const geo::Vec3 anchor = {10.0, 0.0, -5.0};
    const MotionClip out = model.decode_clip(p, 6, 12.0, {0, 1}, anchor);
    REQUIRE(out.frames() == 6);
    for (int t = 0; t < 6; ++t)
        for (int j = 2; j < skel.joint_count(); ++j) {
            const geo::Mat3 m = geo::rot6d_to_matrix(out.rot(t, j));
            for (int k = 0; k < 9; ++k)
                CHECK(m[static_cast<std::size_t>(k)] == doctest::Approx(geo::identity3()[static_cast<std::size_t>(k)]).epsilon(1e-12));
        }
    // Re-anchoring: frame 0 x/z sit exactly at the anchor.
    CHECK(out.root_positions[0][0] == doctest::Approx(anchor[0]).epsilon(1e-9));
    CHECK(out.root_positions[0][2] == doctest::Approx(anchor[2]).epsilon(1e-9));
    // Every decoded rotation is a valid rotation matrix.
    out.validate();
}

TEST_CASE("tensor loss matches the plain-number loss oracle to 1e-10") {
    auto [skel, clip] = tiny_clip(6);
    const fp::ModelConfig cfg = tiny_config();
    fp::FunPhase model(cfg, skel, 17);
    const auto targets = fp::make_targets(clip, foot_of(skel));
    const int T = clip.frames(), J = skel.joint_count();

    ag::Tape tape;
    const auto enc = model.encode_t(clip, &tape);
    const auto dec = model.decode_t(enc, clip.times, all_ints(J), &tape);
    const auto loss = model.loss_t(dec, targets, clip.times, all_ints(T), all_ints(J), &tape);

    std::vector<geo::Rot6d> pred_rots(static_cast<std::size_t>(T * J));
    for (int i = 0; i < T * J; ++i)
        for (int k = 0; k < 6; ++k)
            pred_rots[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] =
                dec.rot6d.data()[static_cast<std::size_t>(i * 6 + k)];
    std::vector<geo::Vec3> pred_root(static_cast<std::size_t>(T));
    for (int t = 0; t < T; ++t)
        for (int k = 0; k < 3; ++k)
            pred_root[static_cast<std::size_t>(t)][static_cast<std::size_t>(k)] =
                dec.root.data()[static_cast<std::size_t>(t * 3 + k)];

    const fp::LossComponents want = fp::loss_components(targets, skel, pred_rots, pred_root, clip.times, cfg);
    CHECK(std::abs(loss.rot.item() - want.rot) < 1e-10);
    CHECK(std::abs(loss.root.item() - want.root) < 1e-10);
    CHECK(std::abs(loss.fk.item() - want.fk) < 1e-10);
    CHECK(std::abs(loss.foot.item() - want.foot) < 1e-10);
    CHECK(std::abs(loss.total.item() - want.total) < 1e-10);
    // The composite weighting is exactly w_rec*(rot+root) + w_phys*(fk + w_foot*foot).
    const double recombined = cfg.w_rec * (want.rot + want.root) + cfg.w_phys * (want.fk + cfg.w_foot * want.foot);
    CHECK(std::abs(want.total - recombined) < 1e-12);
}

TEST_CASE("a perturbed reconstruction scores strictly worse") {
    auto [skel, clip] = tiny_clip(7);
    const fp::ModelConfig cfg = tiny_config();
    const auto targets = fp::make_targets(clip, foot_of(skel));
    const int T = clip.frames(), J = skel.joint_count();

    // Ground truth reproduced exactly: only the clamp floor remains in rot.
    std::vector<geo::Rot6d> gt_rots = clip.rotations;
    std::vector<geo::Vec3> gt_root = targets.root_rel;
    const fp::LossComponents perfect = fp::loss_components(targets, skel, gt_rots, gt_root, clip.times, cfg);
    CHECK(perfect.root < 1e-18);
    CHECK(perfect.fk < 1e-18);
    CHECK(perfect.rot < 1e-3);  // arccos clamp keeps this near zero, not exact

    std::vector<geo::Rot6d> bad = gt_rots;
    const geo::Mat3 bump = geo::axis_angle_to_matrix({0, 0, 1}, 0.5);
    for (auto& r : bad) r = geo::matrix_to_rot6d(geo::matmul(bump, geo::rot6d_to_matrix(r)));
    const fp::LossComponents worse = fp::loss_components(targets, skel, bad, gt_root, clip.times, cfg);
    CHECK(worse.rot > perfect.rot + 0.4);
    CHECK(worse.total > perfect.total);
}

TEST_CASE("end-to-end gradients through encoder, bottleneck, decoder, and loss") {
    auto [skel, clip] = tiny_clip(8, 6);
    const fp::ModelConfig cfg = tiny_config();
    fp::FunPhase model(cfg, skel, 23);
    const auto targets = fp::make_targets(clip, foot_of(skel));
    const int J = skel.joint_count();
    const std::vector<int> frames = all_ints(clip.frames());
    const std::vector<int> joints = all_ints(J);

    auto loss_value = [&](ag::Tape* tape) {
        const auto enc = model.encode_t(clip, tape);
        const auto dec = model.decode_t(enc, clip.times, joints, tape);
        return model.loss_t(dec, targets, clip.times, frames, joints, tape).total;
    };

    // Check a spread of parameter tensors end to end; every element of each.
    const std::vector<std::string> picked = {"phase.b", "enc.joints.block0.attn.q.b", "dec.root.head.b",
                                             "bottleneck.conv.b", "enc.root.block0.fc1.b"};
    double worst = 0.0;
    int checked = 0;
    for (auto& p : model.params()) {
        bool want = false;
        for (const auto& name : picked)
            if (p.name == name) want = true;
        if (!want) continue;
        ag::Tape tape;
        ag::Tensor total = loss_value(&tape);
        tape.backward(total);
        const std::vector<double> g = p.value.node->grad.empty()
                                          ? std::vector<double>(p.value.data().size(), 0.0)
                                          : p.value.node->grad;
        for (auto& q : model.params()) q.value.node->grad.clear();
        const double h = 1e-5;
        for (std::size_t i = 0; i < p.value.data().size(); ++i) {
            const double saved = p.value.data()[i];
            p.value.data()[i] = saved + h;
            const double up = loss_value(nullptr).item();
            p.value.data()[i] = saved - h;
            const double down = loss_value(nullptr).item();
            p.value.data()[i] = saved;
            // The 1e-6 floor keeps central-difference round-off (~1e-11 at
            // this loss scale) from dominating elements whose true gradient
            // is itself at the noise floor.
            const double fd = (up - down) / (2 * h);
            const double scale = std::max({std::abs(fd), std::abs(g[i]), 1e-6});
            worst = std::max(worst, std::abs(fd - g[i]) / scale);
            ++checked;
        }
    }
    CHECK(checked > 10);
    CHECK(worst < 1e-3);
}

TEST_CASE("learning rate schedule: linear warmup then cosine to zero") {
    const int total = 1000;
    const double base = 2e-4;
    CHECK(fp::lr_at(0, total, base, 0.05) < base * 0.05);
    CHECK(fp::lr_at(50, total, base, 0.05) == doctest::Approx(base));
    CHECK(fp::lr_at(total, total, base, 0.05) == doctest::Approx(0.0).epsilon(1e-12));
    // Cosine midpoint between warmup end and total.
    const double mid = fp::lr_at(525, total, base, 0.05);
    CHECK(mid == doctest::Approx(base * 0.5).epsilon(1e-6));
    // Monotone decreasing after warmup.
    double prev = fp::lr_at(50, total, base, 0.05);
    for (int s = 51; s <= total; s += 7) {
        const double cur = fp::lr_at(s, total, base, 0.05);
        CHECK(cur <= prev + 1e-15);
        prev = cur;
    }
}

TEST_CASE("training is deterministic, resumable, and frozen at lr zero") {
    auto [skel, clip] = tiny_clip(9, 8);
    const fp::ModelConfig cfg = tiny_config();
    const std::vector<MotionClip> clips = {clip};
    const std::vector<fp::ClipTargets> targets = {fp::make_targets(clip, foot_of(skel))};

    fp::TrainConfig tc;
    tc.steps = 6;
    tc.batch = 1;
    tc.lr = 1e-3;
    tc.seed = 5;
    tc.log_every = 1;

    fp::FunPhase a(cfg, skel, 31);
    ag::AdamW oa(tc.opt);
    const auto ra = fp::train(a, clips, targets, tc, oa);
    CHECK(!ra.aborted);
    CHECK(ra.steps_done == 6);

    fp::FunPhase b(cfg, skel, 31);
    ag::AdamW ob(tc.opt);
    const auto rb = fp::train(b, clips, targets, tc, ob);
    CHECK(ra.log_csv == rb.log_csv);
    for (std::size_t p = 0; p < a.params().size(); ++p)
        CHECK(a.params()[p].value.data() == b.params()[p].value.data());

    // Resume: pausing at step 3 and continuing equals 6 straight through.
    // The paused segment keeps the full 6-step lr horizon via stop_step.
    fp::FunPhase c(cfg, skel, 31);
    ag::AdamW oc(tc.opt);
    fp::TrainConfig half = tc;
    half.stop_step = 3;
    const auto rhalf = fp::train(c, clips, targets, half, oc);
    CHECK(rhalf.steps_done == 3);
    fp::TrainConfig rest = tc;
    rest.start_step = 3;
    fp::train(c, clips, targets, rest, oc);
    for (std::size_t p = 0; p < a.params().size(); ++p)
        for (std::size_t i = 0; i < a.params()[p].value.data().size(); ++i)
            CHECK(a.params()[p].value.data()[i] ==
                  doctest::Approx(c.params()[p].value.data()[i]).epsilon(1e-14));

    // lr = 0 leaves the model untouched.
    fp::FunPhase d(cfg, skel, 31);
    fp::FunPhase fresh(cfg, skel, 31);
    ag::AdamW od(tc.opt);
    fp::TrainConfig zero = tc;
    zero.lr = 0.0;
    zero.steps = 2;
    fp::train(d, clips, targets, zero, od);
    for (std::size_t p = 0; p < d.params().size(); ++p)
        CHECK(d.params()[p].value.data() == fresh.params()[p].value.data());
}

TEST_CASE("phase trajectory slides one frame at a time") {
    auto [skel, clip] = tiny_clip(10, 14);
    fp::FunPhase model(tiny_config(), skel, 37);
    const auto traj = fp::phase_trajectory(model, clip, 8);
    CHECK(static_cast<int>(traj.size()) == 14 - 8 + 1);
    for (const auto& p : traj) p.validate();
    auto [skel2, short_clip] = tiny_clip(10, 5);
    CHECK_THROWS_AS(fp::phase_trajectory(model, short_clip, 8), Error);
}

TEST_CASE("load_params restores an identical model and rejects mismatches") {
    auto [skel, clip] = tiny_clip(11);
    fp::FunPhase a(tiny_config(), skel, 41);
    fp::FunPhase b(tiny_config(), skel, 99);
    std::vector<std::pair<std::string, ag::Tensor>> named;
    for (const auto& p : a.params()) named.emplace_back(p.name, p.value);
    b.load_params(named);
    const per::PeriodicParams pa = a.encode(clip);
    const per::PeriodicParams pb = b.encode(clip);
    CHECK(pa.s == pb.s);
    CHECK(pa.a == pb.a);
    named.pop_back();
    CHECK_THROWS_AS(b.load_params(named), Error);
}

}  // TEST_SUITE
