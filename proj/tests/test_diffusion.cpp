#include <doctest.h>

#include <cmath>
#include <vector>

#include "../tests/helpers.hpp"
#include "phasekit/diffusion.hpp"

using namespace phasekit;

namespace {

per::PeriodicParams random_params(Rng& rng, int channels, double f_max, double t_sec) {
    per::PeriodicParams p;
    p.t_sec = t_sec;
    p.f_max = f_max;
    for (int c = 0; c < channels; ++c) {
        p.s.push_back(rng.uniform(0.0, 1.0 - 1e-9));
        p.a.push_back(2e-3 + std::abs(rng.normal(0.0, 1.5)));
        p.f.push_back(rng.uniform(0.0, f_max));
        p.b.push_back(rng.normal(0.0, 2.0));
    }
    return p;
}

}  // namespace

TEST_SUITE("diffusion") {

TEST_CASE("coordinate change round trips 10000 random parameter sets to 1e-6") {
    Rng rng(300);
    double worst = 0.0;
    for (int it = 0; it < 10000; ++it) {
        const per::PeriodicParams p = random_params(rng, 4, 8.0, 1.0);
        const per::PeriodicParams q = dm::diff_to_phase(dm::phase_to_diff(p));
        for (int c = 0; c < 4; ++c) {
            // Phase is circular: compare modulo 1.
            double ds = std::abs(p.s[static_cast<std::size_t>(c)] - q.s[static_cast<std::size_t>(c)]);
            ds = std::min(ds, 1.0 - ds);
            worst = std::max(worst, ds * p.a[static_cast<std::size_t>(c)]);  // scale-aware: phase error matters via the manifold
            worst = std::max(worst, std::abs(p.a[static_cast<std::size_t>(c)] - q.a[static_cast<std::size_t>(c)]));
            worst = std::max(worst, std::abs(p.f[static_cast<std::size_t>(c)] - q.f[static_cast<std::size_t>(c)]));
            worst = std::max(worst, std::abs(p.b[static_cast<std::size_t>(c)] - q.b[static_cast<std::size_t>(c)]));
        }
    }
    CHECK(worst < 1e-6);
}

TEST_CASE("any Gaussian point maps to valid periodic parameters, 100000 draws") {
    Rng rng(301);
    for (int it = 0; it < 100000; ++it) {
        dm::DiffParams dp;
        dp.f_max = 6.0;
        dp.t_sec = 1.0;
        for (int c = 0; c < 2; ++c) {
            dp.a_cos.push_back(rng.normal(0.0, 3.0));
            dp.a_sin.push_back(rng.normal(0.0, 3.0));
            dp.f_probit.push_back(rng.normal(0.0, 3.0));
            dp.b.push_back(rng.normal(0.0, 3.0));
        }
        const per::PeriodicParams p = dm::diff_to_phase(dp);
        p.validate();  // throws on any invariant violation
    }
    CHECK(true);
}

TEST_CASE("flatten and from_flat are inverse") {
    Rng rng(302);
    const per::PeriodicParams p = random_params(rng, 5, 4.0, 2.0);
    const dm::DiffParams dp = dm::phase_to_diff(p);
    const std::vector<double> flat = dp.flatten();
    REQUIRE(flat.size() == 20);
    const dm::DiffParams back = dm::DiffParams::from_flat(flat, dp.f_max, dp.t_sec);
    for (int c = 0; c < 5; ++c) {
        CHECK(back.a_cos[static_cast<std::size_t>(c)] == dp.a_cos[static_cast<std::size_t>(c)]);
        CHECK(back.a_sin[static_cast<std::size_t>(c)] == dp.a_sin[static_cast<std::size_t>(c)]);
        CHECK(back.f_probit[static_cast<std::size_t>(c)] == dp.f_probit[static_cast<std::size_t>(c)]);
        CHECK(back.b[static_cast<std::size_t>(c)] == dp.b[static_cast<std::size_t>(c)]);
    }
    // Row-major (channel, component) layout.
    CHECK(flat[0] == dp.a_cos[0]);
    CHECK(flat[1] == dp.a_sin[0]);
    CHECK(flat[2] == dp.f_probit[0]);
    CHECK(flat[3] == dp.b[0]);
    CHECK(flat[4] == dp.a_cos[1]);
}

TEST_CASE("noise schedule matches the linear formula with sentinel index 0") {
    const dm::NoiseSchedule s = dm::make_schedule(1000, 1e-4, 0.02);
    REQUIRE(static_cast<int>(s.beta.size()) == 1001);
    CHECK(s.beta[0] == 0.0);
    CHECK(s.alpha_bar[0] == 1.0);
    double prod = 1.0;
    for (int t = 1; t <= 1000; ++t) {
        const double want = 1e-4 + (static_cast<double>(t) / 1000.0) * (0.02 - 1e-4);
        CHECK(s.beta[static_cast<std::size_t>(t)] == doctest::Approx(want).epsilon(1e-15));
        CHECK(s.alpha[static_cast<std::size_t>(t)] == doctest::Approx(1.0 - want).epsilon(1e-15));
        prod *= 1.0 - want;
        CHECK(s.alpha_bar[static_cast<std::size_t>(t)] == doctest::Approx(prod).epsilon(1e-12));
    }
    CHECK(s.alpha_bar[1000] < 1e-3);  // nearly pure noise at the end
}

TEST_CASE("v parameterization recovers z0 and eps exactly at every step") {
    const dm::NoiseSchedule s = dm::make_schedule();
    Rng rng(303);
    std::vector<double> z0(8), eps(8);
    for (auto& v : z0) v = rng.normal();
    for (auto& v : eps) v = rng.normal();
    for (int t = 1; t <= 1000; ++t) {
        const std::vector<double> zt = dm::q_sample(z0, t, eps, s);
        const std::vector<double> v = dm::v_target(z0, eps, t, s);
        const auto [z0h, epsh] = dm::recover(zt, v, t, s);
        for (int i = 0; i < 8; ++i) {
            CHECK(std::abs(z0h[static_cast<std::size_t>(i)] - z0[static_cast<std::size_t>(i)]) < 1e-12);
            CHECK(std::abs(epsh[static_cast<std::size_t>(i)] - eps[static_cast<std::size_t>(i)]) < 1e-12);
        }
    }
}

TEST_CASE("q_sample interpolates between signal and noise") {
    const dm::NoiseSchedule s = dm::make_schedule();
    const std::vector<double> z0 = {2.0};
    const std::vector<double> eps = {-1.0};
    const std::vector<double> z1 = dm::q_sample(z0, 1, eps, s);
    CHECK(z1[0] == doctest::Approx(std::sqrt(s.alpha_bar[1]) * 2.0 - std::sqrt(1.0 - s.alpha_bar[1])).epsilon(1e-14));
}

TEST_CASE("min-SNR weight equals min(alpha_bar/(1-alpha_bar), gamma) for every t") {
    const dm::NoiseSchedule s = dm::make_schedule();
    for (int t = 1; t <= 1000; ++t) {
        const double snr = s.alpha_bar[static_cast<std::size_t>(t)] / (1.0 - s.alpha_bar[static_cast<std::size_t>(t)]);
        CHECK(dm::min_snr_weight(t, s, 5.0) == doctest::Approx(std::min(snr, 5.0)).epsilon(1e-14));
        CHECK(dm::min_snr_weight(t, s, 0.5) == doctest::Approx(std::min(snr, 0.5)).epsilon(1e-14));
    }
    // Early steps are capped, late steps are not.
    CHECK(dm::min_snr_weight(1, s, 5.0) == doctest::Approx(5.0));
    CHECK(dm::min_snr_weight(1000, s, 5.0) < 5.0);
}

TEST_CASE("eta=1 DDIM sigma equals the DDPM posterior standard deviation") {
    const dm::NoiseSchedule s = dm::make_schedule();
    for (int t = 2; t <= 1000; ++t) {
        const double ab = s.alpha_bar[static_cast<std::size_t>(t)];
        const double abp = s.alpha_bar[static_cast<std::size_t>(t - 1)];
        const double sigma_ddim = std::sqrt((1.0 - abp) / (1.0 - ab)) * std::sqrt(1.0 - ab / abp);
        const double beta_tilde = (1.0 - abp) / (1.0 - ab) * s.beta[static_cast<std::size_t>(t)];
        CHECK(std::abs(sigma_ddim - std::sqrt(beta_tilde)) < 1e-10);

        // With that sigma, the deterministic part of the DDIM update equals the
        // DDPM posterior mean for any (z_t, z0, eps) triple.
        Rng rng(static_cast<std::uint64_t>(t));
        const double z0 = rng.normal(), eps = rng.normal();
        const double zt = std::sqrt(ab) * z0 + std::sqrt(1.0 - ab) * eps;
        const double dir = std::sqrt(std::max(0.0, 1.0 - abp - sigma_ddim * sigma_ddim));
        const double ddim_mean = std::sqrt(abp) * z0 + dir * eps;
        const double ddpm_mean = std::sqrt(abp) * s.beta[static_cast<std::size_t>(t)] / (1.0 - ab) * z0 +
                                 std::sqrt(s.alpha[static_cast<std::size_t>(t)]) * (1.0 - abp) / (1.0 - ab) * zt;
        CHECK(std::abs(ddim_mean - ddpm_mean) < 1e-10);
    }
}

TEST_CASE("standardizer statistics and inverse") {
    std::vector<dm::LatentItem> items;
    Rng rng(304);
    for (int i = 0; i < 50; ++i) {
        dm::LatentItem item;
        item.params = dm::phase_to_diff(random_params(rng, 6, 4.0, 1.0));
        items.push_back(std::move(item));
    }
    const dm::Standardizer st = dm::fit_standardizer(items);

    // Population statistics per component over all items and channels.
    for (int k = 0; k < 4; ++k) {
        double mean = 0.0;
        int n = 0;
        for (const auto& it : items) {
            const std::vector<double> flat = it.params.flatten();
            for (int c = 0; c < 6; ++c) {
                mean += flat[static_cast<std::size_t>(c * 4 + k)];
                ++n;
            }
        }
        mean /= n;
        double var = 0.0;
        for (const auto& it : items) {
            const std::vector<double> flat = it.params.flatten();
            for (int c = 0; c < 6; ++c) {
                const double d = flat[static_cast<std::size_t>(c * 4 + k)] - mean;
                var += d * d;
            }
        }
        var /= n;
        CHECK(st.mean[static_cast<std::size_t>(k)] == doctest::Approx(mean).epsilon(1e-12));
        CHECK(st.stddev[static_cast<std::size_t>(k)] == doctest::Approx(std::sqrt(var)).epsilon(1e-10));
    }

    const std::vector<double> flat = items[0].params.flatten();
    const std::vector<double> z = st.apply(flat);
    const std::vector<double> back = st.invert(z);
    for (std::size_t i = 0; i < flat.size(); ++i)
        CHECK(back[i] == doctest::Approx(flat[i]).epsilon(1e-12));
}

TEST_CASE("freshly initialized denoiser predicts exactly zero") {
    dm::DenoiserConfig cfg;
    cfg.channels = 4;
    cfg.d_embed = 32;
    cfg.blocks = 2;
    cfg.heads = 2;
    cfg.num_classes = 2;
    dm::Denoiser model(cfg, 42);
    Rng rng(305);
    ag::Tensor z = ag::Tensor::randn({4, 4}, rng);
    dm::Condition cond;
    cond.label = 1;
    const ag::Tensor v = model.forward(z, 500, 1000, cond, nullptr);
    for (double x : v.data()) CHECK(x == 0.0);
}

TEST_CASE("denoiser forward is deterministic and uses the class and context") {
    dm::DenoiserConfig cfg;
    cfg.channels = 4;
    cfg.d_embed = 32;
    cfg.blocks = 1;
    cfg.heads = 2;
    cfg.num_classes = 2;
    dm::Denoiser model(cfg, 7);
    // Break the zero-output initialization so conditioning becomes visible.
    Rng wr(8);
    for (auto& p : model.params())
        for (auto& v : p.value.data()) v += wr.normal(0.0, 0.05);

    Rng rng(306);
    ag::Tensor z = ag::Tensor::randn({4, 4}, rng);
    dm::Condition c0;
    c0.label = 0;
    dm::Condition c1;
    c1.label = 1;
    dm::Condition cnull;
    cnull.label = -1;
    dm::Condition cctx = c0;
    cctx.context.assign(16, 0.3);

    const auto v0 = model.forward(z, 100, 1000, c0, nullptr);
    const auto v0b = model.forward(z, 100, 1000, c0, nullptr);
    CHECK(v0.data() == v0b.data());
    const auto v1 = model.forward(z, 100, 1000, c1, nullptr);
    const auto vn = model.forward(z, 100, 1000, cnull, nullptr);
    const auto vc = model.forward(z, 100, 1000, cctx, nullptr);
    const auto vt = model.forward(z, 900, 1000, c0, nullptr);
    CHECK(v0.data() != v1.data());
    CHECK(v0.data() != vn.data());
    CHECK(v0.data() != vc.data());
    CHECK(v0.data() != vt.data());
}

TEST_CASE("zero-lr training logs a positive finite loss and moves nothing") {
    dm::DenoiserConfig cfg;
    cfg.channels = 3;
    cfg.d_embed = 16;
    cfg.blocks = 1;
    cfg.heads = 2;
    cfg.num_classes = 1;
    dm::Denoiser model(cfg, 11);

    std::vector<dm::LatentItem> items(1);
    Rng rng(307);
    items[0].params = dm::phase_to_diff(random_params(rng, 3, 4.0, 1.0));
    items[0].label = 0;
    const dm::Standardizer st = dm::fit_standardizer(items);
    const dm::NoiseSchedule sched = dm::make_schedule();

    dm::DiffTrainConfig tc;
    tc.steps = 1;
    tc.batch = 1;
    tc.lr = 0.0;  // no movement: the logged loss is the step-0 loss
    tc.class_dropout = 0.0;
    tc.context_dropout = 1.0;
    tc.seed = 99;
    tc.log_every = 1;
    ag::AdamW opt(tc.opt);
    const dm::DiffTrainResult res = dm::train_diffusion(model, items, st, sched, tc, opt);

    // A zero-initialized model predicts v_hat = 0, so the logged loss is
    // lambda_t * mean(v_target^2) > 0 for whatever (t, eps) the step drew.
    CHECK(res.first_loss > 0.0);
    CHECK(std::isfinite(res.first_loss));
    CHECK(res.first_loss == res.last_loss);
    dm::Denoiser fresh(cfg, 11);
    for (std::size_t p = 0; p < model.params().size(); ++p)
        CHECK(model.params()[p].value.data() == fresh.params()[p].value.data());
}

TEST_CASE("training is deterministic and resumable") {
    dm::DenoiserConfig cfg;
    cfg.channels = 3;
    cfg.d_embed = 16;
    cfg.blocks = 1;
    cfg.heads = 2;
    cfg.num_classes = 2;

    std::vector<dm::LatentItem> items(4);
    Rng rng(308);
    for (auto& it : items) {
        it.params = dm::phase_to_diff(random_params(rng, 3, 4.0, 1.0));
        it.label = static_cast<int>(rng.integer(2));
        it.context_flat.assign(12, rng.normal());
    }
    const dm::Standardizer st = dm::fit_standardizer(items);
    const dm::NoiseSchedule sched = dm::make_schedule();

    dm::DiffTrainConfig tc;
    tc.steps = 6;
    tc.batch = 2;
    tc.lr = 1e-3;
    tc.seed = 55;
    tc.log_every = 1;

    dm::Denoiser a(cfg, 13);
    ag::AdamW oa(tc.opt);
    const auto ra = dm::train_diffusion(a, items, st, sched, tc, oa);

    // Same seed, fresh model: bit-identical trajectory.
    dm::Denoiser b(cfg, 13);
    ag::AdamW ob(tc.opt);
    const auto rb = dm::train_diffusion(b, items, st, sched, tc, ob);
    CHECK(ra.log_csv == rb.log_csv);
    for (std::size_t p = 0; p < a.params().size(); ++p)
        CHECK(a.params()[p].value.data() == b.params()[p].value.data());

    // Split run: pause at 3, then resume for 3 more with carried optimizer
    // state. stop_step keeps the lr horizon at the full 6 steps.
    dm::Denoiser c(cfg, 13);
    ag::AdamW oc(tc.opt);
    dm::DiffTrainConfig half = tc;
    half.stop_step = 3;
    dm::train_diffusion(c, items, st, sched, half, oc);
    dm::DiffTrainConfig rest = tc;
    rest.start_step = 3;
    dm::train_diffusion(c, items, st, sched, rest, oc);
    for (std::size_t p = 0; p < a.params().size(); ++p)
        for (std::size_t i = 0; i < a.params()[p].value.data().size(); ++i)
            CHECK(a.params()[p].value.data()[i] ==
                  doctest::Approx(c.params()[p].value.data()[i]).epsilon(1e-14));
}

TEST_CASE("ddim sampling is deterministic per seed and respects bounds") {
    dm::DenoiserConfig cfg;
    cfg.channels = 4;
    cfg.d_embed = 32;
    cfg.blocks = 1;
    cfg.heads = 2;
    cfg.num_classes = 2;
    dm::Denoiser model(cfg, 21);
    const dm::NoiseSchedule sched = dm::make_schedule();
    dm::Standardizer st;
    dm::Condition cond;
    cond.label = 0;
    dm::SampleConfig sc;
    sc.steps = 25;
    sc.eta = 1.0;

    const dm::DiffParams a = dm::ddim_sample(model, cond, st, sched, sc, 1234, 8.0, 1.0);
    const dm::DiffParams b = dm::ddim_sample(model, cond, st, sched, sc, 1234, 8.0, 1.0);
    const dm::DiffParams c = dm::ddim_sample(model, cond, st, sched, sc, 1235, 8.0, 1.0);
    CHECK(a.flatten() == b.flatten());
    CHECK(a.flatten() != c.flatten());
    dm::diff_to_phase(a).validate();

    // eta=0 is deterministic in a stronger sense: the trajectory never draws
    // noise after the initial state, so different S reach similar fixed points.
    sc.eta = 0.0;
    const dm::DiffParams d = dm::ddim_sample(model, cond, st, sched, sc, 77, 8.0, 1.0);
    dm::diff_to_phase(d).validate();
}

TEST_CASE("keyframe masking zeroes everything outside the kept frames") {
    SynthSpec spec;
    auto [skel, clip] = synth_motion(0, spec, 10, 60.0, 5);
    const std::vector<int> keep = {0, 4, 9};
    const MotionClip masked = dm::mask_keyframes(clip, keep);
    REQUIRE(masked.frames() == clip.frames());
    for (int t = 0; t < 10; ++t) {
        const bool kept = (t == 0 || t == 4 || t == 9);
        for (int k = 0; k < 3; ++k) {
            const double want = kept ? clip.root_positions[static_cast<std::size_t>(t)][static_cast<std::size_t>(k)] : 0.0;
            CHECK(masked.root_positions[static_cast<std::size_t>(t)][static_cast<std::size_t>(k)] == want);
        }
        for (int j = 0; j < clip.joint_count(); ++j)
            for (int k = 0; k < 6; ++k) {
                const double want = kept ? clip.rot(t, j)[static_cast<std::size_t>(k)] : 0.0;
                CHECK(masked.rot(t, j)[static_cast<std::size_t>(k)] == want);
            }
    }
}

TEST_CASE("denoiser config json round trip rejects unknown keys") {
    dm::DenoiserConfig cfg;
    cfg.channels = 7;
    cfg.d_embed = 48;
    const dm::DenoiserConfig back = dm::DenoiserConfig::from_json(cfg.to_json());
    CHECK(back.channels == 7);
    CHECK(back.d_embed == 48);
    CHECK_THROWS_AS(dm::DenoiserConfig::from_json("{\"chanels\":3}"), Error);
}

}  // TEST_SUITE
