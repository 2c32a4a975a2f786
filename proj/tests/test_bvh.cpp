#include <doctest.h>

#include <cmath>
#include <string>

#include "../tests/helpers.hpp"
#include "phasekit/skeleton.hpp"

using namespace phasekit;

namespace {

std::pair<Skeleton, MotionClip> random_clip(std::uint64_t seed, int frames = 20) {
    SynthSpec spec;
    return synth_motion(static_cast<int>(seed % 2), spec, frames, 60.0, seed);
}

double clip_distance(const MotionClip& a, const MotionClip& b) {
    double worst = 0.0;
    for (int t = 0; t < a.frames(); ++t) {
        for (int k = 0; k < 3; ++k)
            worst = std::max(worst, std::abs(a.root_positions[static_cast<std::size_t>(t)][static_cast<std::size_t>(k)] -
                                             b.root_positions[static_cast<std::size_t>(t)][static_cast<std::size_t>(k)]));
        for (int j = 0; j < a.joint_count(); ++j)
            worst = std::max(worst, geo::geodesic_distance(geo::rot6d_to_matrix(a.rot(t, j)),
                                                           geo::rot6d_to_matrix(b.rot(t, j))));
    }
    return worst;
}

// Random printable garbage plus structural fragments that look almost valid.
std::string fuzz_input(Rng& rng) {
    static const char* fragments[] = {"HIERARCHY", "ROOT", "JOINT", "{", "}", "OFFSET", "CHANNELS",
                                      "MOTION", "Frames:", "Frame Time:", "End Site", "Xposition",
                                      "Zrotation", "-1e309", "nan", "1.5", "}}}}", "ROOT a { ROOT b"};
    std::string s;
    const int pieces = 1 + static_cast<int>(rng.integer(40));
    for (int i = 0; i < pieces; ++i) {
        const int pick = static_cast<int>(rng.integer(24));
        if (pick < 18) {
            s += fragments[pick];
        } else {
            const int len = 1 + static_cast<int>(rng.integer(12));
            for (int k = 0; k < len; ++k) s += static_cast<char>(32 + rng.integer(95));
        }
        s += (rng.integer(4) == 0) ? '\n' : ' ';
    }
    return s;
}

}  // namespace

TEST_SUITE("bvh") {

TEST_CASE("write then parse preserves motion to 1e-4") {
    for (std::uint64_t seed : {1ULL, 2ULL, 3ULL, 99ULL}) {
        CAPTURE(seed);
        auto [skel, clip] = random_clip(seed);
        const std::string text = write_bvh(skel, clip);
        auto [skel2, clip2] = parse_bvh(text);
        REQUIRE(skel2.joint_count() == skel.joint_count());
        REQUIRE(clip2.frames() == clip.frames());
        CHECK(clip_distance(clip, clip2) < 1e-4);
        for (int j = 0; j < skel.joint_count(); ++j) {
            CHECK(skel2.joints[static_cast<std::size_t>(j)].name == skel.joints[static_cast<std::size_t>(j)].name);
            CHECK(skel2.joints[static_cast<std::size_t>(j)].parent == skel.joints[static_cast<std::size_t>(j)].parent);
            for (int k = 0; k < 3; ++k)
                CHECK(skel2.joints[static_cast<std::size_t>(j)].offset[static_cast<std::size_t>(k)] ==
                      doctest::Approx(skel.joints[static_cast<std::size_t>(j)].offset[static_cast<std::size_t>(k)]).epsilon(1e-9));
        }
    }
}

TEST_CASE("double round trip is idempotent") {
    auto [skel, clip] = random_clip(7);
    const std::string once = write_bvh(skel, clip);
    auto [s2, c2] = parse_bvh(once);
    const std::string twice = write_bvh(s2, c2);
    CHECK(once == twice);
}

TEST_CASE("unit scale applies to offsets and root translation") {
    auto [skel, clip] = random_clip(5);
    const std::string text = write_bvh(skel, clip);
    BvhOptions opts;
    opts.unit_scale = 10.0;
    auto [s2, c2] = parse_bvh(text, opts);
    CHECK(s2.joints[1].offset[1] == doctest::Approx(10.0 * skel.joints[1].offset[1]).epsilon(1e-9));
    CHECK(c2.root_positions[0][0] == doctest::Approx(10.0 * clip.root_positions[0][0]).epsilon(1e-6));
}

TEST_CASE("malformed headers raise parse errors") {
    CHECK_THROWS_AS(parse_bvh(""), Error);
    CHECK_THROWS_AS(parse_bvh("HIERARCHY\n"), Error);
    CHECK_THROWS_AS(parse_bvh("HIERARCHY\nROOT a\n{\nOFFSET 0 0 0\n}\n"), Error);
    auto [skel, clip] = random_clip(9);
    std::string text = write_bvh(skel, clip);
    // Truncate the motion table: frame count promises more rows than exist.
    text.resize(text.size() - 40);
    CHECK_THROWS_AS(parse_bvh(text), Error);
}

TEST_CASE("parser survives 10000 fuzzed inputs without crashing") {
    Rng rng(0xF022);
    int parsed = 0;
    for (int i = 0; i < 10000; ++i) {
        try {
            parse_bvh(fuzz_input(rng));
            ++parsed;  // accidental success is fine; absence of crashes is the point
        } catch (const Error&) {
        }
    }
    CHECK(parsed >= 0);
}

TEST_CASE("structured mutations of a valid file never crash the parser") {
    auto [skel, clip] = random_clip(3);
    const std::string base = write_bvh(skel, clip);
    Rng rng(0xF023);
    for (int i = 0; i < 2000; ++i) {
        std::string s = base;
        const int edits = 1 + static_cast<int>(rng.integer(8));
        for (int e = 0; e < edits; ++e) {
            const std::size_t pos = rng.integer(s.size());
            switch (rng.integer(3)) {
                case 0: s[pos] = static_cast<char>(32 + rng.integer(95)); break;
                case 1: s.erase(pos, std::min<std::size_t>(rng.integer(20) + 1, s.size() - pos)); break;
                default: s.insert(pos, "x"); break;
            }
        }
        try {
            parse_bvh(s);
        } catch (const Error&) {
        }
    }
    CHECK(true);
}

}  // TEST_SUITE
