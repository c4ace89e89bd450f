#include "doctest.h"

#include <cmath>

#include "rgbd/synthdata.hpp"

using namespace rgbd;
using namespace rgbd::synth;

namespace {

double corr(const std::vector<double>& a, const std::vector<double>& b) {
    double ma = 0, mb = 0;
    for (size_t i = 0; i < a.size(); i++) {
        ma += a[i];
        mb += b[i];
    }
    ma /= (double)a.size();
    mb /= (double)b.size();
    double saa = 0, sbb = 0, sab = 0;
    for (size_t i = 0; i < a.size(); i++) {
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
        sab += (a[i] - ma) * (b[i] - mb);
    }
    return sab / std::sqrt(saa * sbb);
}

bool tensors_equal(const Tensor& a, const Tensor& b) {
    return a.same_shape(b) && max_abs_diff(a, b) == 0.0;
}

}  // namespace

TEST_SUITE_BEGIN("synthdata");

TEST_CASE("changing the light direction changes rgb but not depth") {
    auto a = render_sample(3, 10.0, -5.0, 0.4, {0.2, -0.3, 1.0}, 32);
    auto b = render_sample(3, 10.0, -5.0, 0.4, {-0.5, 0.2, 0.8}, 32);
    CHECK(tensors_equal(a.depth, b.depth));
    CHECK(tensors_equal(a.valid, b.valid));
    CHECK(max_abs_diff(a.rgb, b.rgb) > 0.0);
}

TEST_CASE("frontal pose: the nearest pixel lies inside the nose footprint") {
    for (int64_t id : {0, 7, 21}) {
        auto hp = identity_params(id);
        auto s = render_sample(id, 0.0, 0.0, 0.2, {0.0, 0.0, 1.0}, 64);
        int64_t best = 0;
        for (int64_t i = 1; i < s.depth.numel(); i++)
            if (s.depth[i] < s.depth[best]) best = i;
        double v = (2.0 * ((double)(best / 64) + 0.5) / 64.0) - 1.0;
        double u = (2.0 * ((double)(best % 64) + 0.5) / 64.0) - 1.0;
        CHECK(std::abs(u) <= hp.nose_ax * 1.15);
        CHECK(std::abs(v - hp.nose_y) <= hp.nose_ay * 1.15);
    }
}

TEST_CASE("sphere-cap depth at the image center matches the closed form to 1e-6") {
    HeadParams hp;
    hp.ax = hp.ay = hp.az = 0.35;
    hp.exponent = 2.0;
    hp.center_z = 1.2;
    hp.nose_ax = 0;  // disable nose, eyes, mouth
    hp.eye_r = 0;
    hp.mouth_half_w = 0;
    auto s = render_with(hp, 999, 0.0, 0.0, 0.0, {0.0, 0.0, 1.0}, 64);
    // center pixel (i=31..32, j same); pixel centers sit half a pixel off the
    // axis, so correct by the sphere cap at that offset
    double u = (2.0 * (31 + 0.5) / 64.0) - 1.0;
    double closed = hp.center_z - std::sqrt(0.35 * 0.35 - 2.0 * u * u);
    CHECK(std::abs((double)s.depth[31 * 64 + 31] - closed) < 1e-6);
}

TEST_CASE("background sits exactly at the far plane with zero validity") {
    auto s = render_sample(5, 0.0, 0.0, 0.0, {0.0, 0.0, 1.0}, 32);
    int64_t bg = 0;
    for (int64_t i = 0; i < s.valid.numel(); i++) {
        if (s.valid[i] == 0.0f) {
            CHECK(s.depth[i] == (float)kFarPlane);
            bg++;
        } else {
            CHECK(s.depth[i] < (float)kFarPlane);
        }
    }
    CHECK(bg > 0);
    CHECK(bg < s.valid.numel());
}

TEST_CASE("depth stays within the configured near/far planes across poses") {
    Rng rng(33);
    for (int trial = 0; trial < 8; trial++) {
        int64_t id = rng.randint(0, 500);
        auto s = render_sample(id, rng.uniform(-45, 45), rng.uniform(-45, 45), rng.uniform(0, 1),
                               {rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), 1.0}, 32);
        for (int64_t i = 0; i < s.depth.numel(); i++) {
            CHECK(s.depth[i] >= (float)kNearPlane);
            CHECK(s.depth[i] <= (float)kFarPlane);
        }
    }
}

TEST_CASE("rendering is deterministic and identity-stable") {
    auto a = render_sample(11, 4.0, 2.0, 0.7, {0.1, 0.0, 1.0}, 32);
    auto b = render_sample(11, 4.0, 2.0, 0.7, {0.1, 0.0, 1.0}, 32);
    CHECK(tensors_equal(a.rgb, b.rgb));
    CHECK(tensors_equal(a.depth, b.depth));
    auto p1 = identity_params(11);
    auto p2 = identity_params(11);
    CHECK(p1.ax == p2.ax);
    CHECK(p1.skin == p2.skin);
}

TEST_CASE("unsupported sizes and poses are configuration errors") {
    CHECK_THROWS_AS(render_sample(1, 0, 0, 0, {0, 0, 1}, 48), ConfigError);
    CHECK_THROWS_AS(render_sample(1, 60, 0, 0, {0, 0, 1}, 32), ConfigError);
    CHECK_THROWS_AS(render_sample(1, 0, 0, 1.5, {0, 0, 1}, 32), ConfigError);
}

TEST_CASE("wild corruption preserves the valid mask and the far-plane background") {
    Rng rng(41);
    auto s = render_sample(13, 8.0, -4.0, 0.5, {0.0, 0.0, 1.0}, 32);
    auto w = make_wild_sample(s, rng);
    CHECK(w.split == "wild");
    CHECK(tensors_equal(w.valid, s.valid));
    for (int64_t i = 0; i < w.valid.numel(); i++)
        if (w.valid[i] == 0.0f) CHECK(w.depth[i] == (float)kFarPlane);
}

TEST_CASE("mean wild depth corruption sits between 0.5 and 3 percent of the head range") {
    Rng rng(43);
    double acc = 0;
    int n = 100;
    for (int trial = 0; trial < n; trial++) {
        int64_t id = rng.randint(0, 1000);
        auto s = render_sample(id, rng.uniform(-20, 20), rng.uniform(-15, 15),
                               rng.uniform(0, 1), {0.0, 0.0, 1.0}, 32);
        auto w = make_wild_sample(s, rng);
        double dmin = 1e30, dmax = -1e30, diff = 0;
        int64_t cnt = 0;
        for (int64_t i = 0; i < s.depth.numel(); i++)
            if (s.valid[i] != 0.0f) {
                dmin = std::min(dmin, (double)s.depth[i]);
                dmax = std::max(dmax, (double)s.depth[i]);
                diff += std::abs((double)w.depth[i] - (double)s.depth[i]);
                cnt++;
            }
        acc += (diff / (double)cnt) / (dmax - dmin);
    }
    double mean = acc / n;
    CHECK(mean >= 0.005);
    CHECK(mean <= 0.03);
}

TEST_CASE("degenerate corruption config reproduces the studio sample exactly") {
    Rng rng(47);
    auto s = render_sample(17, 0.0, 0.0, 0.3, {0.0, 0.0, 1.0}, 32);
    WildConfig cfg;
    cfg.bias_amp_min = cfg.bias_amp_max = 0.0;
    cfg.scale_jitter = cfg.shift_jitter = 0.0;
    cfg.mouth_smooth_iters = 0;
    cfg.color_jitter = 0.0;
    cfg.replace_background = false;
    auto w = make_wild_sample(s, rng, cfg);
    CHECK(tensors_equal(w.rgb, s.rgb));
    CHECK(tensors_equal(w.depth, s.depth));
}

TEST_CASE("clip frames carry the driving signal as their expression") {
    Rng rng(53);
    auto clip = make_clip(23, 12, 32, rng);
    REQUIRE(clip.frames.size() == 12);
    REQUIRE(clip.driving_signal.size() == 12);
    for (int t = 0; t < 12; t++)
        CHECK(clip.frames[(size_t)t].expression == clip.driving_signal[(size_t)t]);
    CHECK(clip.audio.features.shape == std::vector<int64_t>({12, (int64_t)kAudioDim}));
}

TEST_CASE("audio channel 0 correlates with the driving signal by construction") {
    Rng rng(59);
    auto clip = make_clip(29, 80, 32, rng);
    std::vector<double> sig, ch0;
    for (int t = 0; t < 80; t++) {
        sig.push_back(clip.driving_signal[(size_t)t]);
        ch0.push_back(clip.audio.features[(int64_t)t * kAudioDim]);
    }
    CHECK(corr(sig, ch0) >= 0.9);
}

TEST_CASE("clips with the same seed are identical") {
    Rng r1(61), r2(61);
    auto a = make_clip(31, 6, 32, r1);
    auto b = make_clip(31, 6, 32, r2);
    for (int t = 0; t < 6; t++) {
        CHECK(tensors_equal(a.frames[(size_t)t].rgb, b.frames[(size_t)t].rgb));
        CHECK(tensors_equal(a.frames[(size_t)t].depth, b.frames[(size_t)t].depth));
    }
    CHECK(tensors_equal(a.audio.features, b.audio.features));
}

TEST_CASE("mouth depth opening grows with expression inside the mouth box") {
    auto hp = identity_params(37);
    auto closed = render_sample(37, 0, 0, 0.0, {0, 0, 1}, 64);
    auto open = render_sample(37, 0, 0, 1.0, {0, 0, 1}, 64);
    auto box = mouth_box(hp, 64);
    double mc = 0, mo = 0;
    int64_t cnt = 0;
    for (int i = box[0]; i < box[1]; i++)
        for (int j = box[2]; j < box[3]; j++) {
            mc += closed.depth[i * 64 + j];
            mo += open.depth[i * 64 + j];
            cnt++;
        }
    CHECK(cnt > 0);
    CHECK(mo / (double)cnt > mc / (double)cnt + 0.005);  // cavity recesses the region
}

TEST_SUITE_END();
