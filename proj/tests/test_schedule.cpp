#include "doctest.h"

#include <cmath>

#include "rgbd/schedule.hpp"

using namespace rgbd;
using namespace rgbd::schedule;

TEST_SUITE_BEGIN("schedule");

TEST_CASE("single-level schedule has alpha_bar = 1 - beta") {
    auto s = make_schedule(1, 0.5, 0.5);
    CHECK(s.alpha_bar_at(1) == doctest::Approx(0.5));
    CHECK(s.alpha_bar_at(0) == 1.0);
}

TEST_CASE("default 1000-level schedule matches the cumulative-product oracle") {
    auto s = make_schedule(1000, 1e-4, 0.02);
    double prod = 1.0;
    for (int l = 1; l <= 1000; l++) {
        double beta = 1e-4 + (0.02 - 1e-4) * (double)(l - 1) / 999.0;
        prod *= 1.0 - beta;
        CHECK(s.alpha_bar_at(l) == doctest::Approx(prod).epsilon(1e-12));
    }
    CHECK(s.alpha_bar_at(1000) < 1e-3);
    CHECK(s.terminal_is_gaussian());
}

TEST_CASE("alpha_bar is strictly decreasing for any valid config") {
    Rng rng(17);
    for (int trial = 0; trial < 5; trial++) {
        int levels = (int)rng.randint(2, 400);
        double bmin = rng.uniform(1e-5, 0.01);
        double bmax = rng.uniform(bmin, 0.3);
        auto s = make_schedule(levels, bmin, bmax);
        for (int l = 1; l < levels; l++) CHECK(s.alpha_bar_at(l + 1) < s.alpha_bar_at(l));
    }
}

TEST_CASE("schedule rejects invalid configurations") {
    CHECK_THROWS_AS(make_schedule(0, 0.1, 0.2), ConfigError);
    CHECK_THROWS_AS(make_schedule(10, 0.0, 0.2), ConfigError);
    CHECK_THROWS_AS(make_schedule(10, 0.3, 0.2), ConfigError);
    CHECK_THROWS_AS(make_schedule(10, 0.3, 1.0), ConfigError);
}

TEST_CASE("add_noise endpoints: alpha_bar 1 returns z0, alpha_bar 0 returns eps") {
    Rng rng(3);
    Tensor z0 = randn_tensor<float>({4, 3, 3}, rng);
    Tensor eps = randn_tensor<float>({4, 3, 3}, rng);
    Tensor a = add_noise_alpha(z0, eps, 1.0);
    Tensor b = add_noise_alpha(z0, eps, 0.0);
    CHECK(max_abs_diff(a, z0) == 0.0);
    CHECK(max_abs_diff(b, eps) == 0.0);
}

TEST_CASE("add_noise at alpha_bar 0.25 matches the closed form") {
    Tensor z0({2, 2}, 2.0f);
    Tensor eps({2, 2}, 1.0f);
    Tensor out = add_noise_alpha(z0, eps, 0.25);
    for (int64_t i = 0; i < out.numel(); i++)
        CHECK(out[i] == doctest::Approx(0.5 * 2.0 + std::sqrt(0.75) * 1.0).epsilon(1e-6));
}

TEST_CASE("add_noise rejects out-of-range levels") {
    auto s = make_schedule(10, 1e-4, 0.02);
    Tensor z({2}), e({2});
    CHECK_THROWS_AS(add_noise(s, z, e, 0), ConfigError);
    CHECK_THROWS_AS(add_noise(s, z, e, 11), ConfigError);
}

TEST_CASE("joint noising draws independent noise and shares the level") {
    auto s = make_schedule(100, 1e-4, 0.02);
    Rng rng(7);
    int64_t n = 100000;
    Tensor zx0({n}, 0.0f), zd0({n}, 0.0f);
    auto [zl, eps] = add_noise_joint(s, zx0, zd0, 50, rng);
    CHECK(zl.level == 50);
    // empirical correlation between the two draws
    double sx = 0, sd = 0, sxx = 0, sdd = 0, sxd = 0;
    for (int64_t i = 0; i < n; i++) {
        double a = eps.ex[i], b = eps.ed[i];
        sx += a;
        sd += b;
        sxx += a * a;
        sdd += b * b;
        sxd += a * b;
    }
    double mx = sx / n, md = sd / n;
    double corr = (sxd / n - mx * md) /
                  (std::sqrt(sxx / n - mx * mx) * std::sqrt(sdd / n - md * md));
    CHECK(std::abs(corr) < 0.02);
}

TEST_CASE("forward marginal variance matches theory within 5 percent") {
    auto s = make_schedule(100, 1e-4, 0.05);
    Rng rng(11);
    int64_t n = 100000;
    Tensor z0({n}, 1.0f);  // constant latent: Var(z_l) should be 1 - alpha_bar
    for (int l : {25, 50, 100}) {
        Tensor eps = randn_tensor<float>({n}, rng);
        Tensor zl = add_noise(s, z0, eps, l);
        double abar = s.alpha_bar_at(l);
        double mean = 0;
        for (int64_t i = 0; i < n; i++) mean += zl[i];
        mean /= (double)n;
        double var = 0;
        for (int64_t i = 0; i < n; i++) var += (zl[i] - mean) * (zl[i] - mean);
        var /= (double)n;
        CHECK(mean == doctest::Approx(std::sqrt(abar)).epsilon(0.05));
        CHECK(var == doctest::Approx(1.0 - abar).epsilon(0.05));
    }
}

TEST_CASE("joint_loss: exact prediction gives zero, constant offset gives c^2") {
    Rng rng(5);
    NoisePair eps{randn_tensor<float>({4, 2, 2}, rng), randn_tensor<float>({4, 2, 2}, rng)};
    NoisePair hat{eps.ex, eps.ed};
    CHECK(joint_loss(hat, eps) == 0.0);
    float c = 0.37f;
    for (auto& v : hat.ex.data) v += c;
    for (auto& v : hat.ed.data) v += c;
    CHECK(joint_loss(hat, eps) == doctest::Approx((double)c * c).epsilon(1e-5));
}

TEST_CASE("joint_loss matches an elementwise-sum oracle") {
    Rng rng(9);
    NoisePair eps{randn_tensor<float>({3, 5}, rng), randn_tensor<float>({3, 5}, rng)};
    NoisePair hat{randn_tensor<float>({3, 5}, rng), randn_tensor<float>({3, 5}, rng)};
    double acc = 0;
    int64_t count = 0;
    for (int64_t i = 0; i < 15; i++) {
        acc += std::pow((double)hat.ex[i] - (double)eps.ex[i], 2);
        acc += std::pow((double)hat.ed[i] - (double)eps.ed[i], 2);
        count += 2;
    }
    CHECK(joint_loss(hat, eps) == doctest::Approx(acc / (double)count).epsilon(1e-6));
}

TEST_CASE("ddpm final step is deterministic and inverts Eq. 1 at L = 1") {
    auto s = make_schedule(1, 0.3, 0.3);
    Rng rng(13);
    Tensor z0 = randn_tensor<float>({4, 4}, rng);
    Tensor eps = randn_tensor<float>({4, 4}, rng);
    Tensor z1 = add_noise(s, z0, eps, 1);
    Rng ra(1), rb(2);
    Tensor za = ddpm_update(s, z1, eps, 1, ra);
    Tensor zb = ddpm_update(s, z1, eps, 1, rb);
    CHECK(max_abs_diff(za, zb) == 0.0);  // sigma_1 = 0
    CHECK(max_abs_diff(za, z0) < 1e-5);
}

TEST_CASE("ddpm with an oracle denoiser recovers z0 over 10 steps") {
    auto s = make_schedule(10, 1e-3, 0.2);
    Rng rng(21);
    JointLatent z0{randn_tensor<float>({4, 3, 3}, rng), randn_tensor<float>({4, 3, 3}, rng), 0};
    JointLatent z{randn_tensor<float>({4, 3, 3}, rng), randn_tensor<float>({4, 3, 3}, rng), 10};
    for (int l = 10; l >= 1; l--) {
        double abar = s.alpha_bar_at(l);
        NoisePair oracle;
        oracle.ex = Tensor(z.zx.shape);
        oracle.ed = Tensor(z.zd.shape);
        for (int64_t i = 0; i < z.zx.numel(); i++) {
            oracle.ex[i] =
                (float)(((double)z.zx[i] - std::sqrt(abar) * z0.zx[i]) / std::sqrt(1 - abar));
            oracle.ed[i] =
                (float)(((double)z.zd[i] - std::sqrt(abar) * z0.zd[i]) / std::sqrt(1 - abar));
        }
        z = ddpm_step(s, z, oracle, l, rng);
    }
    CHECK(z.level == 0);
    CHECK(max_abs_diff(z.zx, z0.zx) < 1e-4);
    CHECK(max_abs_diff(z.zd, z0.zd) < 1e-4);
}

TEST_CASE("ddpm rejects level 0") {
    auto s = make_schedule(4, 1e-3, 0.1);
    Rng rng(1);
    Tensor z({2}), e({2});
    CHECK_THROWS_AS(ddpm_update(s, z, e, 0, rng), ConfigError);
}

TEST_CASE("ddim to level 0 returns the predicted z0 and inverts one step exactly") {
    auto s = make_schedule(50, 1e-4, 0.05);
    Rng rng(31);
    Tensor z0 = randn_tensor<float>({4, 2, 2}, rng);
    Tensor eps = randn_tensor<float>({4, 2, 2}, rng);
    Tensor zl = add_noise(s, z0, eps, 30);
    Tensor rec = ddim_update(s, zl, eps, 30, 0);
    CHECK(max_abs_diff(rec, z0) < 1e-5);
}

TEST_CASE("ddim 50-step strided trajectory with oracle noise stays near z0") {
    auto s = make_schedule(1000, 1e-4, 0.02);
    Rng rng(41);
    Tensor z0 = randn_tensor<float>({4, 4, 4}, rng);
    Tensor z = randn_tensor<float>({4, 4, 4}, rng);
    auto seq = ddim_level_sequence(1000, 50);
    REQUIRE(seq.front() == 1000);
    REQUIRE(seq.back() == 0);
    for (size_t i = 0; i + 1 < seq.size(); i++) {
        int l = seq[i], ln = seq[i + 1];
        double abar = s.alpha_bar_at(l);
        Tensor oracle(z.shape);
        for (int64_t j = 0; j < z.numel(); j++)
            oracle[j] = (float)(((double)z[j] - std::sqrt(abar) * z0[j]) / std::sqrt(1 - abar));
        z = ddim_update(s, z, oracle, l, ln);
    }
    CHECK(max_abs_diff(z, z0) < 1e-4);
}

TEST_CASE("ddim rejects non-descending level pairs") {
    auto s = make_schedule(10, 1e-3, 0.1);
    Tensor z({2}), e({2});
    CHECK_THROWS_AS(ddim_update(s, z, e, 3, 3), ConfigError);
    CHECK_THROWS_AS(ddim_update(s, z, e, 3, 5), ConfigError);
}

TEST_SUITE_END();
