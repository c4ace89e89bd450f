#include "doctest.h"

#include <cmath>

#include "rgbd/vae.hpp"

using namespace rgbd;
using namespace rgbd::vae;

namespace {

VAE tiny_vae(uint64_t seed = 1) {
    VAEConfig cfg;
    cfg.base_channels = 8;
    Rng rng(seed);
    return build_vae(cfg, rng);
}

}  // namespace

TEST_SUITE_BEGIN("vae");

TEST_CASE("encode maps 64x64 images to 4x8x8 latents") {
    auto v = tiny_vae();
    Rng rng(2);
    Tensor img = randn_tensor<float>({3, 64, 64}, rng, 0.3);
    auto z = v.encode(img);
    CHECK(z.values.shape == std::vector<int64_t>({4, 8, 8}));
    CHECK(z.domain == LatentCode::Domain::appearance);
}

TEST_CASE("inference-mode encode is deterministic; training mode adds seeded noise") {
    auto v = tiny_vae();
    Rng rng(3);
    Tensor img = randn_tensor<float>({3, 32, 32}, rng, 0.3);
    auto a = v.encode(img);
    auto b = v.encode(img);
    CHECK(max_abs_diff(a.values, b.values) == 0.0);
    Rng r1(7), r2(7), r3(8);
    auto t1 = v.encode(img, true, &r1);
    auto t2 = v.encode(img, true, &r2);
    auto t3 = v.encode(img, true, &r3);
    CHECK(max_abs_diff(t1.values, t2.values) == 0.0);
    CHECK(max_abs_diff(t1.values, t3.values) > 0.0);
    CHECK(max_abs_diff(t1.values, a.values) > 0.0);
}

TEST_CASE("decode maps 4x8x8 latents to 3x64x64 images in [-1,1], deterministically") {
    auto v = tiny_vae();
    Rng rng(5);
    LatentCode z;
    z.values = randn_tensor<float>({4, 8, 8}, rng);
    Tensor img1 = v.decode(z);
    Tensor img2 = v.decode(z);
    CHECK(img1.shape == std::vector<int64_t>({3, 64, 64}));
    CHECK(max_abs_diff(img1, img2) == 0.0);
    for (int64_t i = 0; i < img1.numel(); i++) {
        CHECK(img1[i] <= 1.0f);
        CHECK(img1[i] >= -1.0f);
    }
}

TEST_CASE("shape round-trip holds for valid sizes and rejects non-divisible sizes") {
    auto v = tiny_vae();
    Rng rng(6);
    for (int64_t hw : {32, 64}) {
        Tensor img = randn_tensor<float>({3, hw, hw}, rng, 0.3);
        Tensor rec = v.decode(v.encode(img));
        CHECK(rec.shape == img.shape);
    }
    Tensor bad = randn_tensor<float>({3, 36, 36}, rng, 0.3);
    CHECK_THROWS_AS(v.encode(bad), ConfigError);
}

TEST_CASE("decode rejects wrong channel counts") {
    auto v = tiny_vae();
    LatentCode z;
    z.values = Tensor({5, 8, 8});
    CHECK_THROWS_AS(v.decode(z), ShapeError);
}

TEST_CASE("depth at the normalization midpoint replicates to an all-zero image") {
    DepthNormalization norm{0.5, 2.0};
    Tensor depth({8, 8}, (float)((0.5 + 2.0) / 2.0));
    Tensor n = norm.normalize_map(depth);
    for (int64_t i = 0; i < n.numel(); i++) CHECK(n[i] == doctest::Approx(0.0f).epsilon(1e-7));
}

TEST_CASE("depth beyond far clamps to exactly 1 and is flagged out of range") {
    DepthNormalization norm{0.5, 2.0};
    Tensor depth({2, 2}, 3.0f);  // far + 1 unit
    depth[3] = 1.0f;             // in range
    Tensor in_range;
    Tensor n = norm.normalize_map(depth, &in_range);
    CHECK(n[0] == 1.0f);
    CHECK(in_range[0] == 0.0f);
    CHECK(in_range[3] == 1.0f);
}

TEST_CASE("depth normalization is a bijection on [near, far]") {
    DepthNormalization norm{0.5, 2.0};
    Rng rng(9);
    for (int i = 0; i < 200; i++) {
        float d = (float)rng.uniform(0.5, 2.0);
        CHECK(std::abs(norm.denormalize(norm.normalize(d)) - d) < 1e-6);
    }
}

TEST_CASE("near >= far is a configuration error") {
    DepthNormalization norm{2.0, 0.5};
    Tensor depth({2, 2}, 1.0f);
    CHECK_THROWS_AS(norm.normalize_map(depth), ConfigError);
    auto v = tiny_vae();
    CHECK_THROWS_AS(v.encode_depth(depth, norm), ConfigError);
}

TEST_CASE("encode_depth tags the domain and round-trips shapes") {
    auto v = tiny_vae();
    DepthNormalization norm{0.5, 2.0};
    Rng rng(10);
    Tensor depth({32, 32});
    for (auto& d : depth.data) d = (float)rng.uniform(0.6, 1.9);
    auto z = v.encode_depth(depth, norm);
    CHECK(z.domain == LatentCode::Domain::depth);
    CHECK(z.values.shape == std::vector<int64_t>({4, 4, 4}));
    Tensor rec = v.decode_depth(z, norm);
    CHECK(rec.shape == depth.shape);
}

TEST_CASE("KL of the unit-Gaussian posterior is exactly zero and never negative") {
    Tensor mu({4, 3}), lv({4, 3});
    CHECK(gaussian_kl(mu, lv) == 0.0);
    Rng rng(11);
    for (int i = 0; i < 20; i++) {
        Tensor m = randn_tensor<float>({5, 5}, rng);
        Tensor l = randn_tensor<float>({5, 5}, rng);
        CHECK(gaussian_kl(m, l) >= 0.0);
    }
}

TEST_CASE("one train step on a fixed batch reduces the total loss") {
    auto v = tiny_vae(21);
    Rng data_rng(22);
    std::vector<Tensor> batch;
    for (int i = 0; i < 4; i++) {
        Tensor img({3, 16, 16});
        for (auto& p : img.data) p = (float)(0.8 * std::sin(0.3 * (double)i) * data_rng.uniform());
        batch.push_back(img);
    }
    nn::Adam opt(1e-3);
    Rng step_rng(23);
    auto first = vae_train_step(v, batch, opt, step_rng, 1e-6);
    VaeStepResult last{};
    for (int s = 0; s < 10; s++) last = vae_train_step(v, batch, opt, step_rng, 1e-6);
    double total_first = first.recon_loss + 1e-6 * first.kl_loss;
    double total_last = last.recon_loss + 1e-6 * last.kl_loss;
    CHECK(total_last < total_first);
}

TEST_SUITE_END();
