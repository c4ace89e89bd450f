#include "rgbd/inpaint.hpp"

#include <cmath>

namespace rgbd {
namespace inpaint {

using backbone::RefFeatures;
using pipeline::Bundle;
using schedule::JointLatent;
using schedule::NoisePair;

namespace {

void check_binary(const Tensor& m, const char* name) {
    for (int64_t i = 0; i < m.numel(); i++)
        require(m[i] == 0.0f || m[i] == 1.0f, strf("%s mask is not binary", name));
}

bool all_ones(const Tensor& m) {
    for (auto v : m.data)
        if (v != 1.0f) return false;
    return true;
}

Tensor full_mask(int64_t h, int64_t w, float v) { return Tensor({1, h, w}, v); }

Tensor rect_mask(int64_t h, int64_t w, Rng& rng) {
    Tensor m({1, h, w});
    int64_t r0 = rng.randint(0, h - 1), r1 = rng.randint(r0 + 1, h);
    int64_t c0 = rng.randint(0, w - 1), c1 = rng.randint(c0 + 1, w);
    for (int64_t i = r0; i < r1; i++)
        for (int64_t j = c0; j < c1; j++) m[i * w + j] = 1.0f;
    return m;
}

Tensor one_training_mask(int64_t h, int64_t w, Rng& rng) {
    double p = rng.uniform();
    if (p < 0.3) return full_mask(h, w, 1.0f);
    if (p < 0.6) return full_mask(h, w, 0.0f);
    return rect_mask(h, w, rng);
}

bool is_all_zero(const Tensor& m) {
    for (auto v : m.data)
        if (v != 0.0f) return false;
    return true;
}

// Re-impose the known latent where the mask is 0: generated regions keep the
// sampler output, conditioned regions are reset to the re-noised known value
// (the known value itself at level 0).
void reimpose(Tensor& z, const Tensor& z0, const Tensor& mask, int level,
              const schedule::NoiseSchedule& sched, Rng& rng) {
    if (all_ones(mask)) return;
    Tensor known = z0;
    if (level >= 1) {
        Tensor eps = randn_tensor<float>(z0.shape, rng);
        known = schedule::add_noise(sched, z0, eps, level);
    }
    int64_t hw = mask.numel();
    for (int64_t c = 0; c < z.shape[0]; c++)
        for (int64_t i = 0; i < hw; i++)
            if (mask[i] == 0.0f) z[c * hw + i] = known[c * hw + i];
}

struct SamplerOut {
    Tensor zx, zd;
};

// DDIM trajectory over the joint latent with per-step re-imposition of the
// conditioned domains. Handles both the 8-channel joint model and the
// 18-channel inpaint model.
SamplerOut run_masked_sampler(const Bundle& bundle, const MaskPair& masks, const Tensor& zx0,
                              const Tensor& zd0, const RefFeatures& ref, int steps,
                              uint64_t seed) {
    nn::NoGradGuard ng;
    const auto& sched = bundle.sched;
    int in_ch = bundle.unet.cfg.in_channels();
    require_cfg(in_ch == 8 || in_ch == 18,
                strf("masked sampler needs a joint (8) or inpaint (18) model, got %d input "
                     "channels",
                     in_ch));
    Rng rng(seed);
    int64_t h = zx0.shape[1], w = zx0.shape[2];

    Tensor zx = randn_tensor<float>(zx0.shape, rng);
    Tensor zd = randn_tensor<float>(zd0.shape, rng);
    reimpose(zx, zx0, masks.mx, sched.levels, sched, rng);
    reimpose(zd, zd0, masks.md, sched.levels, sched, rng);

    Tensor known_x(zx0.shape), known_d(zd0.shape);
    int64_t hw = h * w;
    for (int64_t c = 0; c < 4; c++)
        for (int64_t i = 0; i < hw; i++) {
            known_x[c * hw + i] = (1.0f - masks.mx[i]) * zx0[c * hw + i];
            known_d[c * hw + i] = (1.0f - masks.md[i]) * zd0[c * hw + i];
        }

    auto seq = schedule::ddim_level_sequence(sched.levels, steps);
    for (size_t i = 0; i + 1 < seq.size(); i++) {
        int l = seq[i], l_next = seq[i + 1];
        Tensor x_in;
        if (in_ch == 8) {
            x_in = cat_channels({&zx, &zd});
        } else {
            JointLatent zl{zx, zd, l};
            JointLatent known{zx0, zd0, 0};
            x_in = inpaint_condition(zl, known, masks);
        }
        auto out = bundle.unet.forward(nn::make_leaf(unsqueeze0(x_in)), {l}, ref);
        Tensor o = squeeze0(out->value);
        Tensor ex = slice_channels(o, 0, 4);
        Tensor ed = slice_channels(o, 4, 8);
        zx = schedule::ddim_update(sched, zx, ex, l, l_next);
        zd = schedule::ddim_update(sched, zd, ed, l, l_next);
        reimpose(zx, zx0, masks.mx, l_next, sched, rng);
        reimpose(zd, zd0, masks.md, l_next, sched, rng);
    }
    return {std::move(zx), std::move(zd)};
}

}  // namespace

MaskPair make_mask_pair(MaskMode mode, int64_t h, int64_t w, Rng& rng) {
    MaskPair p;
    switch (mode) {
        case MaskMode::joint:
            p.mx = full_mask(h, w, 1.0f);
            p.md = full_mask(h, w, 1.0f);
            break;
        case MaskMode::image_to_depth:
            p.mx = full_mask(h, w, 0.0f);
            p.md = full_mask(h, w, 1.0f);
            break;
        case MaskMode::depth_to_image:
            p.mx = full_mask(h, w, 1.0f);
            p.md = full_mask(h, w, 0.0f);
            break;
        case MaskMode::random_training:
            do {
                p.mx = one_training_mask(h, w, rng);
                p.md = one_training_mask(h, w, rng);
            } while (is_all_zero(p.mx) && is_all_zero(p.md));
            break;
    }
    return p;
}

Tensor downsample_mask_majority(const Tensor& pixel_mask, int64_t h, int64_t w) {
    require(pixel_mask.rank() == 2, "mask downsample expects [H,W]");
    int64_t ph = pixel_mask.shape[0], pw = pixel_mask.shape[1];
    require(ph % h == 0 && pw % w == 0, "mask downsample: sizes not divisible");
    int64_t bh = ph / h, bw = pw / w;
    Tensor out({1, h, w});
    for (int64_t i = 0; i < h; i++)
        for (int64_t j = 0; j < w; j++) {
            int64_t ones = 0;
            for (int64_t bi = 0; bi < bh; bi++)
                for (int64_t bj = 0; bj < bw; bj++)
                    if (pixel_mask[(i * bh + bi) * pw + j * bw + bj] != 0.0f) ones++;
            out[i * w + j] = ones * 2 > bh * bw ? 1.0f : 0.0f;  // strict majority
        }
    return out;
}

Tensor inpaint_condition(const JointLatent& zl, const JointLatent& known, const MaskPair& masks) {
    require(zl.zx.same_shape(zl.zd) && zl.zx.same_shape(known.zx) && zl.zx.same_shape(known.zd),
            "inpaint_condition: latent shape mismatch");
    require(masks.mx.rank() == 3 && masks.mx.shape[1] == zl.zx.shape[1] &&
                masks.mx.shape[2] == zl.zx.shape[2] && masks.mx.same_shape(masks.md),
            "inpaint_condition: mask shape mismatch");
    check_binary(masks.mx, "appearance");
    check_binary(masks.md, "depth");
    int64_t hw = masks.mx.numel();
    Tensor cx(known.zx.shape), cd(known.zd.shape);
    for (int64_t c = 0; c < 4; c++)
        for (int64_t i = 0; i < hw; i++) {
            cx[c * hw + i] = (1.0f - masks.mx[i]) * known.zx[c * hw + i];
            cd[c * hw + i] = (1.0f - masks.md[i]) * known.zd[c * hw + i];
        }
    return cat_channels({&zl.zx, &zl.zd, &masks.mx, &masks.md, &cx, &cd});
}

PredictDepthResult predict_depth(const Tensor& rgb, const Bundle& bundle, int steps,
                                 uint64_t seed) {
    require_cfg(bundle.has_refnet, "predict_depth needs a reference network (inpaint stage)");
    require_cfg(bundle.unet.cfg.in_channels() == 18,
                "predict_depth needs the inpaint-stage checkpoint (18 input channels)");
    require(rgb.rank() == 3 && rgb.shape[1] == bundle.image_size &&
                rgb.shape[2] == bundle.image_size,
            strf("predict_depth expects a [3,%d,%d] image", bundle.image_size,
                 bundle.image_size));
    nn::NoGradGuard ng;
    Tensor zx0 = bundle.encode_image_scaled(rgb);
    Tensor zd0(zx0.shape);
    Rng mask_rng(0);
    MaskPair masks =
        make_mask_pair(MaskMode::image_to_depth, zx0.shape[1], zx0.shape[2], mask_rng);
    auto ref = backbone::reference_features(bundle.refnet, unsqueeze0(zx0));
    auto out = run_masked_sampler(bundle, masks, zx0, zd0, ref, steps, seed);
    PredictDepthResult res;
    res.depth = bundle.decode_depth_scaled(out.zd);
    res.appearance = bundle.decode_image_scaled(out.zx);
    return res;
}

Tensor generate_from_depth(const Tensor& depth, const Tensor& ref_rgb, const Bundle& bundle,
                           int steps, uint64_t seed) {
    require_cfg(bundle.has_refnet, "generate_from_depth needs a reference network");
    require_cfg(bundle.unet.cfg.in_channels() == 18,
                "generate_from_depth needs the inpaint-stage checkpoint (18 input channels)");
    nn::NoGradGuard ng;
    Tensor zd0 = bundle.encode_depth_scaled(depth);
    Tensor zx0(zd0.shape);
    Rng mask_rng(0);
    MaskPair masks =
        make_mask_pair(MaskMode::depth_to_image, zd0.shape[1], zd0.shape[2], mask_rng);
    Tensor zref = bundle.encode_image_scaled(ref_rgb);
    auto ref = backbone::reference_features(bundle.refnet, unsqueeze0(zref));
    auto out = run_masked_sampler(bundle, masks, zx0, zd0, ref, steps, seed);
    return bundle.decode_image_scaled(out.zx);
}

JointSampleResult sample_joint(const Tensor& ref_rgb, const Bundle& bundle, int steps,
                               uint64_t seed) {
    require_cfg(bundle.has_refnet, "sample_joint needs a reference network (joint stage)");
    nn::NoGradGuard ng;
    int lat = bundle.latent_size();
    Tensor zx0({4, lat, lat});
    Tensor zd0({4, lat, lat});
    Rng mask_rng(0);
    MaskPair masks = make_mask_pair(MaskMode::joint, lat, lat, mask_rng);
    Tensor zref = bundle.encode_image_scaled(ref_rgb);
    auto ref = backbone::reference_features(bundle.refnet, unsqueeze0(zref));
    auto out = run_masked_sampler(bundle, masks, zx0, zd0, ref, steps, seed);
    JointSampleResult r;
    r.rgb = bundle.decode_image_scaled(out.zx);
    r.depth = bundle.decode_depth_scaled(out.zd);
    return r;
}

}  // namespace inpaint
}  // namespace rgbd
