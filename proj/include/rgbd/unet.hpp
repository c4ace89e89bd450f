#ifndef RGBD_UNET_HPP
#define RGBD_UNET_HPP

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "rgbd/ops.hpp"
#include "rgbd/schedule.hpp"

namespace rgbd {
namespace backbone {

struct UNetConfig {
    // input conv channel groups; expansion appends zero-initialized groups,
    // keeping the original groups' arithmetic untouched
    std::vector<int> in_groups = {4};
    int out_channels = 4;
    int base_channels = 64;
    std::vector<int> channel_mults = {1, 2, 4};
    std::vector<int> attn_resolutions = {8, 4};  // latent side lengths with self-attention
    int latent_size = 8;                         // input latent side length
    int head_dim = 32;
    int groups = 8;  // group-norm groups

    int in_channels() const {
        int n = 0;
        for (int g : in_groups) n += g;
        return n;
    }
    int time_dim() const { return base_channels * 4; }
    void validate() const;
};

// One token tensor per spatial-attention site of the paired denoiser, in
// site order (down path, mid, up path).
struct RefFeatures {
    std::vector<nn::Var> sites;                  // each [B, h*w, C]
    std::vector<std::array<int64_t, 3>> shapes;  // (C, h, w) per site
    bool unconditional = false;

    static RefFeatures none() {
        RefFeatures r;
        r.unconditional = true;
        return r;
    }
};

struct ResBlock {
    int in_ch = 0, out_ch = 0;
    nn::Var n1g, n1b, c1w, c1b, tw, tb, n2g, n2b, c2w, c2b, skw, skb;
};

struct AttnBlock {
    int ch = 0, heads = 1;
    nn::Var ng, nb, wq, wk, wv, wo, bo;  // q/k/v are bias-free
};

struct ConvPiece {
    nn::Var w, b;  // b is null for appended groups
};

struct LevelBlock {
    ResBlock res;
    bool has_attn = false;
    AttnBlock attn;
    nn::Var down_w, down_b;  // down path only, absent on last level
    nn::Var up_w, up_b;      // up path only, absent on level 0
};

// The denoising U-Net. ReferenceNet is the same structure run in capture
// mode on the clean reference latent.
struct DenoiserModel {
    UNetConfig cfg;
    std::string prefix;
    nn::ParamStore params;

    std::vector<ConvPiece> in_conv;
    nn::Var temb0_w, temb0_b, temb1_w, temb1_b;
    std::vector<LevelBlock> down;
    ResBlock mid_res1, mid_res2;
    AttnBlock mid_attn;
    std::vector<LevelBlock> up;
    nn::Var out_ng, out_nb, out_w, out_b;

    int attention_site_count() const;
    std::vector<int> attention_site_channels() const;

    // applied to the activation right after each attention site (the motion
    // stage inserts its audio/temporal modules here)
    using SiteHook = std::function<nn::Var(nn::Var, int site)>;

    // levels: one noise level per batch element.
    // ref: reference tokens to concatenate into self-attention keys/values;
    //      pass RefFeatures::none() for the explicit unconditional mode.
    // capture: when non-null the model runs as ReferenceNet and records its
    //      own normalized tokens at every site (ref must be none).
    nn::Var forward(nn::Var x, const std::vector<int>& levels, const RefFeatures& ref,
                    RefFeatures* capture = nullptr, const SiteHook* hook = nullptr) const;
};

DenoiserModel build_unet(const UNetConfig& cfg, Rng& rng, const std::string& prefix = "unet");

// Deep copy under a new parameter prefix (ReferenceNet initialization).
DenoiserModel clone_model(const DenoiserModel& src, const std::string& prefix);

// 4->8 channel expansion: new input group zero-initialized, output rows and
// bias duplicated, trunk copied unchanged.
DenoiserModel expand_channels(const DenoiserModel& rgb_model);

// Adds one zero-initialized input group of `extra` channels (inpaint stage).
DenoiserModel expand_input_channels(const DenoiserModel& model, int extra);

// Sinusoidal embedding, max period 1e4; one row per batch element.
Tensor sinusoidal_embedding(const std::vector<int>& levels, int dim);

// Runs the reference network on the clean reference latent (level-0
// semantics) and captures one feature tensor per attention site.
RefFeatures reference_features(const DenoiserModel& refnet, const Tensor& ref_latent);

// eps prediction on the joint latent; output split into (eps_x, eps_d).
schedule::NoisePair denoise(const DenoiserModel& model, const schedule::JointLatent& z,
                            const RefFeatures& ref, int l);

}  // namespace backbone
}  // namespace rgbd

#endif
