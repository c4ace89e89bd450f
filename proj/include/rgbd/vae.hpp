#ifndef RGBD_VAE_HPP
#define RGBD_VAE_HPP

#include <utility>

#include "rgbd/optim.hpp"
#include "rgbd/ops.hpp"

namespace rgbd {
namespace vae {

// Maps [near, far] length units to [-1, 1]; values outside clamp and are
// flagged through the in-range mask.
struct DepthNormalization {
    double near = 0.5;
    double far = 2.0;

    void validate() const {
        require_cfg(near < far, strf("depth normalization: near %g must be < far %g", near, far));
    }
    float normalize(float d) const {
        float v = (float)(((double)d - near) / (far - near) * 2.0 - 1.0);
        return v < -1.0f ? -1.0f : (v > 1.0f ? 1.0f : v);
    }
    float denormalize(float v) const {
        return (float)(near + ((double)v + 1.0) * 0.5 * (far - near));
    }
    // in_range (optional): 1 where the input lay inside [near, far]
    Tensor normalize_map(const Tensor& depth, Tensor* in_range = nullptr) const;
    Tensor denormalize_map(const Tensor& values) const;
};

struct LatentCode {
    enum class Domain { appearance, depth };
    Tensor values;  // [C_lat, h, w]
    Domain domain = Domain::appearance;
};

struct VAEConfig {
    int base_channels = 32;
    int latent_channels = 4;
    int groups = 8;
};

struct VaeRes {
    int in_ch = 0, out_ch = 0;
    nn::Var n1g, n1b, c1w, c1b, n2g, n2b, c2w, c2b, skw, skb;
};

// Shared convolutional VAE for RGB images and channel-replicated depth maps.
// Three stride-2 stages: latents are C_lat x H/8 x W/8.
struct VAE {
    VAEConfig cfg;
    nn::ParamStore params;

    nn::Var enc_in_w, enc_in_b;
    std::vector<VaeRes> enc_res;
    std::vector<nn::Var> enc_down_w, enc_down_b;
    VaeRes enc_mid;
    nn::Var enc_out_ng, enc_out_nb, enc_out_w, enc_out_b;

    nn::Var dec_in_w, dec_in_b;
    VaeRes dec_mid;
    std::vector<nn::Var> dec_up_w, dec_up_b;
    std::vector<VaeRes> dec_res;
    nn::Var dec_out_ng, dec_out_nb, dec_out_w, dec_out_b;

    // graph-mode passes used by training (batched)
    std::pair<nn::Var, nn::Var> encode_graph(nn::Var x) const;  // (mu, logvar)
    nn::Var decode_graph(nn::Var z) const;

    // inference-mode single-sample API
    LatentCode encode(const Tensor& image, bool training = false, Rng* rng = nullptr) const;
    Tensor decode(const LatentCode& z) const;
    LatentCode encode_depth(const Tensor& depth, const DepthNormalization& norm,
                            bool training = false, Rng* rng = nullptr) const;
    Tensor decode_depth(const LatentCode& z, const DepthNormalization& norm) const;
};

VAE build_vae(const VAEConfig& cfg, Rng& rng, const std::string& prefix = "vae");

// closed-form KL of a diagonal Gaussian posterior to the unit Gaussian,
// mean over elements
double gaussian_kl(const Tensor& mu, const Tensor& logvar);

struct VaeStepResult {
    double recon_loss = 0;
    double kl_loss = 0;
};

// One optimizer step on a batch of [3,H,W] images in [-1,1] (RGB and
// replicated-depth images mixed by the caller). lambda_kl weights the KL
// term; total = recon + lambda_kl * kl.
VaeStepResult vae_train_step(VAE& v, const std::vector<Tensor>& batch, nn::Adam& opt, Rng& rng,
                             double lambda_kl = 1e-6);

}  // namespace vae
}  // namespace rgbd

#endif
