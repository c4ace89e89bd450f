#ifndef RGBD_PIPELINE_HPP
#define RGBD_PIPELINE_HPP

#include "rgbd/schedule.hpp"
#include "rgbd/unet.hpp"
#include "rgbd/vae.hpp"

namespace rgbd {
namespace pipeline {

// Everything one sampling call needs: the VAE, the stage's denoiser (and
// ReferenceNet once it exists), the schedule, and the latent scaling that
// brings VAE latents to roughly unit variance.
struct Bundle {
    vae::VAE vae;
    backbone::DenoiserModel unet;
    backbone::DenoiserModel refnet;
    bool has_refnet = false;
    schedule::NoiseSchedule sched;
    float latent_scale = 1.0f;
    vae::DepthNormalization norm;
    int image_size = 64;
    std::string stage;

    Tensor encode_image_scaled(const Tensor& rgb) const {
        Tensor z = vae.encode(rgb).values;
        for (auto& v : z.data) v /= latent_scale;
        return z;
    }
    Tensor encode_depth_scaled(const Tensor& depth) const {
        Tensor z = vae.encode_depth(depth, norm).values;
        for (auto& v : z.data) v /= latent_scale;
        return z;
    }
    Tensor decode_image_scaled(const Tensor& z_scaled) const {
        vae::LatentCode code;
        code.values = z_scaled;
        for (auto& v : code.values.data) v *= latent_scale;
        return vae.decode(code);
    }
    Tensor decode_depth_scaled(const Tensor& z_scaled) const {
        vae::LatentCode code;
        code.domain = vae::LatentCode::Domain::depth;
        code.values = z_scaled;
        for (auto& v : code.values.data) v *= latent_scale;
        return vae.decode_depth(code, norm);
    }
    int latent_size() const { return image_size / 8; }
};

}  // namespace pipeline
}  // namespace rgbd

#endif
