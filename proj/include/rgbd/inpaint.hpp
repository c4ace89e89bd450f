#ifndef RGBD_INPAINT_HPP
#define RGBD_INPAINT_HPP

#include "rgbd/pipeline.hpp"

namespace rgbd {
namespace inpaint {

// Binary latent-resolution masks: 1 = generate this region, 0 = condition on
// the known latent here.
struct MaskPair {
    Tensor mx;  // [1,h,w] appearance
    Tensor md;  // [1,h,w] depth
};

enum class MaskMode { joint, image_to_depth, depth_to_image, random_training };

MaskPair make_mask_pair(MaskMode mode, int64_t h, int64_t w, Rng& rng);

// strict-majority downsample of a pixel-space mask to latent resolution
Tensor downsample_mask_majority(const Tensor& pixel_mask, int64_t h, int64_t w);

// [z^x_l(4), z^d_l(4), mx(1), md(1), (1-mx)*z^x_0(4), (1-md)*z^d_0(4)]
Tensor inpaint_condition(const schedule::JointLatent& zl, const schedule::JointLatent& known,
                         const MaskPair& masks);

struct PredictDepthResult {
    Tensor depth;       // [H,W] length units
    Tensor appearance;  // decoded appearance channel; VAE round-trip of the
                        // input, bit for bit (hard re-imposition)
};

// Image-to-depth via asymmetric masked-latent inpainting. The input RGB also
// serves as the reference image. Deterministic for a fixed seed.
PredictDepthResult predict_depth(const Tensor& rgb, const pipeline::Bundle& bundle, int steps,
                                 uint64_t seed);

// Depth-to-image: depth latent held fixed (re-imposed per step), appearance
// sampled conditioned on the reference image's features.
Tensor generate_from_depth(const Tensor& depth, const Tensor& ref_rgb,
                           const pipeline::Bundle& bundle, int steps, uint64_t seed);

struct JointSampleResult {
    Tensor rgb;
    Tensor depth;
};

// Reference-conditioned joint generation (both masks all-ones when run on an
// inpaint-stage model; plain joint sampling on an 8-channel model).
JointSampleResult sample_joint(const Tensor& ref_rgb, const pipeline::Bundle& bundle, int steps,
                               uint64_t seed);

}  // namespace inpaint
}  // namespace rgbd

#endif
