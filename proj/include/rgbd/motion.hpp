#ifndef RGBD_MOTION_HPP
#define RGBD_MOTION_HPP

#include "rgbd/pipeline.hpp"
#include "rgbd/synthdata.hpp"

namespace rgbd {
namespace motion {

// per-frame audio feature rows [T, A]; the bundled provider is synthetic,
// real features can be supplied as files without code changes
using AudioTrack = synth::AudioTrack;

struct MotionConfig {
    int frames_per_seq = 14;
    int n_motion = 4;
    int audio_window = 5;  // odd
    int audio_dim = 16;
};

// Per attention site: an audio cross-attention module and a temporal
// self-attention module, both residual with zero-initialized output
// projections (exact no-ops at the start of training).
struct MotionSite {
    int ch = 0, heads = 1;
    nn::Var a_ng, a_nb, a_wq, a_wk, a_wv, a_wo, a_bo;
    nn::Var t_ng, t_nb, t_wq, t_wk, t_wv, t_wo, t_bo;
};

struct MotionModules {
    MotionConfig cfg;
    nn::ParamStore params;
    std::vector<MotionSite> sites;
};

MotionModules build_motion_modules(const backbone::DenoiserModel& base, const MotionConfig& cfg,
                                   Rng& rng, const std::string& prefix = "motion");

// window of k frames centered on t, edge-replicated, flattened to [k*A]
Tensor audio_window(const AudioTrack& track, int t, int k);
// all frame windows stacked: [f, k, A]
Tensor audio_window_batch(const AudioTrack& track, int t0, int f, int k);

// Per frame, spatial tokens cross-attend to that frame's projected audio
// window tokens. feats: [f,C,h,w]; audio_tokens: [f,k,A].
nn::Var audio_attention(const MotionSite& site, nn::Var feats, nn::Var audio_tokens, int groups);

// Self-attention along the temporal axis over n+f tokens (motion context
// prepended); only the f current-frame outputs are kept. motion_tokens:
// [h*w, n, C] or null for an empty context.
nn::Var temporal_attention(const MotionSite& site, nn::Var feats, nn::Var motion_tokens,
                           int groups);

// Per-site motion features of the n context frames: refnet tokens stacked
// along the temporal axis, each [h_i*w_i, n, C_i].
std::vector<nn::Var> motion_context_features(const backbone::DenoiserModel& refnet,
                                             const std::vector<Tensor>& context_latents);

struct AnimateResult {
    std::vector<Tensor> rgb;    // T frames [3,H,W]
    std::vector<Tensor> depth;  // T frames [H,W]
};

// Chunked audio-driven RGBD generation. The first chunk uses the replicated
// reference frame as motion context; later chunks consume the previous
// chunk's last n frames.
AnimateResult animate(const Tensor& ref_rgb, const AudioTrack& audio,
                      const pipeline::Bundle& bundle, const MotionModules& motion, int t_frames,
                      int steps, uint64_t seed);

// One full denoiser forward with the audio/temporal hook applied at every
// attention site (f frames as the batch axis). Exposed for training.
nn::Var motion_forward(const pipeline::Bundle& bundle, const MotionModules& motion, nn::Var x,
                       int level, const backbone::RefFeatures& ref_per_frame,
                       nn::Var audio_tokens, const std::vector<nn::Var>* motion_tokens);

}  // namespace motion
}  // namespace rgbd

#endif
