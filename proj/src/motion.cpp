#include "rgbd/motion.hpp"

#include <cmath>

namespace rgbd {
namespace motion {

using backbone::RefFeatures;
using nn::Var;
using pipeline::Bundle;

MotionModules build_motion_modules(const backbone::DenoiserModel& base, const MotionConfig& cfg,
                                   Rng& rng, const std::string& prefix) {
    require_cfg(cfg.audio_window % 2 == 1, "audio window length must be odd");
    require_cfg(cfg.n_motion >= 1 && cfg.frames_per_seq >= 1, "bad motion frame configuration");
    MotionModules m;
    m.cfg = cfg;
    auto site_ch = base.attention_site_channels();
    auto lin = [&](const std::string& name, int64_t out, int64_t in) {
        double std = std::sqrt(1.0 / (double)in);
        return m.params.add(name, randn_tensor<float>({out, in}, rng, std));
    };
    for (size_t i = 0; i < site_ch.size(); i++) {
        MotionSite s;
        s.ch = site_ch[i];
        s.heads = std::max(1, s.ch / base.cfg.head_dim);
        std::string p = strf("%s.%zu", prefix.c_str(), i);
        s.a_ng = m.params.add(p + ".audio.n.g", Tensor({s.ch}, 1.0f));
        s.a_nb = m.params.add(p + ".audio.n.b", Tensor({s.ch}));
        s.a_wq = lin(p + ".audio.q.w", s.ch, s.ch);
        s.a_wk = lin(p + ".audio.k.w", s.ch, cfg.audio_dim);
        s.a_wv = lin(p + ".audio.v.w", s.ch, cfg.audio_dim);
        s.a_wo = m.params.add(p + ".audio.o.w", Tensor({s.ch, s.ch}));  // zero init
        s.a_bo = m.params.add(p + ".audio.o.b", Tensor({s.ch}));
        s.t_ng = m.params.add(p + ".temporal.n.g", Tensor({s.ch}, 1.0f));
        s.t_nb = m.params.add(p + ".temporal.n.b", Tensor({s.ch}));
        s.t_wq = lin(p + ".temporal.q.w", s.ch, s.ch);
        s.t_wk = lin(p + ".temporal.k.w", s.ch, s.ch);
        s.t_wv = lin(p + ".temporal.v.w", s.ch, s.ch);
        s.t_wo = m.params.add(p + ".temporal.o.w", Tensor({s.ch, s.ch}));  // zero init
        s.t_bo = m.params.add(p + ".temporal.o.b", Tensor({s.ch}));
        m.sites.push_back(s);
    }
    return m;
}

Tensor audio_window(const AudioTrack& track, int t, int k) {
    require(track.features.numel() > 0, "audio_window: empty track");
    require_cfg(k % 2 == 1, "audio window length must be odd");
    int64_t tt = track.features.shape[0], a = track.features.shape[1];
    Tensor out({(int64_t)k * a});
    for (int i = 0; i < k; i++) {
        int64_t src = (int64_t)t + i - (k - 1) / 2;
        src = std::clamp<int64_t>(src, 0, tt - 1);  // edge replication
        std::copy(track.features.ptr() + src * a, track.features.ptr() + (src + 1) * a,
                  out.ptr() + (int64_t)i * a);
    }
    return out;
}

Tensor audio_window_batch(const AudioTrack& track, int t0, int f, int k) {
    int64_t a = track.features.shape[1];
    Tensor out({(int64_t)f, (int64_t)k, a});
    for (int i = 0; i < f; i++) {
        Tensor w = audio_window(track, t0 + i, k);
        std::copy(w.data.begin(), w.data.end(), out.data.begin() + (int64_t)i * k * a);
    }
    return out;
}

Var audio_attention(const MotionSite& site, Var feats, Var audio_tokens, int groups) {
    const auto& fs = feats->value.shape;
    require(fs.size() == 4 && fs[1] == site.ch, "audio_attention: feature shape mismatch");
    require(audio_tokens->value.shape.size() == 3 && audio_tokens->value.shape[0] == fs[0],
            strf("audio_attention: %lld frames of features but %lld frames of audio",
                 (long long)fs[0], (long long)audio_tokens->value.shape[0]));
    int64_t h = fs[2], w = fs[3];
    auto tokens = nn::bchw_to_tokens(nn::group_norm(feats, site.a_ng, site.a_nb, groups, 1e-5));
    auto out = nn::multihead_attention(tokens, audio_tokens, site.a_wq, Var{}, site.a_wk, Var{},
                                       site.a_wv, Var{}, site.a_wo, site.a_bo, site.heads);
    return nn::add(feats, nn::tokens_to_bchw(out, h, w));
}

Var temporal_attention(const MotionSite& site, Var feats, Var motion_tokens, int groups) {
    const auto& fs = feats->value.shape;
    require(fs.size() == 4 && fs[1] == site.ch, "temporal_attention: feature shape mismatch");
    int64_t f = fs[0], h = fs[2], w = fs[3], hw = h * w;
    int64_t n = 0;
    if (motion_tokens) {
        const auto& ms = motion_tokens->value.shape;
        require(ms.size() == 3 && ms[0] == hw && ms[2] == site.ch,
                "temporal_attention: motion features not spatially aligned with this site");
        n = ms[1];
    }
    // [f,C,h,w] -> [hw, f, C]
    auto cur = nn::transpose_01(
        nn::bchw_to_tokens(nn::group_norm(feats, site.t_ng, site.t_nb, groups, 1e-5)));
    Var seq = motion_tokens ? nn::concat_tokens(motion_tokens, cur) : cur;
    // sinusoidal position encoding over the concatenated temporal axis
    std::vector<int> pos((size_t)(n + f));
    for (size_t i = 0; i < pos.size(); i++) pos[i] = (int)i;
    Tensor pe = backbone::sinusoidal_embedding(pos, site.ch);
    auto pe_var = nn::repeat_batch(
        nn::make_leaf(pe.reshaped({1, n + f, (int64_t)site.ch})), hw);
    seq = nn::add(seq, pe_var);
    auto out = nn::multihead_attention(seq, seq, site.t_wq, Var{}, site.t_wk, Var{}, site.t_wv,
                                       Var{}, site.t_wo, site.t_bo, site.heads);
    auto kept = nn::slice_tokens(out, n, n + f);        // only current-frame outputs
    auto back = nn::tokens_to_bchw(nn::transpose_01(kept), h, w);
    return nn::add(feats, back);
}

std::vector<Var> motion_context_features(const backbone::DenoiserModel& refnet,
                                         const std::vector<Tensor>& context_latents) {
    require(!context_latents.empty(), "motion context needs at least one frame");
    std::vector<std::vector<Var>> per_site;
    for (const auto& lat : context_latents) {
        auto feats = backbone::reference_features(refnet, unsqueeze0(lat));
        if (per_site.empty()) per_site.resize(feats.sites.size());
        for (size_t s = 0; s < feats.sites.size(); s++) per_site[s].push_back(feats.sites[s]);
    }
    // stack n frames: each site [1,hw,C] x n -> [hw, n, C]
    std::vector<Var> out;
    for (auto& frames : per_site) {
        Var stacked;
        for (auto& fvar : frames) {
            Var t = nn::transpose_01(fvar);  // [hw, 1, C]
            stacked = stacked ? nn::concat_tokens(stacked, t) : t;
        }
        out.push_back(stacked);
    }
    return out;
}

Var motion_forward(const Bundle& bundle, const MotionModules& motion, Var x, int level,
                   const RefFeatures& ref_per_frame, Var audio_tokens,
                   const std::vector<Var>* motion_tokens) {
    int64_t f = x->value.shape[0];
    int groups = bundle.unet.cfg.groups;
    backbone::DenoiserModel::SiteHook hook = [&](Var h, int site) {
        const auto& ms = motion.sites[(size_t)site];
        h = audio_attention(ms, h, audio_tokens, groups);
        Var mt = motion_tokens ? (*motion_tokens)[(size_t)site] : Var{};
        return temporal_attention(ms, h, mt, groups);
    };
    std::vector<int> levels((size_t)f, level);
    return bundle.unet.forward(x, levels, ref_per_frame, nullptr, &hook);
}

AnimateResult animate(const Tensor& ref_rgb, const AudioTrack& audio, const Bundle& bundle,
                      const MotionModules& motion, int t_frames, int steps, uint64_t seed) {
    require_cfg(bundle.has_refnet, "animate needs the joint-stage reference network");
    require_cfg(bundle.unet.cfg.in_channels() == 8,
                "animate runs on the joint (8-channel) backbone");
    require_cfg(t_frames >= 1, "animate: frame count must be positive");
    require_cfg((int64_t)t_frames <= audio.features.shape[0],
                strf("audio track has %lld frames but %d were requested",
                     (long long)audio.features.shape[0], t_frames));
    nn::NoGradGuard ng;
    Rng rng(seed);
    const auto& sched = bundle.sched;
    int lat = bundle.latent_size();
    int fps_chunk = motion.cfg.frames_per_seq;
    int n_motion = motion.cfg.n_motion;
    int k = motion.cfg.audio_window;

    Tensor zref = bundle.encode_image_scaled(ref_rgb);
    auto ref_single = backbone::reference_features(bundle.refnet, unsqueeze0(zref));

    // motion context for the first chunk: the reference frame replicated
    std::vector<Tensor> context((size_t)n_motion, zref);

    AnimateResult res;
    int done = 0;
    while (done < t_frames) {
        int f = std::min(fps_chunk, t_frames - done);
        // per-frame reference features: broadcast the single reference
        RefFeatures ref_f;
        for (auto& site : ref_single.sites) ref_f.sites.push_back(nn::repeat_batch(site, f));
        ref_f.shapes = ref_single.shapes;

        auto mctx = motion_context_features(bundle.refnet, context);
        Var audio_tokens =
            nn::make_leaf(audio_window_batch(audio, done, f, k));

        Tensor z({(int64_t)f, 8, lat, lat});
        for (auto& v : z.data) v = (float)rng.normal();
        auto seq = schedule::ddim_level_sequence(sched.levels, steps);
        for (size_t i = 0; i + 1 < seq.size(); i++) {
            int l = seq[i], l_next = seq[i + 1];
            auto eps = motion_forward(bundle, motion, nn::make_leaf(z), l, ref_f, audio_tokens,
                                      &mctx);
            z = schedule::ddim_update(sched, z, eps->value, l, l_next);
        }
        // decode frames and roll the motion context
        std::vector<Tensor> new_context;
        for (int t = 0; t < f; t++) {
            Tensor frame = Tensor({8, (int64_t)lat, (int64_t)lat});
            std::copy(z.data.begin() + (int64_t)t * 8 * lat * lat,
                      z.data.begin() + (int64_t)(t + 1) * 8 * lat * lat, frame.data.begin());
            Tensor zx = slice_channels(frame, 0, 4);
            Tensor zd = slice_channels(frame, 4, 8);
            res.rgb.push_back(bundle.decode_image_scaled(zx));
            res.depth.push_back(bundle.decode_depth_scaled(zd));
            new_context.push_back(zx);
        }
        while ((int)new_context.size() > n_motion)
            new_context.erase(new_context.begin());
        while ((int)new_context.size() < n_motion)
            new_context.insert(new_context.begin(), context.back());
        context = new_context;
        done += f;
    }
    return res;
}

}  // namespace motion
}  // namespace rgbd
