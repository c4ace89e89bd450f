#include "rgbd/unet.hpp"

#include <cmath>

namespace rgbd {
namespace backbone {

using nn::Var;

namespace {

Tensor conv_init(int64_t cout, int64_t cin, int64_t k, Rng& rng) {
    double std = std::sqrt(2.0 / (double)(cin * k * k));
    return randn_tensor<float>({cout, cin, k, k}, rng, std);
}

Tensor linear_init(int64_t out, int64_t in, Rng& rng) {
    double std = std::sqrt(1.0 / (double)in);
    return randn_tensor<float>({out, in}, rng, std);
}

struct Builder {
    nn::ParamStore& ps;
    std::string prefix;
    Rng& rng;

    Var conv(const std::string& name, int64_t cout, int64_t cin, int64_t k) {
        return ps.add(prefix + "." + name, conv_init(cout, cin, k, rng));
    }
    Var lin(const std::string& name, int64_t out, int64_t in) {
        return ps.add(prefix + "." + name, linear_init(out, in, rng));
    }
    Var zeros(const std::string& name, std::vector<int64_t> shape) {
        return ps.add(prefix + "." + name, Tensor(std::move(shape)));
    }
    Var ones(const std::string& name, std::vector<int64_t> shape) {
        return ps.add(prefix + "." + name, Tensor(std::move(shape), 1.0f));
    }
};

ResBlock build_res(Builder& b, const std::string& name, int in_ch, int out_ch, int time_dim) {
    ResBlock r;
    r.in_ch = in_ch;
    r.out_ch = out_ch;
    r.n1g = b.ones(name + ".n1.g", {in_ch});
    r.n1b = b.zeros(name + ".n1.b", {in_ch});
    r.c1w = b.conv(name + ".c1.w", out_ch, in_ch, 3);
    r.c1b = b.zeros(name + ".c1.b", {out_ch});
    r.tw = b.lin(name + ".t.w", out_ch, time_dim);
    r.tb = b.zeros(name + ".t.b", {out_ch});
    r.n2g = b.ones(name + ".n2.g", {out_ch});
    r.n2b = b.zeros(name + ".n2.b", {out_ch});
    r.c2w = b.conv(name + ".c2.w", out_ch, out_ch, 3);
    r.c2b = b.zeros(name + ".c2.b", {out_ch});
    if (in_ch != out_ch) {
        r.skw = b.conv(name + ".skip.w", out_ch, in_ch, 1);
        r.skb = b.zeros(name + ".skip.b", {out_ch});
    }
    return r;
}

// q/k/v run bias-free: a key bias is exactly dead under softmax shift
// invariance and would never receive gradient
AttnBlock build_attn(Builder& b, const std::string& name, int ch, int head_dim) {
    AttnBlock a;
    a.ch = ch;
    a.heads = ch / head_dim;
    a.ng = b.ones(name + ".n.g", {ch});
    a.nb = b.zeros(name + ".n.b", {ch});
    a.wq = b.lin(name + ".q.w", ch, ch);
    a.wk = b.lin(name + ".k.w", ch, ch);
    a.wv = b.lin(name + ".v.w", ch, ch);
    a.wo = b.lin(name + ".o.w", ch, ch);
    a.bo = b.zeros(name + ".o.b", {ch});
    return a;
}

Var res_forward(const ResBlock& r, Var x, Var temb_silu, int groups) {
    auto h = nn::conv2d(nn::silu(nn::group_norm(x, r.n1g, r.n1b, groups, 1e-5)), r.c1w, r.c1b,
                        1, 1);
    h = nn::add_channel_bias(h, nn::linear(temb_silu, r.tw, r.tb));
    h = nn::conv2d(nn::silu(nn::group_norm(h, r.n2g, r.n2b, groups, 1e-5)), r.c2w, r.c2b, 1, 1);
    Var skip = r.skw ? nn::conv2d(x, r.skw, r.skb, 1, 0) : x;
    return nn::add(h, skip);
}

Var attn_forward(const AttnBlock& a, Var x, int groups, const Var* ref_tokens,
                 RefFeatures* capture) {
    int64_t hh = x->value.shape[2], ww = x->value.shape[3];
    auto norm = nn::group_norm(x, a.ng, a.nb, groups, 1e-5);
    auto tokens = nn::bchw_to_tokens(norm);
    if (capture) {
        capture->sites.push_back(tokens);
        capture->shapes.push_back({x->value.shape[1], hh, ww});
    }
    Var kv = tokens;
    if (ref_tokens) kv = nn::concat_tokens(tokens, *ref_tokens);
    auto h = nn::multihead_attention(tokens, kv, a.wq, Var{}, a.wk, Var{}, a.wv, Var{}, a.wo,
                                     a.bo, a.heads);
    return nn::add(x, nn::tokens_to_bchw(h, hh, ww));
}

bool has_attn_at(const UNetConfig& cfg, int resolution) {
    for (int r : cfg.attn_resolutions)
        if (r == resolution) return true;
    return false;
}

}  // namespace

void UNetConfig::validate() const {
    require_cfg(!in_groups.empty() && in_channels() > 0, "unet: empty input channel groups");
    require_cfg(out_channels > 0, "unet: output channels must be positive");
    require_cfg(!channel_mults.empty(), "unet: channel multiplier list is empty");
    require_cfg(base_channels % groups == 0, "unet: base channels not divisible by norm groups");
    require_cfg(latent_size >= (1 << (channel_mults.size() - 1)),
                "unet: latent size too small for the multiplier list");
    for (int m : channel_mults) {
        require_cfg(m >= 1, "unet: channel multiplier must be >= 1");
        int ch = base_channels * m;
        require_cfg(ch % head_dim == 0, strf("unet: level width %d not divisible by head_dim %d",
                                             ch, head_dim));
        require_cfg(ch % groups == 0, strf("unet: level width %d not divisible by norm groups %d",
                                           ch, groups));
    }
}

int DenoiserModel::attention_site_count() const {
    int n = 1;  // mid block
    for (auto& lb : down) n += lb.has_attn ? 1 : 0;
    for (auto& lb : up) n += lb.has_attn ? 1 : 0;
    return n;
}

// channels per attention site, in forward visitation order
std::vector<int> DenoiserModel::attention_site_channels() const {
    std::vector<int> ch;
    int nlev = (int)cfg.channel_mults.size();
    auto ch_at = [&](int i) { return cfg.base_channels * cfg.channel_mults[(size_t)i]; };
    for (int i = 0; i < nlev; i++)
        if (down[(size_t)i].has_attn) ch.push_back(ch_at(i));
    ch.push_back(ch_at(nlev - 1));  // mid
    for (int i = nlev - 1; i >= 0; i--)
        if (up[(size_t)i].has_attn) ch.push_back(ch_at(i));
    return ch;
}

DenoiserModel build_unet(const UNetConfig& cfg, Rng& rng, const std::string& prefix) {
    cfg.validate();
    DenoiserModel m;
    m.cfg = cfg;
    m.prefix = prefix;
    Builder b{m.params, prefix, rng};
    int nlev = (int)cfg.channel_mults.size();
    int time_dim = cfg.time_dim();

    for (size_t i = 0; i < cfg.in_groups.size(); i++) {
        ConvPiece p;
        p.w = b.conv(strf("in_conv.%zu.w", i), cfg.base_channels, cfg.in_groups[i], 3);
        p.b = i == 0 ? b.zeros("in_conv.0.b", {cfg.base_channels}) : nullptr;
        m.in_conv.push_back(p);
    }
    m.temb0_w = b.lin("temb.0.w", time_dim, cfg.base_channels);
    m.temb0_b = b.zeros("temb.0.b", {time_dim});
    m.temb1_w = b.lin("temb.1.w", time_dim, time_dim);
    m.temb1_b = b.zeros("temb.1.b", {time_dim});

    auto ch_at = [&](int i) { return cfg.base_channels * cfg.channel_mults[(size_t)i]; };

    for (int i = 0; i < nlev; i++) {
        LevelBlock lb;
        int in_ch = i == 0 ? cfg.base_channels : ch_at(i - 1);
        int res = cfg.latent_size >> i;
        lb.res = build_res(b, strf("down.%d.res", i), in_ch, ch_at(i), time_dim);
        lb.has_attn = has_attn_at(cfg, res);
        if (lb.has_attn) lb.attn = build_attn(b, strf("down.%d.attn", i), ch_at(i), cfg.head_dim);
        if (i < nlev - 1) {
            lb.down_w = b.conv(strf("down.%d.down.w", i), ch_at(i), ch_at(i), 3);
            lb.down_b = b.zeros(strf("down.%d.down.b", i), {ch_at(i)});
        }
        m.down.push_back(lb);
    }

    int mid_ch = ch_at(nlev - 1);
    m.mid_res1 = build_res(b, "mid.res1", mid_ch, mid_ch, time_dim);
    m.mid_attn = build_attn(b, "mid.attn", mid_ch, cfg.head_dim);
    m.mid_res2 = build_res(b, "mid.res2", mid_ch, mid_ch, time_dim);

    m.up.resize((size_t)nlev);
    for (int i = nlev - 1; i >= 0; i--) {
        LevelBlock lb;
        int res = cfg.latent_size >> i;
        lb.res = build_res(b, strf("up.%d.res", i), 2 * ch_at(i), ch_at(i), time_dim);
        lb.has_attn = has_attn_at(cfg, res);
        if (lb.has_attn) lb.attn = build_attn(b, strf("up.%d.attn", i), ch_at(i), cfg.head_dim);
        if (i > 0) {
            lb.up_w = b.conv(strf("up.%d.up.w", i), ch_at(i - 1), ch_at(i), 3);
            lb.up_b = b.zeros(strf("up.%d.up.b", i), {ch_at(i - 1)});
        }
        m.up[(size_t)i] = lb;
    }

    m.out_ng = b.ones("out.n.g", {cfg.base_channels});
    m.out_nb = b.zeros("out.n.b", {cfg.base_channels});
    m.out_w = b.conv("out.c.w", cfg.out_channels, cfg.base_channels, 3);
    m.out_b = b.zeros("out.c.b", {cfg.out_channels});
    return m;
}

Var DenoiserModel::forward(Var x, const std::vector<int>& levels, const RefFeatures& ref,
                           RefFeatures* capture, const SiteHook* hook) const {
    const auto& s = x->value.shape;
    require(s.size() == 4 && s[1] == cfg.in_channels(),
            strf("unet: expected input channel axis %d, got %lld", cfg.in_channels(),
                 (long long)(s.size() == 4 ? s[1] : -1)));
    require(s[2] == cfg.latent_size && s[3] == cfg.latent_size,
            strf("unet: expected %dx%d latents, got %lldx%lld", cfg.latent_size, cfg.latent_size,
                 (long long)s[2], (long long)s[3]));
    require((int64_t)levels.size() == s[0], "unet: one noise level per batch element required");
    if (capture) {
        require_cfg(ref.unconditional, "unet: capture mode must run without reference features");
        capture->sites.clear();
        capture->shapes.clear();
    } else if (!ref.unconditional) {
        require_cfg((int)ref.sites.size() == attention_site_count(),
                    strf("reference feature site count %zu != denoiser attention sites %d",
                         ref.sites.size(), attention_site_count()));
    }

    // input conv as a sum over channel groups; appended zero groups
    // contribute exact zeros
    Var h;
    int c0 = 0;
    for (size_t i = 0; i < in_conv.size(); i++) {
        int g = cfg.in_groups[i];
        auto xi = in_conv.size() == 1 ? x : nn::slice_ch(x, c0, c0 + g);
        auto yi = nn::conv2d(xi, in_conv[i].w, in_conv[i].b, 1, 1);
        h = h ? nn::add(h, yi) : yi;
        c0 += g;
    }

    auto t0 = nn::make_leaf(sinusoidal_embedding(levels, cfg.base_channels));
    auto temb = nn::linear(nn::silu(nn::linear(t0, temb0_w, temb0_b)), temb1_w, temb1_b);
    auto temb_silu = nn::silu(temb);

    int site = 0;
    auto site_ref = [&]() -> const Var* {
        return (capture || ref.unconditional) ? nullptr : &ref.sites[(size_t)site];
    };
    auto after_site = [&](Var h) {
        if (hook) h = (*hook)(h, site);
        site++;
        return h;
    };

    int nlev = (int)cfg.channel_mults.size();
    std::vector<Var> skips;
    for (int i = 0; i < nlev; i++) {
        const auto& lb = down[(size_t)i];
        h = res_forward(lb.res, h, temb_silu, cfg.groups);
        if (lb.has_attn)
            h = after_site(attn_forward(lb.attn, h, cfg.groups, site_ref(), capture));
        skips.push_back(h);
        if (i < nlev - 1) h = nn::conv2d(h, lb.down_w, lb.down_b, 2, 1);
    }

    h = res_forward(mid_res1, h, temb_silu, cfg.groups);
    h = after_site(attn_forward(mid_attn, h, cfg.groups, site_ref(), capture));
    h = res_forward(mid_res2, h, temb_silu, cfg.groups);

    for (int i = nlev - 1; i >= 0; i--) {
        const auto& lb = up[(size_t)i];
        h = nn::concat_ch<float>({h, skips[(size_t)i]});
        h = res_forward(lb.res, h, temb_silu, cfg.groups);
        if (lb.has_attn)
            h = after_site(attn_forward(lb.attn, h, cfg.groups, site_ref(), capture));
        if (i > 0) h = nn::conv2d(nn::upsample_nearest2(h), lb.up_w, lb.up_b, 1, 1);
    }

    h = nn::conv2d(nn::silu(nn::group_norm(h, out_ng, out_nb, cfg.groups, 1e-5)), out_w, out_b,
                   1, 1);
    return h;
}

namespace {

// copy values between models by parameter-name suffix (prefix stripped)
void copy_matching(const DenoiserModel& src, DenoiserModel& dst) {
    auto suffix = [](const std::string& name, const std::string& prefix) {
        return name.substr(prefix.size());
    };
    for (size_t i = 0; i < dst.params.vars.size(); i++) {
        std::string sfx = suffix(dst.params.names[i], dst.prefix);
        for (size_t j = 0; j < src.params.vars.size(); j++) {
            if (suffix(src.params.names[j], src.prefix) != sfx) continue;
            if (src.params.vars[j]->value.same_shape(dst.params.vars[i]->value))
                dst.params.vars[i]->value = src.params.vars[j]->value;
            break;
        }
    }
}

}  // namespace

DenoiserModel clone_model(const DenoiserModel& src, const std::string& prefix) {
    Rng rng(0);
    DenoiserModel dst = build_unet(src.cfg, rng, prefix);
    for (size_t i = 0; i < src.params.vars.size(); i++)
        dst.params.vars[i]->value = src.params.vars[i]->value;
    return dst;
}

DenoiserModel expand_channels(const DenoiserModel& rgb_model) {
    require_cfg(rgb_model.cfg.in_groups == std::vector<int>{4} && rgb_model.cfg.out_channels == 4,
                "expand_channels: model already expanded (expects 4-in/4-out)");
    UNetConfig cfg = rgb_model.cfg;
    cfg.in_groups = {4, 4};
    cfg.out_channels = 8;
    Rng rng(0);
    DenoiserModel dst = build_unet(cfg, rng, rgb_model.prefix);
    copy_matching(rgb_model, dst);
    // new input group: zero weights, so the depth latent is invisible at init
    for (auto& v : dst.in_conv[1].w->value.data) v = 0.0f;
    // output layer duplicated from the original 4 channels
    const Tensor& sw = rgb_model.out_w->value;
    Tensor& dw = dst.out_w->value;
    int64_t row = sw.shape[1] * sw.shape[2] * sw.shape[3];
    for (int64_t co = 0; co < 4; co++) {
        std::copy(sw.data.begin() + co * row, sw.data.begin() + (co + 1) * row,
                  dw.data.begin() + co * row);
        std::copy(sw.data.begin() + co * row, sw.data.begin() + (co + 1) * row,
                  dw.data.begin() + (co + 4) * row);
        dst.out_b->value[co] = rgb_model.out_b->value[co];
        dst.out_b->value[co + 4] = rgb_model.out_b->value[co];
    }
    return dst;
}

DenoiserModel expand_input_channels(const DenoiserModel& model, int extra) {
    require_cfg(extra > 0, "expand_input_channels: extra channel count must be positive");
    UNetConfig cfg = model.cfg;
    cfg.in_groups.push_back(extra);
    Rng rng(0);
    DenoiserModel dst = build_unet(cfg, rng, model.prefix);
    copy_matching(model, dst);
    for (auto& v : dst.in_conv.back().w->value.data) v = 0.0f;
    return dst;
}

Tensor sinusoidal_embedding(const std::vector<int>& levels, int dim) {
    require_cfg(dim % 2 == 0, "sinusoidal embedding dim must be even");
    int half = dim / 2;
    Tensor out({(int64_t)levels.size(), dim});
    for (size_t b = 0; b < levels.size(); b++) {
        double l = (double)levels[b];
        for (int k = 0; k < half; k++) {
            double freq = std::exp(-std::log(10000.0) * (double)k / (double)half);
            out[(int64_t)b * dim + k] = (float)std::sin(l * freq);
            out[(int64_t)b * dim + half + k] = (float)std::cos(l * freq);
        }
    }
    return out;
}

RefFeatures reference_features(const DenoiserModel& refnet, const Tensor& ref_latent) {
    require(ref_latent.rank() == 4, "reference_features expects [B,4,h,w] latents");
    RefFeatures captured;
    auto none = RefFeatures::none();
    std::vector<int> levels((size_t)ref_latent.shape[0], 0);  // clean latent, level-0 semantics
    refnet.forward(nn::make_leaf(ref_latent), levels, none, &captured);
    return captured;
}

schedule::NoisePair denoise(const DenoiserModel& model, const schedule::JointLatent& z,
                            const RefFeatures& ref, int l) {
    Tensor x = unsqueeze0(cat_channels({&z.zx, &z.zd}));
    auto out = model.forward(nn::make_leaf(x), {l}, ref);
    Tensor o = squeeze0(out->value);
    schedule::NoisePair p;
    p.ex = slice_channels(o, 0, 4);
    p.ed = slice_channels(o, 4, 8);
    return p;
}

}  // namespace backbone
}  // namespace rgbd
