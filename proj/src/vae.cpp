#include "rgbd/vae.hpp"

#include <cmath>

namespace rgbd {
namespace vae {

using nn::Var;

Tensor DepthNormalization::normalize_map(const Tensor& depth, Tensor* in_range) const {
    validate();
    Tensor out(depth.shape);
    if (in_range) *in_range = Tensor(depth.shape, 1.0f);
    for (int64_t i = 0; i < depth.numel(); i++) {
        double v = ((double)depth[i] - near) / (far - near) * 2.0 - 1.0;
        if (v < -1.0 || v > 1.0) {
            if (in_range) (*in_range)[i] = 0.0f;
            v = v < -1.0 ? -1.0 : 1.0;
        }
        out[i] = (float)v;
    }
    return out;
}

Tensor DepthNormalization::denormalize_map(const Tensor& values) const {
    validate();
    Tensor out(values.shape);
    for (int64_t i = 0; i < values.numel(); i++) out[i] = denormalize(values[i]);
    return out;
}

namespace {

Tensor conv_init(int64_t cout, int64_t cin, int64_t k, Rng& rng) {
    double std = std::sqrt(2.0 / (double)(cin * k * k));
    return randn_tensor<float>({cout, cin, k, k}, rng, std);
}

VaeRes build_res(nn::ParamStore& ps, const std::string& name, int in_ch, int out_ch, Rng& rng) {
    VaeRes r;
    r.in_ch = in_ch;
    r.out_ch = out_ch;
    r.n1g = ps.add(name + ".n1.g", Tensor({in_ch}, 1.0f));
    r.n1b = ps.add(name + ".n1.b", Tensor({in_ch}));
    r.c1w = ps.add(name + ".c1.w", conv_init(out_ch, in_ch, 3, rng));
    r.c1b = ps.add(name + ".c1.b", Tensor({out_ch}));
    r.n2g = ps.add(name + ".n2.g", Tensor({out_ch}, 1.0f));
    r.n2b = ps.add(name + ".n2.b", Tensor({out_ch}));
    r.c2w = ps.add(name + ".c2.w", conv_init(out_ch, out_ch, 3, rng));
    r.c2b = ps.add(name + ".c2.b", Tensor({out_ch}));
    if (in_ch != out_ch) {
        r.skw = ps.add(name + ".skip.w", conv_init(out_ch, in_ch, 1, rng));
        r.skb = ps.add(name + ".skip.b", Tensor({out_ch}));
    }
    return r;
}

Var res_forward(const VaeRes& r, Var x, int groups) {
    auto h = nn::conv2d(nn::silu(nn::group_norm(x, r.n1g, r.n1b, groups, 1e-5)), r.c1w, r.c1b,
                        1, 1);
    h = nn::conv2d(nn::silu(nn::group_norm(h, r.n2g, r.n2b, groups, 1e-5)), r.c2w, r.c2b, 1, 1);
    Var skip = r.skw ? nn::conv2d(x, r.skw, r.skb, 1, 0) : x;
    return nn::add(h, skip);
}

}  // namespace

VAE build_vae(const VAEConfig& cfg, Rng& rng, const std::string& prefix) {
    require_cfg(cfg.base_channels % cfg.groups == 0,
                "vae: base channels not divisible by norm groups");
    VAE v;
    v.cfg = cfg;
    auto& ps = v.params;
    int b = cfg.base_channels, b2 = 2 * cfg.base_channels, lat = cfg.latent_channels;
    std::vector<int> enc_in = {b, b, b2};
    std::vector<int> enc_out = {b, b2, b2};

    v.enc_in_w = ps.add(prefix + ".enc.in.w", conv_init(b, 3, 3, rng));
    v.enc_in_b = ps.add(prefix + ".enc.in.b", Tensor({b}));
    for (int i = 0; i < 3; i++) {
        v.enc_res.push_back(build_res(ps, strf("%s.enc.%d.res", prefix.c_str(), i), enc_in[i],
                                      enc_out[i], rng));
        v.enc_down_w.push_back(ps.add(strf("%s.enc.%d.down.w", prefix.c_str(), i),
                                      conv_init(enc_out[i], enc_out[i], 3, rng)));
        v.enc_down_b.push_back(
            ps.add(strf("%s.enc.%d.down.b", prefix.c_str(), i), Tensor({enc_out[i]})));
    }
    v.enc_mid = build_res(ps, prefix + ".enc.mid", b2, b2, rng);
    v.enc_out_ng = ps.add(prefix + ".enc.out.n.g", Tensor({b2}, 1.0f));
    v.enc_out_nb = ps.add(prefix + ".enc.out.n.b", Tensor({b2}));
    v.enc_out_w = ps.add(prefix + ".enc.out.w", conv_init(2 * lat, b2, 3, rng));
    v.enc_out_b = ps.add(prefix + ".enc.out.b", Tensor({2 * lat}));

    v.dec_in_w = ps.add(prefix + ".dec.in.w", conv_init(b2, lat, 3, rng));
    v.dec_in_b = ps.add(prefix + ".dec.in.b", Tensor({b2}));
    v.dec_mid = build_res(ps, prefix + ".dec.mid", b2, b2, rng);
    std::vector<int> up_in = {b, b2, b2};   // conv input channels at stage i
    std::vector<int> up_out = {b, b, b2};   // conv output channels at stage i
    v.dec_up_w.resize(3);
    v.dec_up_b.resize(3);
    v.dec_res.resize(3);
    for (int i = 2; i >= 0; i--) {
        v.dec_up_w[(size_t)i] = ps.add(strf("%s.dec.%d.up.w", prefix.c_str(), i),
                                       conv_init(up_out[i], up_in[i], 3, rng));
        v.dec_up_b[(size_t)i] =
            ps.add(strf("%s.dec.%d.up.b", prefix.c_str(), i), Tensor({up_out[i]}));
        v.dec_res[(size_t)i] =
            build_res(ps, strf("%s.dec.%d.res", prefix.c_str(), i), up_out[i], up_out[i], rng);
    }
    v.dec_out_ng = ps.add(prefix + ".dec.out.n.g", Tensor({b}, 1.0f));
    v.dec_out_nb = ps.add(prefix + ".dec.out.n.b", Tensor({b}));
    v.dec_out_w = ps.add(prefix + ".dec.out.w", conv_init(3, b, 3, rng));
    v.dec_out_b = ps.add(prefix + ".dec.out.b", Tensor({3}));
    return v;
}

std::pair<Var, Var> VAE::encode_graph(Var x) const {
    const auto& s = x->value.shape;
    require(s.size() == 4 && s[1] == 3, "vae encode expects [B,3,H,W]");
    require_cfg(s[2] % 8 == 0 && s[3] % 8 == 0,
                strf("vae: image size %lldx%lld not divisible by 8", (long long)s[2],
                     (long long)s[3]));
    auto h = nn::conv2d(x, enc_in_w, enc_in_b, 1, 1);
    for (int i = 0; i < 3; i++) {
        h = res_forward(enc_res[(size_t)i], h, cfg.groups);
        h = nn::conv2d(h, enc_down_w[(size_t)i], enc_down_b[(size_t)i], 2, 1);
    }
    h = res_forward(enc_mid, h, cfg.groups);
    h = nn::conv2d(nn::silu(nn::group_norm(h, enc_out_ng, enc_out_nb, cfg.groups, 1e-5)),
                   enc_out_w, enc_out_b, 1, 1);
    auto mu = nn::slice_ch(h, 0, cfg.latent_channels);
    auto logvar = nn::slice_ch(h, cfg.latent_channels, 2 * cfg.latent_channels);
    return {mu, logvar};
}

Var VAE::decode_graph(Var z) const {
    const auto& s = z->value.shape;
    require(s.size() == 4 && s[1] == cfg.latent_channels,
            strf("vae decode expects [B,%d,h,w], got channel axis %lld", cfg.latent_channels,
                 (long long)(s.size() == 4 ? s[1] : -1)));
    auto h = nn::conv2d(z, dec_in_w, dec_in_b, 1, 1);
    h = res_forward(dec_mid, h, cfg.groups);
    for (int i = 2; i >= 0; i--) {
        h = nn::conv2d(nn::upsample_nearest2(h), dec_up_w[(size_t)i], dec_up_b[(size_t)i], 1, 1);
        h = res_forward(dec_res[(size_t)i], h, cfg.groups);
    }
    h = nn::conv2d(nn::silu(nn::group_norm(h, dec_out_ng, dec_out_nb, cfg.groups, 1e-5)),
                   dec_out_w, dec_out_b, 1, 1);
    return nn::tanh_act(h);
}

LatentCode VAE::encode(const Tensor& image, bool training, Rng* rng) const {
    require(image.rank() == 3 && image.shape[0] == 3, "vae encode expects [3,H,W]");
    nn::NoGradGuard ng;
    auto [mu, logvar] = encode_graph(nn::make_leaf(unsqueeze0(image)));
    LatentCode out;
    out.domain = LatentCode::Domain::appearance;
    out.values = squeeze0(mu->value);
    if (training) {
        require(rng != nullptr, "vae: training-mode encode needs an RNG");
        for (int64_t i = 0; i < out.values.numel(); i++)
            out.values[i] +=
                (float)(std::exp(0.5 * (double)logvar->value[i]) * rng->normal());
    }
    return out;
}

Tensor VAE::decode(const LatentCode& z) const {
    nn::NoGradGuard ng;
    auto out = decode_graph(nn::make_leaf(unsqueeze0(z.values)));
    return squeeze0(out->value);
}

LatentCode VAE::encode_depth(const Tensor& depth, const DepthNormalization& norm, bool training,
                             Rng* rng) const {
    require(depth.rank() == 2, "encode_depth expects [H,W]");
    Tensor n = norm.normalize_map(depth);
    Tensor rep({3, depth.shape[0], depth.shape[1]});
    for (int c = 0; c < 3; c++)
        std::copy(n.data.begin(), n.data.end(), rep.data.begin() + c * n.numel());
    LatentCode out = encode(rep, training, rng);
    out.domain = LatentCode::Domain::depth;
    return out;
}

Tensor VAE::decode_depth(const LatentCode& z, const DepthNormalization& norm) const {
    Tensor img = decode(z);
    Tensor d({img.shape[1], img.shape[2]});
    int64_t hw = d.numel();
    for (int64_t i = 0; i < hw; i++)
        d[i] = (img[i] + img[hw + i] + img[2 * hw + i]) / 3.0f;
    return norm.denormalize_map(d);
}

double gaussian_kl(const Tensor& mu, const Tensor& logvar) {
    require(mu.same_shape(logvar), "gaussian_kl: mu/logvar shape mismatch");
    double acc = 0;
    for (int64_t i = 0; i < mu.numel(); i++) {
        double m = mu[i], lv = logvar[i];
        acc += 0.5 * (m * m + std::exp(lv) - 1.0 - lv);
    }
    return acc / (double)mu.numel();
}

VaeStepResult vae_train_step(VAE& v, const std::vector<Tensor>& batch, nn::Adam& opt, Rng& rng,
                             double lambda_kl) {
    require(!batch.empty(), "vae_train_step: empty batch");
    int64_t h = batch[0].shape[1], w = batch[0].shape[2];
    Tensor x({(int64_t)batch.size(), 3, h, w});
    for (size_t i = 0; i < batch.size(); i++) {
        require(batch[i].rank() == 3 && batch[i].shape[0] == 3 && batch[i].shape[1] == h &&
                    batch[i].shape[2] == w,
                "vae_train_step: inconsistent batch shapes");
        std::copy(batch[i].data.begin(), batch[i].data.end(),
                  x.data.begin() + (int64_t)i * batch[i].numel());
    }
    auto xv = nn::make_leaf(x);
    auto [mu, logvar] = v.encode_graph(xv);
    auto eps = nn::make_leaf(randn_tensor<float>(mu->value.shape, rng));
    auto z = nn::add(mu, nn::mul(nn::exp_act(nn::scale(logvar, 0.5)), eps));
    auto xhat = v.decode_graph(z);
    auto recon = nn::mse(xhat, xv);
    // 0.5 * mean(mu^2 + exp(lv) - 1 - lv)
    auto kl = nn::scale(
        nn::mean_all(nn::sub(nn::add(nn::mul(mu, mu), nn::exp_act(logvar)),
                             nn::add_scalar(logvar, 1.0))),
        0.5);
    auto loss = nn::add(recon, nn::scale(kl, lambda_kl));

    v.params.zero_grad();
    nn::backward(loss);
    opt.step(v.params);

    VaeStepResult r;
    r.recon_loss = recon->value[0];
    r.kl_loss = kl->value[0];
    return r;
}

}  // namespace vae
}  // namespace rgbd
