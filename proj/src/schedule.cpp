#include "rgbd/schedule.hpp"

#include <algorithm>
#include <cmath>

namespace rgbd {
namespace schedule {

NoiseSchedule make_schedule(int levels, double beta_min, double beta_max) {
    require_cfg(levels >= 1, "schedule needs at least one level");
    require_cfg(0.0 < beta_min && beta_min <= beta_max && beta_max < 1.0,
                strf("beta range (%g, %g) must satisfy 0 < min <= max < 1", beta_min, beta_max));
    NoiseSchedule s;
    s.levels = levels;
    s.beta.resize((size_t)levels);
    s.alpha.resize((size_t)levels);
    s.alpha_bar.resize((size_t)levels);
    double prod = 1.0;
    for (int l = 0; l < levels; l++) {
        double t = levels == 1 ? 0.0 : (double)l / (double)(levels - 1);
        s.beta[(size_t)l] = beta_min + (beta_max - beta_min) * t;
        s.alpha[(size_t)l] = 1.0 - s.beta[(size_t)l];
        prod *= s.alpha[(size_t)l];
        s.alpha_bar[(size_t)l] = prod;
    }
    return s;
}

Tensor add_noise_alpha(const Tensor& z0, const Tensor& eps, double alpha_bar) {
    require(z0.same_shape(eps),
            "add_noise: latent/noise shape mismatch " + z0.shape_str() + " vs " + eps.shape_str());
    float a = (float)std::sqrt(alpha_bar);
    float b = (float)std::sqrt(1.0 - alpha_bar);
    Tensor out(z0.shape);
    for (int64_t i = 0; i < out.numel(); i++) out[i] = a * z0[i] + b * eps[i];
    return out;
}

Tensor add_noise(const NoiseSchedule& s, const Tensor& z0, const Tensor& eps, int l) {
    require_cfg(l >= 1 && l <= s.levels, strf("noise level %d out of [1, %d]", l, s.levels));
    return add_noise_alpha(z0, eps, s.alpha_bar_at(l));
}

std::pair<JointLatent, NoisePair> add_noise_joint(const NoiseSchedule& s, const Tensor& zx0,
                                                  const Tensor& zd0, int l, Rng& rng) {
    require(zx0.same_shape(zd0), "joint latents must share a shape, got " + zx0.shape_str() +
                                     " vs " + zd0.shape_str());
    NoisePair eps;
    eps.ex = randn_tensor<float>(zx0.shape, rng);
    eps.ed = randn_tensor<float>(zd0.shape, rng);
    JointLatent out;
    out.zx = add_noise(s, zx0, eps.ex, l);
    out.zd = add_noise(s, zd0, eps.ed, l);
    out.level = l;
    return {std::move(out), std::move(eps)};
}

double joint_loss(const NoisePair& eps_hat, const NoisePair& eps) {
    require(eps_hat.ex.same_shape(eps.ex) && eps_hat.ed.same_shape(eps.ed),
            "joint_loss shape mismatch");
    double acc = 0;
    for (int64_t i = 0; i < eps.ex.numel(); i++) {
        double d = (double)eps_hat.ex[i] - (double)eps.ex[i];
        acc += d * d;
    }
    for (int64_t i = 0; i < eps.ed.numel(); i++) {
        double d = (double)eps_hat.ed[i] - (double)eps.ed[i];
        acc += d * d;
    }
    return acc / (double)(eps.ex.numel() + eps.ed.numel());
}

Tensor ddpm_update(const NoiseSchedule& s, const Tensor& z, const Tensor& eps_hat, int l,
                   Rng& rng) {
    require_cfg(l >= 1 && l <= s.levels,
                strf("ddpm_step: level %d out of [1, %d] (nothing to denoise at 0)", l, s.levels));
    require(z.same_shape(eps_hat), "ddpm_step: latent/noise shape mismatch");
    double abar = s.alpha_bar_at(l);
    double abar_prev = s.alpha_bar_at(l - 1);
    double beta = s.beta_at(l);
    double alpha = s.alpha_at(l);
    double coef = beta / std::sqrt(1.0 - abar);
    double inv_sqrt_alpha = 1.0 / std::sqrt(alpha);
    double sigma = l == 1 ? 0.0 : std::sqrt(beta * (1.0 - abar_prev) / (1.0 - abar));
    Tensor out(z.shape);
    for (int64_t i = 0; i < out.numel(); i++) {
        double v = ((double)z[i] - coef * (double)eps_hat[i]) * inv_sqrt_alpha;
        if (sigma > 0) v += sigma * rng.normal();
        out[i] = (float)v;
    }
    return out;
}

JointLatent ddpm_step(const NoiseSchedule& s, const JointLatent& zl, const NoisePair& eps_hat,
                      int l, Rng& rng) {
    JointLatent out;
    out.zx = ddpm_update(s, zl.zx, eps_hat.ex, l, rng);
    out.zd = ddpm_update(s, zl.zd, eps_hat.ed, l, rng);
    out.level = l - 1;
    return out;
}

Tensor ddim_update(const NoiseSchedule& s, const Tensor& z, const Tensor& eps_hat, int l,
                   int l_next) {
    require_cfg(l >= 1 && l <= s.levels, strf("ddim_step: level %d out of [1, %d]", l, s.levels));
    require_cfg(l_next < l && l_next >= 0,
                strf("ddim_step: target level %d must be below current level %d", l_next, l));
    require(z.same_shape(eps_hat), "ddim_step: latent/noise shape mismatch");
    double abar = s.alpha_bar_at(l);
    double abar_next = s.alpha_bar_at(l_next);
    double inv_sqrt_abar = 1.0 / std::sqrt(abar);
    double c1 = std::sqrt(1.0 - abar);
    double a2 = std::sqrt(abar_next);
    double c2 = std::sqrt(1.0 - abar_next);
    Tensor out(z.shape);
    for (int64_t i = 0; i < out.numel(); i++) {
        double z0 = ((double)z[i] - c1 * (double)eps_hat[i]) * inv_sqrt_abar;
        out[i] = (float)(a2 * z0 + c2 * (double)eps_hat[i]);
    }
    return out;
}

JointLatent ddim_step(const NoiseSchedule& s, const JointLatent& zl, const NoisePair& eps_hat,
                      int l, int l_next) {
    JointLatent out;
    out.zx = ddim_update(s, zl.zx, eps_hat.ex, l, l_next);
    out.zd = ddim_update(s, zl.zd, eps_hat.ed, l, l_next);
    out.level = l_next;
    return out;
}

std::vector<int> ddim_level_sequence(int levels, int steps) {
    require_cfg(levels >= 1 && steps >= 1, "ddim sequence needs levels >= 1 and steps >= 1");
    std::vector<int> seq;
    for (int i = steps; i >= 0; i--) {
        int l = (int)std::llround((double)levels * (double)i / (double)steps);
        if (seq.empty() || l < seq.back()) seq.push_back(l);
    }
    if (seq.back() != 0) seq.push_back(0);
    return seq;
}

}  // namespace schedule
}  // namespace rgbd
