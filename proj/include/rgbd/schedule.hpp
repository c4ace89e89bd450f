#ifndef RGBD_SCHEDULE_HPP
#define RGBD_SCHEDULE_HPP

#include <utility>
#include <vector>

#include "rgbd/rng.hpp"
#include "rgbd/tensor.hpp"

namespace rgbd {
namespace schedule {

// Variance schedule over L noise levels; level l runs 1..L, beta[l-1] holds
// the level-l variance. alpha_bar_at(0) == 1 exactly, which makes the final
// ancestral step deterministic and exact.
struct NoiseSchedule {
    int levels = 0;
    std::vector<double> beta;
    std::vector<double> alpha;
    std::vector<double> alpha_bar;

    double alpha_bar_at(int l) const {
        require_cfg(l >= 0 && l <= levels, strf("noise level %d out of [0, %d]", l, levels));
        return l == 0 ? 1.0 : alpha_bar[(size_t)(l - 1)];
    }
    double beta_at(int l) const {
        require_cfg(l >= 1 && l <= levels, strf("noise level %d out of [1, %d]", l, levels));
        return beta[(size_t)(l - 1)];
    }
    double alpha_at(int l) const {
        require_cfg(l >= 1 && l <= levels, strf("noise level %d out of [1, %d]", l, levels));
        return alpha[(size_t)(l - 1)];
    }
    // terminal marginal is effectively Gaussian
    bool terminal_is_gaussian() const { return alpha_bar_at(levels) < 1e-3; }
};

NoiseSchedule make_schedule(int levels, double beta_min, double beta_max);

// Paired appearance/depth latents at a common noise level. Concatenation
// order is always [appearance, depth].
struct JointLatent {
    Tensor zx;
    Tensor zd;
    int level = 0;
};

struct NoisePair {
    Tensor ex;
    Tensor ed;
};

// z_l = sqrt(abar) z_0 + sqrt(1 - abar) eps, with the alpha_bar given
// explicitly (endpoint cases abar = 1 and abar -> 0 are testable directly).
Tensor add_noise_alpha(const Tensor& z0, const Tensor& eps, double alpha_bar);
Tensor add_noise(const NoiseSchedule& s, const Tensor& z0, const Tensor& eps, int l);

// Applies the forward step to both domains with independent noise draws.
std::pair<JointLatent, NoisePair> add_noise_joint(const NoiseSchedule& s, const Tensor& zx0,
                                                  const Tensor& zd0, int l, Rng& rng);

// Mean squared error over the concatenated [appearance, depth] pair.
double joint_loss(const NoisePair& eps_hat, const NoisePair& eps);

// Ancestral update for one tensor; sigma_1 = 0 so the final step is
// deterministic.
Tensor ddpm_update(const NoiseSchedule& s, const Tensor& z, const Tensor& eps_hat, int l,
                   Rng& rng);
JointLatent ddpm_step(const NoiseSchedule& s, const JointLatent& zl, const NoisePair& eps_hat,
                      int l, Rng& rng);

// Deterministic update: predict z0, re-noise to l_next with the same eps_hat.
Tensor ddim_update(const NoiseSchedule& s, const Tensor& z, const Tensor& eps_hat, int l,
                   int l_next);
JointLatent ddim_step(const NoiseSchedule& s, const JointLatent& zl, const NoisePair& eps_hat,
                      int l, int l_next);

// Descending level sequence for strided DDIM sampling, ending at 0.
std::vector<int> ddim_level_sequence(int levels, int steps);

}  // namespace schedule
}  // namespace rgbd

#endif
