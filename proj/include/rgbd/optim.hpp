#ifndef RGBD_OPTIM_HPP
#define RGBD_OPTIM_HPP

#include <cmath>

#include "rgbd/autograd.hpp"

namespace rgbd {
namespace nn {

class Adam {
public:
    explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(ParamStore& params) {
        if (m_.empty()) {
            for (auto& p : params.vars) {
                m_.emplace_back(p->value.shape);
                v_.emplace_back(p->value.shape);
            }
        }
        require(m_.size() == params.vars.size(), "optimizer bound to a different parameter set");
        t_++;
        double bc1 = 1.0 - std::pow(beta1_, (double)t_);
        double bc2 = 1.0 - std::pow(beta2_, (double)t_);
        for (size_t i = 0; i < params.vars.size(); i++) {
            auto& p = params.vars[i];
            if (!p->has_grad) continue;
            for (int64_t j = 0; j < p->value.numel(); j++) {
                double g = (double)p->grad[j];
                double m = beta1_ * (double)m_[i][j] + (1.0 - beta1_) * g;
                double v = beta2_ * (double)v_[i][j] + (1.0 - beta2_) * g * g;
                m_[i][j] = (float)m;
                v_[i][j] = (float)v;
                p->value[j] -= (float)(lr_ * (m / bc1) / (std::sqrt(v / bc2) + eps_));
            }
        }
    }

    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }

private:
    double lr_, beta1_, beta2_, eps_;
    int64_t t_ = 0;
    std::vector<Tensor> m_, v_;
};

}  // namespace nn
}  // namespace rgbd

#endif
