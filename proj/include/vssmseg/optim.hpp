#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "vssmseg/tensor.hpp"

namespace vssmseg::optim {

// lr = lr_min + (lr_init - lr_min) * (1 + cos(pi * (t mod t_max) / t_max)) / 2.
// Periodic: restarts at lr_init every t_max steps.
inline double cosine_lr(int64_t t, int64_t t_max, double lr_init, double lr_min) {
    if (t_max < 1) throw ValueError("cosine_lr: t_max must be >= 1");
    if (t < 0) throw ValueError("cosine_lr: step must be >= 0");
    double phase = static_cast<double>(t % t_max) / static_cast<double>(t_max);
    return lr_min + 0.5 * (lr_init - lr_min) * (1.0 + std::cos(3.14159265358979323846 * phase));
}

// AdamW with decoupled weight decay: p <- p * (1 - lr*wd) before the
// bias-corrected moment update.
template <typename T>
class AdamW {
public:
    AdamW(double lr, double weight_decay, double beta1 = 0.9, double beta2 = 0.999,
          double eps = 1e-8)
        : lr_(lr), wd_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }
    int64_t steps() const { return t_; }

    void step(std::vector<std::pair<std::string, Tensor<T>*>>& params, Tape<T>& tape) {
        if (state_.empty()) {
            state_.resize(params.size());
            for (size_t i = 0; i < params.size(); ++i) {
                state_[i].m.assign(static_cast<size_t>(params[i].second->numel()), T(0));
                state_[i].v.assign(static_cast<size_t>(params[i].second->numel()), T(0));
            }
        }
        ++t_;
        T bc1 = T(1) - static_cast<T>(std::pow(beta1_, static_cast<double>(t_)));
        T bc2 = T(1) - static_cast<T>(std::pow(beta2_, static_cast<double>(t_)));
        for (size_t i = 0; i < params.size(); ++i) {
            auto& [name, p] = params[i];
            const auto& g = tape.grad_vec(*p);
            for (T gv : g)
                if (!std::isfinite(static_cast<double>(gv)))
                    throw NumericError("adamw: non-finite gradient for parameter " + name);
            auto& st = state_[i];
            T* pd = p->data();
            T lr = static_cast<T>(lr_);
            T decay = T(1) - lr * static_cast<T>(wd_);
            for (size_t k = 0; k < g.size(); ++k) {
                st.m[k] = static_cast<T>(beta1_) * st.m[k] + (T(1) - static_cast<T>(beta1_)) * g[k];
                st.v[k] = static_cast<T>(beta2_) * st.v[k] +
                          (T(1) - static_cast<T>(beta2_)) * g[k] * g[k];
                pd[k] *= decay;
                T mhat = st.m[k] / bc1;
                T vhat = st.v[k] / bc2;
                pd[k] -= lr * mhat / (std::sqrt(vhat) + static_cast<T>(eps_));
            }
        }
    }

private:
    struct State {
        std::vector<T> m, v;
    };
    double lr_, wd_, beta1_, beta2_, eps_;
    int64_t t_ = 0;
    std::vector<State> state_;
};

}  // namespace vssmseg::optim
