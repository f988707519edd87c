#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "graph.hpp"

namespace flowinfer {

// Adam with bias correction (beta1 = 0.9, beta2 = 0.999, eps = 1e-8). The
// learning rate is supplied per step so schedules stay outside.
class AdamOptimizer {
public:
    explicit AdamOptimizer(std::vector<Parameter*> params)
        : params_(std::move(params)) {
        for (Parameter* p : params_) {
            m_.emplace_back(p->value.rows, p->value.cols, 0.0);
            v_.emplace_back(p->value.rows, p->value.cols, 0.0);
        }
    }

    void zero_grads() {
        for (Parameter* p : params_) p->zero_grad();
    }

    void step(double lr) {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            Parameter& p = *params_[i];
            for (std::size_t k = 0; k < p.value.size(); ++k) {
                const double g = p.grad.data[k];
                double& m = m_[i].data[k];
                double& v = v_[i].data[k];
                m = beta1_ * m + (1.0 - beta1_) * g;
                v = beta2_ * v + (1.0 - beta2_) * g * g;
                const double mhat = m / bc1;
                const double vhat = v / bc2;
                p.value.data[k] -= lr * mhat / (std::sqrt(vhat) + eps_);
            }
        }
    }

    long step_count() const { return t_; }

private:
    std::vector<Parameter*> params_;
    std::vector<Matrix> m_, v_;
    long t_ = 0;
    double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
};

enum class LrSchedulerKind { step, exponential };

inline LrSchedulerKind lr_scheduler_from_string(const std::string& s) {
    if (s == "StepLR") return LrSchedulerKind::step;
    if (s == "ExponentialLR") return LrSchedulerKind::exponential;
    throw std::runtime_error("unknown lr_scheduler '" + s + "' (expected StepLR or ExponentialLR)");
}

// StepLR multiplies by 0.1 every lr_step steps; ExponentialLR multiplies by
// lr_decay each step.
inline double scheduled_lr(LrSchedulerKind kind, double lr, double lr_decay, int lr_step,
                           long iter) {
    switch (kind) {
        case LrSchedulerKind::step:
            return lr * std::pow(0.1, static_cast<double>(iter / std::max(1, lr_step)));
        case LrSchedulerKind::exponential:
            return lr * std::pow(lr_decay, static_cast<double>(iter));
    }
    return lr;
}

}  // namespace flowinfer
