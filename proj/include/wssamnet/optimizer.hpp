#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "wssamnet/autodiff.hpp"

namespace wssam {

struct StepSchedule {
    int step_size = 100;    // epochs between decays
    double decay = 0.5;

    void validate() const {
        if (step_size < 1) throw invalid_input_error("schedule step_size must be >= 1");
        if (!(decay > 0 && decay < 1)) throw invalid_input_error("schedule decay must be in (0,1)");
    }

    double lr_at(double base_lr, int epoch) const {
        return base_lr * std::pow(decay, double(epoch / step_size));
    }
};

struct OptimConfig {
    double learning_rate = 1e-4;
    StepSchedule schedule;
    int epochs = 1;
    int batch_size = 1;
    std::uint64_t seed = 0;
    double seg_loss_weight = 1.0;

    void validate() const {
        if (!(learning_rate > 0)) throw invalid_input_error("learning_rate must be > 0");
        if (epochs < 1) throw invalid_input_error("epochs must be >= 1");
        if (batch_size < 1) throw invalid_input_error("batch_size must be >= 1");
        if (seg_loss_weight < 0) throw invalid_input_error("seg_loss_weight must be >= 0");
        schedule.validate();
    }
};

/// Adam, first-order adaptive-moment optimizer. State vectors are aligned with
/// the bundle's stable parameter order.
template <typename T>
class Adam {
public:
    Adam() = default;
    Adam(double beta1, double beta2, double eps) : beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void ensure_slot(std::size_t slot, std::size_t n) {
        if (slot >= m_.size()) {
            m_.resize(slot + 1);
            v_.resize(slot + 1);
        }
        if (m_[slot].size() != n) {
            m_[slot].assign(n, T(0));
            v_[slot].assign(n, T(0));
        }
    }

    /// Call once per optimization step before updating the first tensor.
    void begin_step() { ++t_; }

    void update(std::size_t slot, ad::Tensor<T>& param, const ad::Tensor<T>& grad, double lr) {
        ensure_slot(slot, param.data.size());
        const double b1t = 1.0 - std::pow(beta1_, double(t_));
        const double b2t = 1.0 - std::pow(beta2_, double(t_));
        std::vector<T>& m = m_[slot];
        std::vector<T>& v = v_[slot];
        for (std::size_t i = 0; i < param.data.size(); ++i) {
            const double g = double(grad.data[i]);
            const double mn = beta1_ * double(m[i]) + (1.0 - beta1_) * g;
            const double vn = beta2_ * double(v[i]) + (1.0 - beta2_) * g * g;
            m[i] = T(mn);
            v[i] = T(vn);
            const double mhat = mn / b1t, vhat = vn / b2t;
            param.data[i] = T(double(param.data[i]) - lr * mhat / (std::sqrt(vhat) + eps_));
        }
    }

    std::int64_t step_count() const { return t_; }
    void set_step_count(std::int64_t t) { t_ = t; }

    std::vector<std::vector<T>>& moment1() { return m_; }
    std::vector<std::vector<T>>& moment2() { return v_; }

private:
    double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
    std::int64_t t_ = 0;
    std::vector<std::vector<T>> m_, v_;
};

/// Optimizer + progress state carried across checkpoint save/resume.
template <typename T>
struct TrainerState {
    Adam<T> adam;
    int epochs_completed = 0;
    std::int64_t steps_completed = 0;
};

}  // namespace wssam
