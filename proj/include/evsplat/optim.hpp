#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace evsplat {

// Plain Adam over a flat parameter vector.
class Adam {
public:
    Adam() = default;
    explicit Adam(size_t n, double beta1 = 0.9, double beta2 = 0.999,
                  double eps = 1e-8)
        : beta1_(beta1), beta2_(beta2), eps_(eps), m_(n, 0.0), v_(n, 0.0) {}

    void resize(size_t n) {
        m_.assign(n, 0.0);
        v_.assign(n, 0.0);
        step_ = 0;
    }

    void step(std::vector<double>& params, const std::vector<double>& grads,
              double lr) {
        ++step_;
        const double bc1 = 1.0 - std::pow(beta1_, step_);
        const double bc2 = 1.0 - std::pow(beta2_, step_);
        for (size_t i = 0; i < params.size(); ++i) {
            m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grads[i];
            v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grads[i] * grads[i];
            params[i] -= lr * (m_[i] / bc1) / (std::sqrt(v_[i] / bc2) + eps_);
        }
    }

    // Grow state when parameters are appended (ADC clones/splits).
    void grow(size_t n) {
        m_.resize(n, 0.0);
        v_.resize(n, 0.0);
    }
    // Reindex state after prune/remap; -1 drops the slot, fresh slots zeroed.
    void remap(const std::vector<int>& old_index, size_t new_size) {
        std::vector<double> m(new_size, 0.0), v(new_size, 0.0);
        for (size_t i = 0; i < old_index.size() && i < new_size; ++i) {
            if (old_index[i] >= 0) {
                m[i] = m_[old_index[i]];
                v[i] = v_[old_index[i]];
            }
        }
        m_ = std::move(m);
        v_ = std::move(v);
    }

    int64_t steps() const { return step_; }
    std::vector<double>& m() { return m_; }
    std::vector<double>& v() { return v_; }
    void set_steps(int64_t s) { step_ = s; }

private:
    double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
    std::vector<double> m_, v_;
    int64_t step_ = 0;
};

// Per-iteration exponential decay from lr_start to lr_end over total steps.
inline double exp_decay_lr(double lr_start, double lr_end, int64_t iter,
                           int64_t total) {
    if (total <= 1) return lr_start;
    const double f = static_cast<double>(iter) / static_cast<double>(total - 1);
    return lr_start * std::pow(lr_end / lr_start, f);
}

}  // namespace evsplat
