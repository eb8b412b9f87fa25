#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "fewshot/errors.hpp"
#include "fewshot/tensor.hpp"

namespace fewshot {

// One plain gradient-descent update: p -= lr * p.grad, then clear grads.
inline void sgd_step(const std::vector<Tensor*>& params, double lr) {
    if (lr <= 0.0) {
        throw ConfigError("sgd_step: learning rate must be positive, got " + std::to_string(lr));
    }
    for (Tensor* p : params) {
        if (!p->requires_grad) continue;
        for (size_t i = 0; i < p->data.size(); ++i) p->data[i] -= lr * p->grad[i];
        p->zero_grad();
    }
}

struct Optimizer {
    virtual ~Optimizer() = default;
    // Applies accumulated gradients to `params` and clears them. The set
    // and order of parameters must be the same on every call.
    virtual void step(const std::vector<Tensor*>& params) = 0;
    virtual void reset() {}
};

class Sgd final : public Optimizer {
public:
    explicit Sgd(double lr) : lr_(lr) {
        if (lr <= 0.0) {
            throw ConfigError("sgd: learning rate must be positive, got " + std::to_string(lr));
        }
    }
    void step(const std::vector<Tensor*>& params) override { sgd_step(params, lr_); }

private:
    double lr_;
};

// Adam with bias correction; moment buffers are allocated on first step.
class Adam final : public Optimizer {
public:
    explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
        if (lr <= 0.0) {
            throw ConfigError("adam: learning rate must be positive, got " + std::to_string(lr));
        }
    }

    void step(const std::vector<Tensor*>& params) override {
        if (m_.empty()) {
            for (const Tensor* p : params) {
                m_.emplace_back(p->data.size(), 0.0);
                v_.emplace_back(p->data.size(), 0.0);
            }
        }
        if (m_.size() != params.size()) {
            throw ConfigError("adam: parameter count changed between steps");
        }
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, t_);
        const double bc2 = 1.0 - std::pow(beta2_, t_);
        for (size_t k = 0; k < params.size(); ++k) {
            Tensor* p = params[k];
            if (!p->requires_grad) continue;
            if (m_[k].size() != p->data.size()) {
                throw ConfigError("adam: parameter shape changed between steps");
            }
            for (size_t i = 0; i < p->data.size(); ++i) {
                const double g = p->grad[i];
                m_[k][i] = beta1_ * m_[k][i] + (1.0 - beta1_) * g;
                v_[k][i] = beta2_ * v_[k][i] + (1.0 - beta2_) * g * g;
                const double mhat = m_[k][i] / bc1;
                const double vhat = v_[k][i] / bc2;
                p->data[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
            }
            p->zero_grad();
        }
    }

    void reset() override {
        m_.clear();
        v_.clear();
        t_ = 0;
    }

private:
    double lr_, beta1_, beta2_, eps_;
    std::vector<std::vector<double>> m_, v_;
    int t_ = 0;
};

inline std::unique_ptr<Optimizer> make_optimizer(const std::string& name, double lr) {
    if (name == "sgd") return std::make_unique<Sgd>(lr);
    if (name == "adam") return std::make_unique<Adam>(lr);
    throw ConfigError("unknown optimizer '" + name + "' (expected sgd or adam)");
}

}  // namespace fewshot
