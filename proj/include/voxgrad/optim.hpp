#pragma once

#include <cmath>
#include <vector>

#include "voxgrad/errors.hpp"
#include "voxgrad/tensor.hpp"

namespace voxgrad {

struct OptimConfig {
    double learning_rate = 0.01;  // beta
    double momentum = 0.9;
    double weight_decay = 0.0;

    void validate() const {
        // lr 0 is deliberately allowed: "no-op training" is a documented case.
        if (learning_rate < 0.0 || !std::isfinite(learning_rate)) {
            throw ConfigError("optim: learning rate must be finite and >= 0");
        }
        if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("optim: momentum must be in [0,1)");
        if (weight_decay < 0.0) throw ConfigError("optim: weight decay must be >= 0");
    }
};

// One update: v <- momentum*v + (grad + wd*w); w <- w - lr*v. With zero
// momentum this reduces to plain w <- w - lr*grad. `velocity`, when given,
// must stay positionally aligned with `weights` across calls.
inline void sgd_step(const std::vector<Tensor*>& weights, const OptimConfig& cfg,
                     std::vector<std::vector<double>>* velocity = nullptr) {
    cfg.validate();
    if (velocity && velocity->size() != weights.size()) velocity->resize(weights.size());
    for (std::size_t i = 0; i < weights.size(); ++i) {
        Tensor& w = *weights[i];
        if (!w.has_grad()) throw ConfigError("sgd_step: parameter " + std::to_string(i) + " has no gradient");
        std::vector<double>* v = nullptr;
        if (velocity && cfg.momentum != 0.0) {
            v = &(*velocity)[i];
            if (v->size() != w.numel()) v->assign(w.numel(), 0.0);
        }
        for (std::size_t j = 0; j < w.numel(); ++j) {
            double g = w.grad[j] + cfg.weight_decay * w.data[j];
            if (v) {
                (*v)[j] = cfg.momentum * (*v)[j] + g;
                g = (*v)[j];
            }
            w.data[j] -= cfg.learning_rate * g;
        }
    }
}

}  // namespace voxgrad
