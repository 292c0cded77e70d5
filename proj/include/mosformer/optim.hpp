#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "mosformer/tensor.hpp"

namespace mosf {

// Cosine schedule with a linear warm-up that starts at lr_min.
struct LrSchedule {
    double lr_max = 3e-2;
    double lr_min = 5e-3;
    int warmup_epochs = 5;
    int total_epochs = 300;
};

double lr_at(int epoch, const LrSchedule& sched);

// Plain (non-Nesterov) momentum with weight decay folded into the gradient:
//   v <- mu*v + g + wd*theta;  theta <- theta - lr*v
template <typename T>
struct SgdState {
    T momentum = T(0.9);
    T weight_decay = T(1e-4);
    T lr = T(1e-2);
    std::vector<std::vector<T>> velocity;  // one buffer per parameter, same extents

    void attach(const std::vector<Tensor<T>>& params) {
        velocity.clear();
        velocity.reserve(params.size());
        for (const auto& p : params) velocity.emplace_back(p.size(), T(0));
    }
};

// Updates params in place from their accumulated grads. Parameter order must
// match the order `attach` saw.
template <typename T>
void sgd_step(std::vector<Tensor<T>>& params, SgdState<T>& state);

// Single-buffer variant used by the spec-level examples and tests.
template <typename T>
void sgd_step_one(std::vector<T>& param, const std::vector<T>& grad, std::vector<T>& velocity, T momentum,
                  T weight_decay, T lr);

}  // namespace mosf
