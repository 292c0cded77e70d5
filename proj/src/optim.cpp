#include "mosformer/optim.hpp"

#include <cmath>

namespace mosf {

double lr_at(int epoch, const LrSchedule& sched) {
    if (epoch < 0 || epoch >= sched.total_epochs) throw InputError("lr_at: epoch out of range");
    if (sched.warmup_epochs < 0 || sched.total_epochs < 1) throw ConfigError("lr_at: invalid schedule");
    if (epoch < sched.warmup_epochs) {
        const double t = static_cast<double>(epoch) / static_cast<double>(sched.warmup_epochs);
        return sched.lr_min + (sched.lr_max - sched.lr_min) * t;
    }
    const int span = sched.total_epochs - 1 - sched.warmup_epochs;
    const double progress = span <= 0 ? 1.0 : static_cast<double>(epoch - sched.warmup_epochs) / span;
    return sched.lr_min + 0.5 * (sched.lr_max - sched.lr_min) * (1.0 + std::cos(M_PI * progress));
}

template <typename T>
void sgd_step_one(std::vector<T>& param, const std::vector<T>& grad, std::vector<T>& velocity, T momentum,
                  T weight_decay, T lr) {
    if (param.size() != grad.size() || param.size() != velocity.size())
        throw DimensionError("sgd_step: parameter/gradient/velocity extents differ");
    for (std::size_t i = 0; i < param.size(); ++i) {
        velocity[i] = momentum * velocity[i] + grad[i] + weight_decay * param[i];
        param[i] -= lr * velocity[i];
    }
}

template <typename T>
void sgd_step(std::vector<Tensor<T>>& params, SgdState<T>& state) {
    if (params.size() != state.velocity.size()) throw DimensionError("sgd_step: state not attached to these params");
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        sgd_step_one(params[pi].data(), params[pi].grad(), state.velocity[pi], state.momentum, state.weight_decay,
                     state.lr);
    }
}

template void sgd_step<float>(std::vector<Tensor<float>>&, SgdState<float>&);
template void sgd_step<double>(std::vector<Tensor<double>>&, SgdState<double>&);
template void sgd_step_one<float>(std::vector<float>&, const std::vector<float>&, std::vector<float>&, float, float,
                                  float);
template void sgd_step_one<double>(std::vector<double>&, const std::vector<double>&, std::vector<double>&, double,
                                   double, double);

}  // namespace mosf
