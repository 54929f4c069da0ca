#include "edulm/optim.hpp"

#include <cmath>
#include <string>

#include "edulm/error.hpp"

namespace edulm {

void OptimizerHyper::validate() const {
    if (!(learning_rate > 0.0)) {
        throw ConfigError("learning_rate must be positive");
    }
    if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) {
        throw ConfigError("beta1 and beta2 must lie in (0,1)");
    }
    if (!(epsilon > 0.0)) {
        throw ConfigError("epsilon must be positive");
    }
    if (!(weight_decay >= 0.0)) {
        throw ConfigError("weight_decay must be non-negative");
    }
}

template <typename T>
void adam_step(std::span<Tensor<T>> params, AdamState<T> &state, const OptimizerHyper &hyper) {
    hyper.validate();
    if (state.step_count == 0 && state.first_moment.empty()) {
        for (const auto &p : params) {
            state.first_moment.emplace_back(p.numel(), T(0));
            state.second_moment.emplace_back(p.numel(), T(0));
        }
    }
    if (state.first_moment.size() != params.size() || state.second_moment.size() != params.size()) {
        throw ShapeError("adam_step: state tracks " + std::to_string(state.first_moment.size()) +
                         " parameters, got " + std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (state.first_moment[i].size() != params[i].numel() || state.second_moment[i].size() != params[i].numel()) {
            throw ShapeError("adam_step: moment shape mismatch for parameter " + std::to_string(i));
        }
    }

    state.step_count += 1;
    const double t = static_cast<double>(state.step_count);
    const double correction1 = 1.0 - std::pow(hyper.beta1, t);
    const double correction2 = 1.0 - std::pow(hyper.beta2, t);
    const double lr = hyper.learning_rate;

    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor<T> &p = params[i];
        auto values = p.mutable_data();
        const bool has_grad = p.has_grad();
        const std::span<const T> grad = has_grad ? p.grad() : std::span<const T>{};
        auto &m = state.first_moment[i];
        auto &v = state.second_moment[i];
        for (std::size_t j = 0; j < values.size(); ++j) {
            const double g = has_grad ? static_cast<double>(grad[j]) : 0.0;
            m[j] = static_cast<T>(hyper.beta1 * m[j] + (1.0 - hyper.beta1) * g);
            v[j] = static_cast<T>(hyper.beta2 * v[j] + (1.0 - hyper.beta2) * g * g);
            const double m_hat = m[j] / correction1;
            const double v_hat = v[j] / correction2;
            double update = lr * m_hat / (std::sqrt(v_hat) + hyper.epsilon);
            if (hyper.weight_decay > 0.0) {
                update += lr * hyper.weight_decay * static_cast<double>(values[j]);
            }
            const T next = static_cast<T>(static_cast<double>(values[j]) - update);
            if (!std::isfinite(next)) {
                throw NumericError("adam_step produced a non-finite parameter value");
            }
            values[j] = next;
        }
    }
}

template void adam_step<float>(std::span<Tensor<float>>, AdamState<float> &, const OptimizerHyper &);
template void adam_step<double>(std::span<Tensor<double>>, AdamState<double> &, const OptimizerHyper &);

}  // namespace edulm
