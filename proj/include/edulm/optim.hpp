#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "edulm/tensor.hpp"

namespace edulm {

struct OptimizerHyper {
    double learning_rate = 5e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.0;

    /// Throws ConfigError when a field is out of its valid range.
    void validate() const;
};

/// Adam moments, one pair per parameter, in parameter order.
template <typename T>
struct AdamState {
    std::vector<std::vector<T>> first_moment;
    std::vector<std::vector<T>> second_moment;
    std::size_t step_count = 0;
};

/// One bias-corrected Adam update over `params`, reading each parameter's
/// accumulated gradient (a parameter without a gradient counts as zero).
/// Weight decay, when non-zero, is decoupled from the adaptive step.
/// Moments are allocated on the first call; later calls must pass the same
/// parameter list.
template <typename T>
void adam_step(std::span<Tensor<T>> params, AdamState<T> &state, const OptimizerHyper &hyper);

extern template void adam_step<float>(std::span<Tensor<float>>, AdamState<float> &, const OptimizerHyper &);
extern template void adam_step<double>(std::span<Tensor<double>>, AdamState<double> &, const OptimizerHyper &);

}  // namespace edulm
