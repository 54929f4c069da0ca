#pragma once

// Test-only reference implementations. Nothing here calls into the code path
// it is used to check beyond evaluating the forward function being verified.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "edulm/tensor.hpp"

namespace edulm::testing {

/// Relative error with a magnitude floor below which gradients count as 1e-6.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
    const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
    return std::abs(analytic - numeric) / scale;
}

struct GradCheckResult {
    double max_relative_error = 0.0;
    std::string worst;  // "input#i[j]"
    std::size_t checked = 0;
};

/// Central finite differences over every element of every input.
/// `loss` must build a fresh scalar from `inputs`.
inline GradCheckResult check_gradients(std::vector<Tensor<double>> &inputs,
                                       const std::function<Tensor<double>(std::vector<Tensor<double>> &)> &loss,
                                       double h = 1e-4) {
    for (auto &t : inputs) {
        t.zero_grad();
        t.set_requires_grad(true);
    }
    loss(inputs).backward();
    std::vector<std::vector<double>> analytic;
    for (auto &t : inputs) {
        auto g = t.grad();
        analytic.emplace_back(g.begin(), g.end());
    }
    GradCheckResult result;
    NoGradGuard no_grad;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        auto values = inputs[i].mutable_data();
        for (std::size_t j = 0; j < values.size(); ++j) {
            const double saved = values[j];
            values[j] = saved + h;
            const double up = loss(inputs).item();
            values[j] = saved - h;
            const double down = loss(inputs).item();
            values[j] = saved;
            const double numeric = (up - down) / (2.0 * h);
            const double err = relative_error(analytic[i][j], numeric);
            ++result.checked;
            if (err > result.max_relative_error) {
                result.max_relative_error = err;
                result.worst = "input#" + std::to_string(i) + "[" + std::to_string(j) + "]";
            }
        }
    }
    return result;
}

inline std::vector<double> naive_matmul(const std::vector<double> &a, const std::vector<double> &b, std::size_t m,
                                        std::size_t k, std::size_t n) {
    std::vector<double> c(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            long double acc = 0;
            for (std::size_t p = 0; p < k; ++p) {
                acc += static_cast<long double>(a[i * k + p]) * b[p * n + j];
            }
            c[i * n + j] = static_cast<double>(acc);
        }
    }
    return c;
}

inline std::vector<double> reference_softmax(const std::vector<double> &x) {
    long double peak = *std::max_element(x.begin(), x.end());
    long double z = 0;
    for (double v : x) {
        z += std::exp(static_cast<long double>(v) - peak);
    }
    std::vector<double> out;
    for (double v : x) {
        out.push_back(static_cast<double>(std::exp(static_cast<long double>(v) - peak) / z));
    }
    return out;
}

inline std::vector<double> reference_log_softmax(const std::vector<double> &x) {
    long double peak = *std::max_element(x.begin(), x.end());
    long double z = 0;
    for (double v : x) {
        z += std::exp(static_cast<long double>(v) - peak);
    }
    std::vector<double> out;
    for (double v : x) {
        out.push_back(static_cast<double>(static_cast<long double>(v) - peak - std::log(z)));
    }
    return out;
}

}  // namespace edulm::testing
