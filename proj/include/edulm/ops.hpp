#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "edulm/rng.hpp"
#include "edulm/tensor.hpp"

namespace edulm {

enum class GeluMode { exact, tanh };

/// Additive bias applied to attention scores of masked key positions.
inline constexpr double kMaskBias = -1e9;
/// Default target sentinel skipped by cross_entropy.
inline constexpr std::int32_t kIgnoreIndex = -100;

// Raw kernel: C[m×n] (+)= A[m×k] · B[k×n], row-major. Exposed for tests and
// benchmarks; results are independent of any threading.
template <typename T>
void gemm(const T *a, const T *b, T *c, std::size_t m, std::size_t k, std::size_t n, bool accumulate);

template <typename T>
Tensor<T> matmul(const Tensor<T> &a, const Tensor<T> &b);
template <typename T>
Tensor<T> transpose(const Tensor<T> &a);
template <typename T>
Tensor<T> reshape(const Tensor<T> &a, Shape shape);

template <typename T>
Tensor<T> add(const Tensor<T> &a, const Tensor<T> &b);
template <typename T>
Tensor<T> sub(const Tensor<T> &a, const Tensor<T> &b);
template <typename T>
Tensor<T> mul(const Tensor<T> &a, const Tensor<T> &b);
template <typename T>
Tensor<T> scale(const Tensor<T> &a, T factor);
/// x[N×D] + bias[D] broadcast over rows.
template <typename T>
Tensor<T> add_row_bias(const Tensor<T> &x, const Tensor<T> &bias);
/// x[N×in] · weight[in×out] + bias[out].
template <typename T>
Tensor<T> linear(const Tensor<T> &x, const Tensor<T> &weight, const Tensor<T> &bias);

template <typename T>
Tensor<T> gelu(const Tensor<T> &x, GeluMode mode = GeluMode::exact);
template <typename T>
Tensor<T> tanh(const Tensor<T> &x);

template <typename T>
Tensor<T> softmax(const Tensor<T> &x, std::size_t axis);
/// Log-softmax over the last axis.
template <typename T>
Tensor<T> log_softmax(const Tensor<T> &x);

/// Normalizes each row over the last dimension, then applies gain and bias.
template <typename T>
Tensor<T> layer_norm(const Tensor<T> &x, const Tensor<T> &gain, const Tensor<T> &bias, double eps);

/// Inverted dropout; identity when rate == 0.
template <typename T>
Tensor<T> dropout(const Tensor<T> &x, double rate, Rng &rng);

/// Selects rows of a 2-D table: out[i] = table[indices[i]].
template <typename T>
Tensor<T> gather_rows(const Tensor<T> &table, std::span<const std::size_t> indices);

template <typename T>
Tensor<T> sum(const Tensor<T> &x);
template <typename T>
Tensor<T> mean(const Tensor<T> &x);

/// Per-row cosine similarity of a[n×d] and b[n×d] -> [n].
template <typename T>
Tensor<T> cosine_similarity_rows(const Tensor<T> &a, const Tensor<T> &b);

template <typename T>
struct CrossEntropyResult {
    Tensor<T> loss;           // scalar
    std::size_t counted = 0;  // non-ignored positions
    bool all_ignored() const { return counted == 0; }
};

/// Mean negative log-likelihood of `targets` under softmax(logits[n×V]).
template <typename T>
CrossEntropyResult<T> cross_entropy(const Tensor<T> &logits, std::span<const std::int32_t> targets,
                                    std::int32_t ignore_index = kIgnoreIndex);

/// Scaled dot-product attention for a single head: q,k,v are [n×d].
/// Keys with mask 0 receive a kMaskBias score offset.
template <typename T>
Tensor<T> attention(const Tensor<T> &q, const Tensor<T> &k, const Tensor<T> &v, std::span<const std::uint8_t> mask);

/// Multi-head attention over a batch laid out as [batch·seq × hidden] rows.
/// key_mask is batch·seq long. Heads split the hidden dimension evenly.
template <typename T>
Tensor<T> multi_head_attention(const Tensor<T> &q, const Tensor<T> &k, const Tensor<T> &v,
                               std::span<const std::uint8_t> key_mask, std::size_t batch, std::size_t seq_len,
                               std::size_t num_heads);

}  // namespace edulm
