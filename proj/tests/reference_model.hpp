#pragma once

// Scripted 64-bit encoder forward pass written with plain loops over
// std::vector. It reads parameter values from an EncoderParams<double> but
// shares no kernels with the library.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "edulm/model.hpp"

namespace edulm::testing {

struct Matrix {
    std::size_t rows = 0, cols = 0;
    std::vector<double> v;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), v(r * c, 0.0) {}
    double &operator()(std::size_t r, std::size_t c) { return v[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return v[r * cols + c]; }
};

inline Matrix from_tensor(const Tensor<double> &t) {
    Matrix m(t.dim(0), t.rank() > 1 ? t.dim(1) : 1);
    m.v.assign(t.data().begin(), t.data().end());
    return m;
}

inline Matrix affine(const Matrix &x, const Tensor<double> &w, const Tensor<double> &b) {
    const Matrix wm = from_tensor(w);
    Matrix out(x.rows, wm.cols);
    for (std::size_t i = 0; i < x.rows; ++i) {
        for (std::size_t j = 0; j < wm.cols; ++j) {
            long double acc = b.data()[j];
            for (std::size_t p = 0; p < x.cols; ++p) {
                acc += static_cast<long double>(x(i, p)) * wm(p, j);
            }
            out(i, j) = static_cast<double>(acc);
        }
    }
    return out;
}

inline Matrix norm_rows(const Matrix &x, const Tensor<double> &gain, const Tensor<double> &bias, double eps) {
    Matrix out(x.rows, x.cols);
    for (std::size_t i = 0; i < x.rows; ++i) {
        long double mu = 0, var = 0;
        for (std::size_t j = 0; j < x.cols; ++j) {
            mu += x(i, j);
        }
        mu /= x.cols;
        for (std::size_t j = 0; j < x.cols; ++j) {
            var += (x(i, j) - mu) * (x(i, j) - mu);
        }
        var /= x.cols;
        for (std::size_t j = 0; j < x.cols; ++j) {
            out(i, j) = static_cast<double>((x(i, j) - mu) / std::sqrt(var + eps) * gain.data()[j] + bias.data()[j]);
        }
    }
    return out;
}

inline Matrix gelu_exact(Matrix x) {
    for (auto &e : x.v) {
        e = 0.5 * e * (1.0 + std::erf(e / std::sqrt(2.0)));
    }
    return x;
}

inline Matrix plus(Matrix a, const Matrix &b) {
    for (std::size_t i = 0; i < a.v.size(); ++i) {
        a.v[i] += b.v[i];
    }
    return a;
}

/// Final hidden rows [batch·len × hidden] in evaluation mode.
inline Matrix reference_encoder(const EncoderBatch &batch, const EncoderParams<double> &p, const ModelConfig &c) {
    const std::size_t n = batch.batch * batch.seq_len, h = c.hidden_size;
    Matrix x(n, h);
    const Matrix tok = from_tensor(p.word_embeddings), pos = from_tensor(p.position_embeddings),
                 seg = from_tensor(p.token_type_embeddings);
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t j = 0; j < h; ++j) {
            x(r, j) = tok(static_cast<std::size_t>(batch.ids[r]), j) + pos(r % batch.seq_len, j) +
                      seg(batch.segment_ids[r], j);
        }
    }
    x = norm_rows(x, p.embedding_norm_gain, p.embedding_norm_bias, c.layer_norm_eps);

    const std::size_t dh = h / c.num_heads;
    for (const auto &layer : p.layers) {
        const Matrix q = affine(x, layer.query_weight, layer.query_bias);
        const Matrix k = affine(x, layer.key_weight, layer.key_bias);
        const Matrix v = affine(x, layer.value_weight, layer.value_bias);
        Matrix ctx(n, h);
        for (std::size_t b = 0; b < batch.batch; ++b) {
            for (std::size_t head = 0; head < c.num_heads; ++head) {
                for (std::size_t i = 0; i < batch.seq_len; ++i) {
                    std::vector<double> w;
                    double peak = -INFINITY;
                    for (std::size_t j = 0; j < batch.seq_len; ++j) {
                        double s = 0;
                        for (std::size_t d = 0; d < dh; ++d) {
                            s += q(b * batch.seq_len + i, head * dh + d) * k(b * batch.seq_len + j, head * dh + d);
                        }
                        s /= std::sqrt(static_cast<double>(dh));
                        if (!batch.attention_mask[b * batch.seq_len + j]) {
                            s -= 1e9;
                        }
                        w.push_back(s);
                        peak = std::max(peak, s);
                    }
                    double z = 0;
                    for (auto &s : w) {
                        s = std::exp(s - peak);
                        z += s;
                    }
                    for (std::size_t d = 0; d < dh; ++d) {
                        double acc = 0;
                        for (std::size_t j = 0; j < batch.seq_len; ++j) {
                            acc += w[j] / z * v(b * batch.seq_len + j, head * dh + d);
                        }
                        ctx(b * batch.seq_len + i, head * dh + d) = acc;
                    }
                }
            }
        }
        x = norm_rows(plus(x, affine(ctx, layer.output_weight, layer.output_bias)), layer.attention_norm_gain,
                      layer.attention_norm_bias, c.layer_norm_eps);
        const Matrix inner = gelu_exact(affine(x, layer.intermediate_weight, layer.intermediate_bias));
        x = norm_rows(plus(x, affine(inner, layer.ffn_output_weight, layer.ffn_output_bias)), layer.ffn_norm_gain,
                      layer.ffn_norm_bias, c.layer_norm_eps);
    }
    return x;
}

/// MLM logits [rows × vocab] for reference hidden rows.
inline Matrix reference_mlm(const Matrix &hidden, const EncoderParams<double> &p, const ModelConfig &c) {
    const Matrix t = norm_rows(gelu_exact(affine(hidden, p.mlm_transform_weight, p.mlm_transform_bias)),
                               p.mlm_norm_gain, p.mlm_norm_bias, c.layer_norm_eps);
    const Matrix dec = from_tensor(c.tie_mlm_decoder ? p.word_embeddings : p.mlm_decoder_weight);
    Matrix out(t.rows, c.vocab_size);
    for (std::size_t i = 0; i < t.rows; ++i) {
        for (std::size_t w = 0; w < c.vocab_size; ++w) {
            double acc = p.mlm_decoder_bias.data()[w];
            for (std::size_t j = 0; j < t.cols; ++j) {
                acc += t(i, j) * dec(w, j);
            }
            out(i, w) = acc;
        }
    }
    return out;
}

}  // namespace edulm::testing
