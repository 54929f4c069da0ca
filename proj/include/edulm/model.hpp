#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "edulm/ops.hpp"
#include "edulm/rng.hpp"
#include "edulm/tensor.hpp"
#include "edulm/tokenizer.hpp"

namespace edulm {

struct ModelConfig {
    std::size_t vocab_size = 2000;
    std::size_t hidden_size = 128;
    std::size_t num_layers = 4;
    std::size_t num_heads = 4;
    std::size_t ffn_size = 512;
    std::size_t max_positions = 512;
    std::size_t type_vocab_size = 2;
    double dropout_rate = 0.1;
    std::size_t num_labels = 2;
    bool tie_mlm_decoder = true;
    GeluMode gelu = GeluMode::exact;
    double layer_norm_eps = 1e-12;

    void validate() const;
    /// Canonical `key=value` lines in a fixed order.
    std::string to_text() const;
    /// Inverse of to_text; unknown or missing keys are a ConfigError.
    static ModelConfig from_text(std::string_view text);

    bool operator==(const ModelConfig &) const = default;
};

template <typename T>
struct LayerParams {
    Tensor<T> query_weight, query_bias;
    Tensor<T> key_weight, key_bias;
    Tensor<T> value_weight, value_bias;
    Tensor<T> output_weight, output_bias;
    Tensor<T> attention_norm_gain, attention_norm_bias;
    Tensor<T> intermediate_weight, intermediate_bias;
    Tensor<T> ffn_output_weight, ffn_output_bias;
    Tensor<T> ffn_norm_gain, ffn_norm_bias;

    template <typename F>
    void for_each(const std::string &prefix, F &&fn) {
        fn(prefix + "attention.query.weight", query_weight);
        fn(prefix + "attention.query.bias", query_bias);
        fn(prefix + "attention.key.weight", key_weight);
        fn(prefix + "attention.key.bias", key_bias);
        fn(prefix + "attention.value.weight", value_weight);
        fn(prefix + "attention.value.bias", value_bias);
        fn(prefix + "attention.output.weight", output_weight);
        fn(prefix + "attention.output.bias", output_bias);
        fn(prefix + "attention.layer_norm.gain", attention_norm_gain);
        fn(prefix + "attention.layer_norm.bias", attention_norm_bias);
        fn(prefix + "ffn.intermediate.weight", intermediate_weight);
        fn(prefix + "ffn.intermediate.bias", intermediate_bias);
        fn(prefix + "ffn.output.weight", ffn_output_weight);
        fn(prefix + "ffn.output.bias", ffn_output_bias);
        fn(prefix + "ffn.layer_norm.gain", ffn_norm_gain);
        fn(prefix + "ffn.layer_norm.bias", ffn_norm_bias);
    }
};

/// Every trainable tensor of the encoder and its heads. Weight matrices are
/// stored [in × out]; embedding tables and the MLM decoder are [rows × hidden].
template <typename T>
struct EncoderParams {
    Tensor<T> word_embeddings, position_embeddings, token_type_embeddings;
    Tensor<T> embedding_norm_gain, embedding_norm_bias;
    std::vector<LayerParams<T>> layers;
    Tensor<T> mlm_transform_weight, mlm_transform_bias;
    Tensor<T> mlm_norm_gain, mlm_norm_bias;
    Tensor<T> mlm_decoder_weight;  // empty handle when tied to word_embeddings
    Tensor<T> mlm_decoder_bias;
    Tensor<T> pooler_weight, pooler_bias;
    Tensor<T> classifier_weight, classifier_bias;

    /// BERT-style initialization: N(0, 0.02) weights, zero biases, unit gains.
    static EncoderParams init(const ModelConfig &config, Rng &rng);

    /// Visits (name, tensor) in canonical checkpoint order. Tied decoders are skipped.
    template <typename F>
    void for_each(F &&fn) {
        fn("embeddings.word_embeddings.weight", word_embeddings);
        fn("embeddings.position_embeddings.weight", position_embeddings);
        fn("embeddings.token_type_embeddings.weight", token_type_embeddings);
        fn("embeddings.layer_norm.gain", embedding_norm_gain);
        fn("embeddings.layer_norm.bias", embedding_norm_bias);
        for (std::size_t i = 0; i < layers.size(); ++i) {
            layers[i].for_each("encoder.layer." + std::to_string(i) + ".", fn);
        }
        fn("mlm.transform.weight", mlm_transform_weight);
        fn("mlm.transform.bias", mlm_transform_bias);
        fn("mlm.layer_norm.gain", mlm_norm_gain);
        fn("mlm.layer_norm.bias", mlm_norm_bias);
        if (mlm_decoder_weight) {
            fn("mlm.decoder.weight", mlm_decoder_weight);
        }
        fn("mlm.decoder.bias", mlm_decoder_bias);
        fn("pooler.weight", pooler_weight);
        fn("pooler.bias", pooler_bias);
        fn("classifier.weight", classifier_weight);
        fn("classifier.bias", classifier_bias);
    }
    template <typename F>
    void for_each(F &&fn) const {
        const_cast<EncoderParams *>(this)->for_each(
            [&](const std::string &name, Tensor<T> &t) { fn(name, static_cast<const Tensor<T> &>(t)); });
    }

    /// Handles to every tensor in canonical order (shares storage).
    std::vector<Tensor<T>> tensors() const;
    std::vector<std::string> names() const;
    /// Matrix used to decode MLM logits: word_embeddings when tied.
    const Tensor<T> &decoder_matrix() const { return mlm_decoder_weight ? mlm_decoder_weight : word_embeddings; }

    EncoderParams clone() const;
    void set_requires_grad(bool value);
    void zero_grad();
    std::size_t parameter_count() const;

    template <typename U>
    EncoderParams<U> cast_to() const;
};

/// Expected (name, shape) table implied by a config, in canonical order.
std::vector<std::pair<std::string, Shape>> parameter_layout(const ModelConfig &config);

/// Exact analytic parameter count.
std::size_t count_parameters(const ModelConfig &config);
/// Parameters inside the transformer blocks only (all layers).
std::size_t count_encoder_block_parameters(const ModelConfig &config);

/// Token ids, masks and segments for a batch of equal-length sequences.
struct EncoderBatch {
    std::size_t batch = 0;
    std::size_t seq_len = 0;
    std::vector<std::int32_t> ids;
    std::vector<std::uint8_t> attention_mask;
    std::vector<std::uint8_t> segment_ids;
};

/// Packs sequences into a batch. With trim_padding, the length is cut to the
/// longest active sequence (outputs at active positions are unaffected).
EncoderBatch make_batch(std::span<const TokenSequence> sequences, bool trim_padding = true);

/// Encoder output as [batch·seq_len × hidden] rows.
template <typename T>
Tensor<T> encoder_hidden_rows(const EncoderBatch &batch, const EncoderParams<T> &params, const ModelConfig &config,
                              bool train_mode, Rng *dropout_rng = nullptr);

/// Hidden states [batch × seq_len × hidden].
template <typename T>
Tensor<T> forward_encoder(const EncoderBatch &batch, const EncoderParams<T> &params, const ModelConfig &config,
                          bool train_mode, Rng *dropout_rng = nullptr);

/// MLM head applied to selected hidden rows [n × hidden] -> [n × vocab].
template <typename T>
Tensor<T> mlm_head_rows(const Tensor<T> &rows, const EncoderParams<T> &params, const ModelConfig &config);

/// MLM logits for every position: [batch × seq_len × vocab].
template <typename T>
Tensor<T> mlm_logits(const Tensor<T> &hidden, const EncoderParams<T> &params, const ModelConfig &config);

/// Classifier logits from the tanh-pooled [CLS] position: [batch × num_labels].
template <typename T>
Tensor<T> cls_logits(const Tensor<T> &hidden, const EncoderParams<T> &params, const ModelConfig &config,
                     bool train_mode = false, Rng *dropout_rng = nullptr);

}  // namespace edulm
