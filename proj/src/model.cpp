#include "edulm/model.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <map>

#include "edulm/error.hpp"

namespace edulm {

namespace {

constexpr double kInitStd = 0.02;

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::size_t parse_size(const std::string &key, const std::string &value) {
    std::size_t out = 0;
    const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
    if (ec != std::errc() || ptr != value.data() + value.size()) {
        throw ConfigError("config key '" + key + "' expects a non-negative integer, got '" + value + "'");
    }
    return out;
}

double parse_double(const std::string &key, const std::string &value) {
    try {
        std::size_t used = 0;
        const double out = std::stod(value, &used);
        if (used != value.size()) {
            throw std::invalid_argument(value);
        }
        return out;
    } catch (const std::exception &) {
        throw ConfigError("config key '" + key + "' expects a number, got '" + value + "'");
    }
}

template <typename T>
Tensor<T> normal_tensor(Shape shape, Rng &rng) {
    std::vector<T> data(shape_numel(shape));
    for (auto &v : data) {
        v = static_cast<T>(kInitStd * rng.normal());
    }
    return Tensor<T>(std::move(shape), std::move(data));
}

}  // namespace

void ModelConfig::validate() const {
    if (vocab_size <= static_cast<std::size_t>(kNumSpecialTokens)) {
        throw ConfigError("vocab_size must exceed the special tokens");
    }
    if (hidden_size == 0 || num_layers == 0 || num_heads == 0 || ffn_size == 0 || max_positions == 0 ||
        type_vocab_size == 0 || num_labels == 0) {
        throw ConfigError("model dimensions must be positive");
    }
    if (hidden_size % num_heads != 0) {
        throw ConfigError("hidden_size " + std::to_string(hidden_size) + " is not divisible by num_heads " +
                          std::to_string(num_heads));
    }
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
        throw ConfigError("dropout_rate must lie in [0,1)");
    }
    if (!(layer_norm_eps > 0.0)) {
        throw ConfigError("layer_norm_eps must be positive");
    }
}

std::string ModelConfig::to_text() const {
    std::string out;
    auto line = [&](const char *key, const std::string &value) {
        out += key;
        out += '=';
        out += value;
        out += '\n';
    };
    line("vocab_size", std::to_string(vocab_size));
    line("hidden_size", std::to_string(hidden_size));
    line("num_layers", std::to_string(num_layers));
    line("num_heads", std::to_string(num_heads));
    line("ffn_size", std::to_string(ffn_size));
    line("max_positions", std::to_string(max_positions));
    line("type_vocab_size", std::to_string(type_vocab_size));
    line("dropout_rate", format_double(dropout_rate));
    line("num_labels", std::to_string(num_labels));
    line("tie_mlm_decoder", tie_mlm_decoder ? "true" : "false");
    line("gelu", gelu == GeluMode::exact ? "exact" : "tanh");
    line("layer_norm_eps", format_double(layer_norm_eps));
    return out;
}

ModelConfig ModelConfig::from_text(std::string_view text) {
    std::map<std::string, std::string> kv;
    std::size_t start = 0;
    while (start < text.size()) {
        std::size_t end = text.find('\n', start);
        if (end == std::string_view::npos) {
            end = text.size();
        }
        const std::string_view line = text.substr(start, end - start);
        start = end + 1;
        if (line.empty()) {
            continue;
        }
        const std::size_t eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw ConfigError("config line without '=': " + std::string(line));
        }
        kv[std::string(line.substr(0, eq))] = std::string(line.substr(eq + 1));
    }
    ModelConfig c;
    auto take = [&](const char *key) {
        const auto it = kv.find(key);
        if (it == kv.end()) {
            throw ConfigError(std::string("config is missing key '") + key + "'");
        }
        std::string value = it->second;
        kv.erase(it);
        return value;
    };
    c.vocab_size = parse_size("vocab_size", take("vocab_size"));
    c.hidden_size = parse_size("hidden_size", take("hidden_size"));
    c.num_layers = parse_size("num_layers", take("num_layers"));
    c.num_heads = parse_size("num_heads", take("num_heads"));
    c.ffn_size = parse_size("ffn_size", take("ffn_size"));
    c.max_positions = parse_size("max_positions", take("max_positions"));
    c.type_vocab_size = parse_size("type_vocab_size", take("type_vocab_size"));
    c.dropout_rate = parse_double("dropout_rate", take("dropout_rate"));
    c.num_labels = parse_size("num_labels", take("num_labels"));
    const std::string tie = take("tie_mlm_decoder");
    if (tie != "true" && tie != "false") {
        throw ConfigError("tie_mlm_decoder must be true or false");
    }
    c.tie_mlm_decoder = tie == "true";
    const std::string gelu = take("gelu");
    if (gelu != "exact" && gelu != "tanh") {
        throw ConfigError("gelu must be exact or tanh");
    }
    c.gelu = gelu == "exact" ? GeluMode::exact : GeluMode::tanh;
    c.layer_norm_eps = parse_double("layer_norm_eps", take("layer_norm_eps"));
    if (!kv.empty()) {
        throw ConfigError("unknown config key '" + kv.begin()->first + "'");
    }
    c.validate();
    return c;
}

std::vector<std::pair<std::string, Shape>> parameter_layout(const ModelConfig &config) {
    config.validate();
    const std::size_t h = config.hidden_size, f = config.ffn_size, v = config.vocab_size;
    std::vector<std::pair<std::string, Shape>> out{
        {"embeddings.word_embeddings.weight", {v, h}},
        {"embeddings.position_embeddings.weight", {config.max_positions, h}},
        {"embeddings.token_type_embeddings.weight", {config.type_vocab_size, h}},
        {"embeddings.layer_norm.gain", {h}},
        {"embeddings.layer_norm.bias", {h}},
    };
    for (std::size_t i = 0; i < config.num_layers; ++i) {
        const std::string p = "encoder.layer." + std::to_string(i) + ".";
        for (const char *proj : {"query", "key", "value", "output"}) {
            out.push_back({p + "attention." + proj + ".weight", {h, h}});
            out.push_back({p + "attention." + proj + ".bias", {h}});
        }
        out.push_back({p + "attention.layer_norm.gain", {h}});
        out.push_back({p + "attention.layer_norm.bias", {h}});
        out.push_back({p + "ffn.intermediate.weight", {h, f}});
        out.push_back({p + "ffn.intermediate.bias", {f}});
        out.push_back({p + "ffn.output.weight", {f, h}});
        out.push_back({p + "ffn.output.bias", {h}});
        out.push_back({p + "ffn.layer_norm.gain", {h}});
        out.push_back({p + "ffn.layer_norm.bias", {h}});
    }
    out.push_back({"mlm.transform.weight", {h, h}});
    out.push_back({"mlm.transform.bias", {h}});
    out.push_back({"mlm.layer_norm.gain", {h}});
    out.push_back({"mlm.layer_norm.bias", {h}});
    if (!config.tie_mlm_decoder) {
        out.push_back({"mlm.decoder.weight", {v, h}});
    }
    out.push_back({"mlm.decoder.bias", {v}});
    out.push_back({"pooler.weight", {h, h}});
    out.push_back({"pooler.bias", {h}});
    out.push_back({"classifier.weight", {h, config.num_labels}});
    out.push_back({"classifier.bias", {config.num_labels}});
    return out;
}

std::size_t count_encoder_block_parameters(const ModelConfig &config) {
    const std::size_t h = config.hidden_size, f = config.ffn_size;
    const std::size_t attention = 4 * (h * h + h);
    const std::size_t norms = 2 * 2 * h;
    const std::size_t ffn = (h * f + f) + (f * h + h);
    return config.num_layers * (attention + norms + ffn);
}

std::size_t count_parameters(const ModelConfig &config) {
    config.validate();
    const std::size_t h = config.hidden_size, v = config.vocab_size;
    const std::size_t embeddings = (v + config.max_positions + config.type_vocab_size) * h + 2 * h;
    const std::size_t mlm = (h * h + h) + 2 * h + (config.tie_mlm_decoder ? 0 : v * h) + v;
    const std::size_t heads = (h * h + h) + (h * config.num_labels + config.num_labels);
    return embeddings + count_encoder_block_parameters(config) + mlm + heads;
}

template <typename T>
EncoderParams<T> EncoderParams<T>::init(const ModelConfig &config, Rng &rng) {
    config.validate();
    EncoderParams p;
    const std::size_t h = config.hidden_size, f = config.ffn_size, v = config.vocab_size;
    auto ones = [](std::size_t n) { return Tensor<T>::full({n}, T(1)); };
    auto zeros = [](std::size_t n) { return Tensor<T>::zeros({n}); };
    p.word_embeddings = normal_tensor<T>({v, h}, rng);
    p.position_embeddings = normal_tensor<T>({config.max_positions, h}, rng);
    p.token_type_embeddings = normal_tensor<T>({config.type_vocab_size, h}, rng);
    p.embedding_norm_gain = ones(h);
    p.embedding_norm_bias = zeros(h);
    for (std::size_t i = 0; i < config.num_layers; ++i) {
        LayerParams<T> layer;
        layer.query_weight = normal_tensor<T>({h, h}, rng);
        layer.query_bias = zeros(h);
        layer.key_weight = normal_tensor<T>({h, h}, rng);
        layer.key_bias = zeros(h);
        layer.value_weight = normal_tensor<T>({h, h}, rng);
        layer.value_bias = zeros(h);
        layer.output_weight = normal_tensor<T>({h, h}, rng);
        layer.output_bias = zeros(h);
        layer.attention_norm_gain = ones(h);
        layer.attention_norm_bias = zeros(h);
        layer.intermediate_weight = normal_tensor<T>({h, f}, rng);
        layer.intermediate_bias = zeros(f);
        layer.ffn_output_weight = normal_tensor<T>({f, h}, rng);
        layer.ffn_output_bias = zeros(h);
        layer.ffn_norm_gain = ones(h);
        layer.ffn_norm_bias = zeros(h);
        p.layers.push_back(std::move(layer));
    }
    p.mlm_transform_weight = normal_tensor<T>({h, h}, rng);
    p.mlm_transform_bias = zeros(h);
    p.mlm_norm_gain = ones(h);
    p.mlm_norm_bias = zeros(h);
    if (!config.tie_mlm_decoder) {
        p.mlm_decoder_weight = normal_tensor<T>({v, h}, rng);
    }
    p.mlm_decoder_bias = zeros(v);
    p.pooler_weight = normal_tensor<T>({h, h}, rng);
    p.pooler_bias = zeros(h);
    p.classifier_weight = normal_tensor<T>({h, config.num_labels}, rng);
    p.classifier_bias = zeros(config.num_labels);
    return p;
}

template <typename T>
std::vector<Tensor<T>> EncoderParams<T>::tensors() const {
    std::vector<Tensor<T>> out;
    for_each([&](const std::string &, const Tensor<T> &t) { out.push_back(t); });
    return out;
}

template <typename T>
std::vector<std::string> EncoderParams<T>::names() const {
    std::vector<std::string> out;
    for_each([&](const std::string &name, const Tensor<T> &) { out.push_back(name); });
    return out;
}

template <typename T>
EncoderParams<T> EncoderParams<T>::clone() const {
    EncoderParams copy = *this;
    copy.for_each([](const std::string &, Tensor<T> &t) { t = t.clone(); });
    return copy;
}

template <typename T>
void EncoderParams<T>::set_requires_grad(bool value) {
    for_each([value](const std::string &, Tensor<T> &t) { t.set_requires_grad(value); });
}

template <typename T>
void EncoderParams<T>::zero_grad() {
    for_each([](const std::string &, Tensor<T> &t) { t.zero_grad(); });
}

template <typename T>
std::size_t EncoderParams<T>::parameter_count() const {
    std::size_t n = 0;
    for_each([&](const std::string &, const Tensor<T> &t) { n += t.numel(); });
    return n;
}

template <typename T>
template <typename U>
EncoderParams<U> EncoderParams<T>::cast_to() const {
    EncoderParams<U> out;
    auto conv = [](const Tensor<T> &t) { return t ? cast<U>(t) : Tensor<U>(); };
    out.word_embeddings = conv(word_embeddings);
    out.position_embeddings = conv(position_embeddings);
    out.token_type_embeddings = conv(token_type_embeddings);
    out.embedding_norm_gain = conv(embedding_norm_gain);
    out.embedding_norm_bias = conv(embedding_norm_bias);
    for (const auto &l : layers) {
        LayerParams<U> c;
        c.query_weight = conv(l.query_weight);
        c.query_bias = conv(l.query_bias);
        c.key_weight = conv(l.key_weight);
        c.key_bias = conv(l.key_bias);
        c.value_weight = conv(l.value_weight);
        c.value_bias = conv(l.value_bias);
        c.output_weight = conv(l.output_weight);
        c.output_bias = conv(l.output_bias);
        c.attention_norm_gain = conv(l.attention_norm_gain);
        c.attention_norm_bias = conv(l.attention_norm_bias);
        c.intermediate_weight = conv(l.intermediate_weight);
        c.intermediate_bias = conv(l.intermediate_bias);
        c.ffn_output_weight = conv(l.ffn_output_weight);
        c.ffn_output_bias = conv(l.ffn_output_bias);
        c.ffn_norm_gain = conv(l.ffn_norm_gain);
        c.ffn_norm_bias = conv(l.ffn_norm_bias);
        out.layers.push_back(std::move(c));
    }
    out.mlm_transform_weight = conv(mlm_transform_weight);
    out.mlm_transform_bias = conv(mlm_transform_bias);
    out.mlm_norm_gain = conv(mlm_norm_gain);
    out.mlm_norm_bias = conv(mlm_norm_bias);
    out.mlm_decoder_weight = conv(mlm_decoder_weight);
    out.mlm_decoder_bias = conv(mlm_decoder_bias);
    out.pooler_weight = conv(pooler_weight);
    out.pooler_bias = conv(pooler_bias);
    out.classifier_weight = conv(classifier_weight);
    out.classifier_bias = conv(classifier_bias);
    return out;
}

EncoderBatch make_batch(std::span<const TokenSequence> sequences, bool trim_padding) {
    if (sequences.empty()) {
        throw InputError("cannot build an empty batch");
    }
    const std::size_t full_len = sequences.front().length();
    std::size_t len = full_len;
    if (trim_padding) {
        len = 0;
        for (const auto &s : sequences) {
            // last active position + 1
            std::size_t last = 0;
            for (std::size_t i = 0; i < s.attention_mask.size(); ++i) {
                if (s.attention_mask[i]) {
                    last = i + 1;
                }
            }
            len = std::max(len, last);
        }
        len = std::max<std::size_t>(len, 1);
    }
    EncoderBatch b;
    b.batch = sequences.size();
    b.seq_len = len;
    for (const auto &s : sequences) {
        if (s.length() != full_len || s.attention_mask.size() != full_len || s.segment_ids.size() != full_len) {
            throw ShapeError("batch sequences must share one padded length");
        }
        b.ids.insert(b.ids.end(), s.ids.begin(), s.ids.begin() + static_cast<std::ptrdiff_t>(len));
        b.attention_mask.insert(b.attention_mask.end(), s.attention_mask.begin(),
                                s.attention_mask.begin() + static_cast<std::ptrdiff_t>(len));
        b.segment_ids.insert(b.segment_ids.end(), s.segment_ids.begin(),
                             s.segment_ids.begin() + static_cast<std::ptrdiff_t>(len));
    }
    return b;
}

template <typename T>
Tensor<T> encoder_hidden_rows(const EncoderBatch &batch, const EncoderParams<T> &params, const ModelConfig &config,
                              bool train_mode, Rng *dropout_rng) {
    const std::size_t n = batch.batch * batch.seq_len;
    if (n == 0 || batch.ids.size() != n || batch.attention_mask.size() != n || batch.segment_ids.size() != n) {
        throw ShapeError("encoder batch arrays disagree with batch x seq_len");
    }
    if (batch.seq_len > config.max_positions) {
        throw InputError("sequence length " + std::to_string(batch.seq_len) + " exceeds max_positions " +
                         std::to_string(config.max_positions));
    }
    if (params.layers.size() != config.num_layers) {
        throw ShapeError("parameter set has " + std::to_string(params.layers.size()) + " layers, config " +
                         std::to_string(config.num_layers));
    }
    const bool use_dropout = train_mode && config.dropout_rate > 0.0;
    if (use_dropout && dropout_rng == nullptr) {
        throw UsageError("train-mode forward with dropout needs an rng");
    }
    std::vector<std::size_t> token_rows(n), position_rows(n), segment_rows(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::int32_t id = batch.ids[i];
        if (id < 0 || static_cast<std::size_t>(id) >= config.vocab_size) {
            throw InputError("token id " + std::to_string(id) + " outside vocabulary of " +
                             std::to_string(config.vocab_size));
        }
        token_rows[i] = static_cast<std::size_t>(id);
        position_rows[i] = i % batch.seq_len;
        segment_rows[i] = batch.segment_ids[i];
    }
    auto maybe_dropout = [&](const Tensor<T> &x) { return use_dropout ? dropout(x, config.dropout_rate, *dropout_rng) : x; };

    Tensor<T> x = add(add(gather_rows(params.word_embeddings, token_rows),
                          gather_rows(params.position_embeddings, position_rows)),
                      gather_rows(params.token_type_embeddings, segment_rows));
    x = maybe_dropout(layer_norm(x, params.embedding_norm_gain, params.embedding_norm_bias, config.layer_norm_eps));

    for (const auto &layer : params.layers) {
        const Tensor<T> q = linear(x, layer.query_weight, layer.query_bias);
        const Tensor<T> k = linear(x, layer.key_weight, layer.key_bias);
        const Tensor<T> v = linear(x, layer.value_weight, layer.value_bias);
        const Tensor<T> context =
            multi_head_attention(q, k, v, batch.attention_mask, batch.batch, batch.seq_len, config.num_heads);
        const Tensor<T> attended = maybe_dropout(linear(context, layer.output_weight, layer.output_bias));
        x = layer_norm(add(x, attended), layer.attention_norm_gain, layer.attention_norm_bias, config.layer_norm_eps);

        const Tensor<T> inner = gelu(linear(x, layer.intermediate_weight, layer.intermediate_bias), config.gelu);
        const Tensor<T> ffn = maybe_dropout(linear(inner, layer.ffn_output_weight, layer.ffn_output_bias));
        x = layer_norm(add(x, ffn), layer.ffn_norm_gain, layer.ffn_norm_bias, config.layer_norm_eps);
    }
    return x;
}

template <typename T>
Tensor<T> forward_encoder(const EncoderBatch &batch, const EncoderParams<T> &params, const ModelConfig &config,
                          bool train_mode, Rng *dropout_rng) {
    return reshape(encoder_hidden_rows(batch, params, config, train_mode, dropout_rng),
                   {batch.batch, batch.seq_len, config.hidden_size});
}

template <typename T>
Tensor<T> mlm_head_rows(const Tensor<T> &rows, const EncoderParams<T> &params, const ModelConfig &config) {
    const Tensor<T> transformed = layer_norm(
        gelu(linear(rows, params.mlm_transform_weight, params.mlm_transform_bias), config.gelu), params.mlm_norm_gain,
        params.mlm_norm_bias, config.layer_norm_eps);
    return add_row_bias(matmul(transformed, transpose(params.decoder_matrix())), params.mlm_decoder_bias);
}

template <typename T>
Tensor<T> mlm_logits(const Tensor<T> &hidden, const EncoderParams<T> &params, const ModelConfig &config) {
    if (hidden.rank() != 3) {
        throw ShapeError("mlm_logits expects [batch x seq x hidden], got " + shape_to_string(hidden.shape()));
    }
    const std::size_t b = hidden.dim(0), s = hidden.dim(1);
    const Tensor<T> rows = reshape(hidden, {b * s, hidden.dim(2)});
    return reshape(mlm_head_rows(rows, params, config), {b, s, config.vocab_size});
}

template <typename T>
Tensor<T> cls_logits(const Tensor<T> &hidden, const EncoderParams<T> &params, const ModelConfig &config,
                     bool train_mode, Rng *dropout_rng) {
    if (hidden.rank() != 3) {
        throw ShapeError("cls_logits expects [batch x seq x hidden], got " + shape_to_string(hidden.shape()));
    }
    if (params.classifier_weight.dim(1) != config.num_labels) {
        throw ShapeError("classifier head width disagrees with num_labels");
    }
    const std::size_t b = hidden.dim(0), s = hidden.dim(1);
    std::vector<std::size_t> cls_rows(b);
    for (std::size_t i = 0; i < b; ++i) {
        cls_rows[i] = i * s;
    }
    const Tensor<T> rows = reshape(hidden, {b * s, hidden.dim(2)});
    Tensor<T> pooled = edulm::tanh(linear(gather_rows(rows, cls_rows), params.pooler_weight, params.pooler_bias));
    if (train_mode && config.dropout_rate > 0.0) {
        if (dropout_rng == nullptr) {
            throw UsageError("train-mode classifier with dropout needs an rng");
        }
        pooled = dropout(pooled, config.dropout_rate, *dropout_rng);
    }
    return linear(pooled, params.classifier_weight, params.classifier_bias);
}

template struct EncoderParams<float>;
template struct EncoderParams<double>;
template EncoderParams<double> EncoderParams<float>::cast_to<double>() const;
template EncoderParams<float> EncoderParams<double>::cast_to<float>() const;
template EncoderParams<float> EncoderParams<float>::cast_to<float>() const;

#define EDULM_INSTANTIATE_MODEL(T)                                                                                 \
    template Tensor<T> encoder_hidden_rows(const EncoderBatch &, const EncoderParams<T> &, const ModelConfig &,     \
                                           bool, Rng *);                                                           \
    template Tensor<T> forward_encoder(const EncoderBatch &, const EncoderParams<T> &, const ModelConfig &, bool,   \
                                       Rng *);                                                                     \
    template Tensor<T> mlm_head_rows(const Tensor<T> &, const EncoderParams<T> &, const ModelConfig &);            \
    template Tensor<T> mlm_logits(const Tensor<T> &, const EncoderParams<T> &, const ModelConfig &);               \
    template Tensor<T> cls_logits(const Tensor<T> &, const EncoderParams<T> &, const ModelConfig &, bool, Rng *);

EDULM_INSTANTIATE_MODEL(float)
EDULM_INSTANTIATE_MODEL(double)

#undef EDULM_INSTANTIATE_MODEL

}  // namespace edulm
