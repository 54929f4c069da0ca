#include "edulm/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "edulm/error.hpp"
#include "edulm/log.hpp"
#include "edulm/ops.hpp"

namespace edulm {

namespace {

constexpr double kInitStd = 0.02;

using Clock = std::chrono::steady_clock;

std::vector<std::size_t> shuffled_indices(std::size_t n, Rng rng) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = n; i > 1; --i) {
        std::swap(order[i - 1], order[rng.uniform_index(i)]);
    }
    return order;
}

Tensor<float> normal_init(Shape shape, Rng &rng) {
    std::vector<float> data(shape_numel(shape));
    for (auto &v : data) {
        v = static_cast<float>(kInitStd * rng.normal());
    }
    return Tensor<float>(std::move(shape), std::move(data));
}

double elapsed_seconds(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

void finish_epoch(std::vector<EpochStats> &history, std::size_t epoch, double loss_sum, double weight,
                  double lr, Clock::time_point start, std::ostream *log, std::string_view phase) {
    EpochStats stats{epoch, weight > 0 ? loss_sum / weight : 0.0, lr, elapsed_seconds(start)};
    history.push_back(stats);
    if (log != nullptr) {
        *log << format_epoch_line(stats, phase) << '\n';
        log->flush();
    }
}

// Evaluation-mode MLM pass over the corpus; calls visit(logits, targets) per batch.
template <typename Visit>
void for_each_mlm_batch(const Checkpoint &model, std::span<const TokenSequence> corpus, double mask_rate,
                        std::uint64_t seed, std::size_t batch_size, Visit &&visit) {
    if (batch_size == 0) {
        throw ConfigError("batch_size must be positive");
    }
    NoGradGuard no_grad;
    Rng mask_rng(seed);
    std::vector<std::size_t> indices(corpus.size());
    std::iota(indices.begin(), indices.end(), 0);
    for (std::size_t start = 0; start < corpus.size(); start += batch_size) {
        const std::size_t end = std::min(corpus.size(), start + batch_size);
        const auto mb = make_mlm_batch(corpus, std::span(indices).subspan(start, end - start), mask_rate,
                                       model.config.vocab_size, mask_rng);
        if (!mb) {
            continue;
        }
        const auto hidden = encoder_hidden_rows(mb->batch, model.params, model.config, false);
        visit(mlm_head_rows(gather_rows(hidden, mb->rows), model.params, model.config), mb->targets);
    }
}

}  // namespace

void PretrainHyper::validate() const {
    if (!(learning_rate > 0.0)) {
        throw ConfigError("learning_rate must be positive");
    }
    if (batch_size == 0) {
        throw ConfigError("batch_size must be positive");
    }
    if (epochs == 0) {
        throw ConfigError("epochs must be at least 1");
    }
    if (max_len < 3) {
        throw ConfigError("max_len must be at least 3");
    }
    if (!(mask_rate > 0.0 && mask_rate < 1.0)) {
        throw ConfigError("mask_rate must lie in (0,1)");
    }
}

void FinetuneHyper::validate() const {
    if (!(learning_rate > 0.0)) {
        throw ConfigError("learning_rate must be positive");
    }
    if (batch_size == 0) {
        throw ConfigError("batch_size must be positive");
    }
    if (epochs == 0) {
        throw ConfigError("epochs must be at least 1");
    }
    if (max_len < 3) {
        throw ConfigError("max_len must be at least 3");
    }
}

double scheduled_learning_rate(double base, std::size_t step, std::size_t total_steps, bool warmup) {
    if (!warmup) {
        return base;
    }
    const auto warm = static_cast<std::size_t>(std::ceil(kWarmupFraction * static_cast<double>(total_steps)));
    if (warm == 0 || step >= warm) {
        return base;
    }
    return base * static_cast<double>(step + 1) / static_cast<double>(warm);
}

std::size_t MaskedSequence::selected() const {
    return static_cast<std::size_t>(
        std::count_if(labels.begin(), labels.end(), [](std::int32_t l) { return l != kIgnoreIndex; }));
}

std::size_t masked_count(std::size_t maskable, double rate) {
    if (maskable == 0) {
        return 0;
    }
    // half-up rounding; the epsilon absorbs binary representation error in rate (0.15·10 → 2)
    const auto k = static_cast<std::size_t>(std::floor(rate * static_cast<double>(maskable) + 0.5 + 1e-9));
    return std::clamp<std::size_t>(k, 1, maskable);
}

std::optional<MaskedSequence> mask_tokens(const TokenSequence &seq, double rate, std::size_t vocab_size, Rng &rng) {
    if (!(rate > 0.0 && rate < 1.0)) {
        throw ConfigError("mask rate must lie in (0,1)");
    }
    if (vocab_size <= static_cast<std::size_t>(kNumSpecialTokens)) {
        throw ConfigError("vocabulary has no non-special tokens to sample");
    }
    std::vector<std::size_t> maskable;
    for (std::size_t i = 0; i < seq.ids.size(); ++i) {
        if (seq.attention_mask[i] && !is_special_id(seq.ids[i])) {
            maskable.push_back(i);
        }
    }
    if (maskable.empty()) {
        return std::nullopt;
    }
    const std::size_t k = masked_count(maskable.size(), rate);
    // partial Fisher-Yates: the first k entries become a uniform sample without replacement
    for (std::size_t i = 0; i < k; ++i) {
        std::swap(maskable[i], maskable[i + rng.uniform_index(maskable.size() - i)]);
    }
    MaskedSequence out;
    out.input_ids = seq.ids;
    out.attention_mask = seq.attention_mask;
    out.labels.assign(seq.ids.size(), kIgnoreIndex);
    out.corruption.assign(seq.ids.size(), Corruption::none);
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t pos = maskable[i];
        out.labels[pos] = seq.ids[pos];
        const double u = rng.uniform();
        if (u < 0.8) {
            out.input_ids[pos] = kMaskId;
            out.corruption[pos] = Corruption::mask;
        } else if (u < 0.9) {
            out.input_ids[pos] = static_cast<std::int32_t>(kNumSpecialTokens +
                                                           rng.uniform_index(vocab_size - kNumSpecialTokens));
            out.corruption[pos] = Corruption::random_token;
        } else {
            out.corruption[pos] = Corruption::unchanged;
        }
    }
    return out;
}

std::optional<MlmBatch> make_mlm_batch(std::span<const TokenSequence> corpus, std::span<const std::size_t> indices,
                                       double rate, std::size_t vocab_size, Rng &rng) {
    std::vector<TokenSequence> corrupted;
    std::vector<std::vector<std::int32_t>> labels;
    for (const std::size_t idx : indices) {
        auto masked = mask_tokens(corpus[idx], rate, vocab_size, rng);
        if (!masked) {
            continue;
        }
        TokenSequence seq = corpus[idx];
        seq.ids = std::move(masked->input_ids);
        corrupted.push_back(std::move(seq));
        labels.push_back(std::move(masked->labels));
    }
    if (corrupted.empty()) {
        return std::nullopt;
    }
    MlmBatch out;
    out.batch = make_batch(corrupted);
    for (std::size_t b = 0; b < corrupted.size(); ++b) {
        for (std::size_t i = 0; i < out.batch.seq_len; ++i) {
            if (labels[b][i] != kIgnoreIndex) {
                out.rows.push_back(b * out.batch.seq_len + i);
                out.targets.push_back(labels[b][i]);
            }
        }
    }
    return out;
}

std::string format_epoch_line(const EpochStats &stats, std::string_view phase) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "epoch=%zu split=train loss=%.6f lr=%.6g seconds=%.3f", stats.epoch, stats.loss,
                  stats.learning_rate, stats.seconds);
    std::string line = buf;
    if (!phase.empty()) {
        line += " phase=";
        line += phase;
    }
    return line;
}

TrainResult pretrain_mlm(std::span<const TokenSequence> corpus, const ModelConfig &config, const Checkpoint *init,
                         const PretrainHyper &hyper, std::ostream *log) {
    config.validate();
    hyper.validate();
    if (corpus.empty()) {
        throw InputError("pretraining corpus is empty");
    }
    const Rng root(hyper.seed);
    TrainResult result;
    result.checkpoint.config = config;
    if (init != nullptr) {
        if (!(init->config == config)) {
            throw ConfigError("initial checkpoint config does not match the requested model config");
        }
        result.checkpoint.params = init->params.clone();
        result.checkpoint.provenance = "domain-adapted";
    } else {
        Rng init_rng = root.split(1);
        result.checkpoint.params = EncoderParams<float>::init(config, init_rng);
        result.checkpoint.provenance = "base";
    }
    auto &params = result.checkpoint.params;
    params.set_requires_grad(true);
    std::vector<Tensor<float>> tensors = params.tensors();
    AdamState<float> adam;
    OptimizerHyper opt;

    const std::size_t steps_per_epoch = (corpus.size() + hyper.batch_size - 1) / hyper.batch_size;
    const std::size_t total_steps = steps_per_epoch * hyper.epochs;
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
        const auto start = Clock::now();
        const auto order = shuffled_indices(corpus.size(), root.split(100 + epoch));
        Rng mask_rng = root.split(200 + epoch);
        const Rng dropout_root = root.split(300 + epoch);
        double loss_sum = 0.0, weight = 0.0;
        for (std::size_t b = 0; b < steps_per_epoch; ++b, ++step) {
            const std::size_t lo = b * hyper.batch_size;
            const std::size_t hi = std::min(corpus.size(), lo + hyper.batch_size);
            opt.learning_rate = scheduled_learning_rate(hyper.learning_rate, step, total_steps, hyper.warmup);
            const auto mb = make_mlm_batch(corpus, std::span(order).subspan(lo, hi - lo), hyper.mask_rate,
                                           config.vocab_size, mask_rng);
            if (!mb) {
                continue;
            }
            Rng dropout_rng = dropout_root.split(b);
            params.zero_grad();
            const auto hidden = encoder_hidden_rows(mb->batch, params, config, true, &dropout_rng);
            const auto ce = cross_entropy(mlm_head_rows(gather_rows(hidden, mb->rows), params, config), mb->targets);
            ce.loss.backward();
            adam_step<float>(tensors, adam, opt);
            loss_sum += static_cast<double>(ce.loss.item()) * static_cast<double>(ce.counted);
            weight += static_cast<double>(ce.counted);
        }
        finish_epoch(result.epochs, epoch + 1, loss_sum, weight, opt.learning_rate, start, log, "");
    }
    params.zero_grad();
    params.set_requires_grad(false);
    return result;
}

double mlm_loss(const Checkpoint &model, std::span<const TokenSequence> corpus, double mask_rate, std::uint64_t seed,
                std::size_t batch_size) {
    double total = 0.0, count = 0.0;
    for_each_mlm_batch(model, corpus, mask_rate, seed, batch_size,
                       [&](const Tensor<float> &logits, const std::vector<std::int32_t> &targets) {
                           const auto ce = cross_entropy(logits, targets);
                           total += static_cast<double>(ce.loss.item()) * static_cast<double>(ce.counted);
                           count += static_cast<double>(ce.counted);
                       });
    if (count == 0) {
        throw InputError("corpus has no maskable tokens");
    }
    return total / count;
}

double mlm_accuracy(const Checkpoint &model, std::span<const TokenSequence> corpus, double mask_rate,
                    std::uint64_t seed, std::size_t batch_size) {
    std::size_t hits = 0, count = 0;
    for_each_mlm_batch(model, corpus, mask_rate, seed, batch_size,
                       [&](const Tensor<float> &logits, const std::vector<std::int32_t> &targets) {
                           const auto data = logits.data();
                           const std::size_t v = logits.dim(1);
                           for (std::size_t r = 0; r < targets.size(); ++r) {
                               const auto row = data.subspan(r * v, v);
                               const auto best = std::max_element(row.begin(), row.end()) - row.begin();
                               hits += best == targets[r] ? 1 : 0;
                               ++count;
                           }
                       });
    if (count == 0) {
        throw InputError("corpus has no maskable tokens");
    }
    return static_cast<double>(hits) / static_cast<double>(count);
}

std::vector<EncodedExample> encode_dataset(const TaskDataset &dataset, const Vocab &vocab, std::size_t max_len) {
    std::vector<EncodedExample> out;
    out.reserve(dataset.examples.size());
    for (const auto &e : dataset.examples) {
        out.push_back({encode(e.text, vocab, max_len), e.label});
    }
    return out;
}

TrainResult finetune_classifier(const Checkpoint &init, const TaskDataset &train, const Vocab &vocab,
                                const FinetuneHyper &hyper, std::ostream *log) {
    hyper.validate();
    init.config.validate();
    if (train.examples.empty()) {
        throw InputError("fine-tuning set is empty");
    }
    if (hyper.max_len > init.config.max_positions) {
        throw ConfigError("max_len " + std::to_string(hyper.max_len) + " exceeds the model's max_positions " +
                          std::to_string(init.config.max_positions));
    }
    if (vocab.size() != init.config.vocab_size) {
        throw ConfigError("vocabulary has " + std::to_string(vocab.size()) + " entries, model expects " +
                          std::to_string(init.config.vocab_size));
    }
    const std::size_t positives = train.positives();
    if (positives == 0 || positives == train.examples.size()) {
        warn("fine-tuning set for " + std::string(task_name(train.task)) + " contains a single class");
    }
    const Rng root(hyper.seed);
    TrainResult result;
    result.checkpoint.config = init.config;
    result.checkpoint.config.num_labels = 2;
    result.checkpoint.params = init.params.clone();
    result.checkpoint.provenance = "fine-tuned:" + std::string(task_name(train.task));
    const ModelConfig &config = result.checkpoint.config;
    auto &params = result.checkpoint.params;
    {
        Rng head_rng = root.split(1);
        const std::size_t h = config.hidden_size;
        params.pooler_weight = normal_init({h, h}, head_rng);
        params.pooler_bias = Tensor<float>::zeros({h});
        params.classifier_weight = normal_init({h, config.num_labels}, head_rng);
        params.classifier_bias = Tensor<float>::zeros({config.num_labels});
    }
    const auto examples = encode_dataset(train, vocab, hyper.max_len);

    params.set_requires_grad(true);
    std::vector<Tensor<float>> tensors = params.tensors();
    AdamState<float> adam;
    OptimizerHyper opt;
    const std::size_t steps_per_epoch = (examples.size() + hyper.batch_size - 1) / hyper.batch_size;
    const std::size_t total_steps = steps_per_epoch * hyper.epochs;
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
        const auto start = Clock::now();
        const auto order = shuffled_indices(examples.size(), root.split(100 + epoch));
        const Rng dropout_root = root.split(300 + epoch);
        double loss_sum = 0.0, weight = 0.0;
        for (std::size_t b = 0; b < steps_per_epoch; ++b, ++step) {
            const std::size_t lo = b * hyper.batch_size;
            const std::size_t hi = std::min(examples.size(), lo + hyper.batch_size);
            std::vector<TokenSequence> seqs;
            std::vector<std::int32_t> labels;
            for (std::size_t i = lo; i < hi; ++i) {
                seqs.push_back(examples[order[i]].tokens);
                labels.push_back(examples[order[i]].label);
            }
            opt.learning_rate = scheduled_learning_rate(hyper.learning_rate, step, total_steps, hyper.warmup);
            Rng dropout_rng = dropout_root.split(b);
            params.zero_grad();
            const auto hidden = forward_encoder(make_batch(seqs), params, config, true, &dropout_rng);
            const auto ce = cross_entropy(cls_logits(hidden, params, config, true, &dropout_rng), labels);
            ce.loss.backward();
            adam_step<float>(tensors, adam, opt);
            loss_sum += static_cast<double>(ce.loss.item()) * static_cast<double>(labels.size());
            weight += static_cast<double>(labels.size());
        }
        finish_epoch(result.epochs, epoch + 1, loss_sum, weight, opt.learning_rate, start, log, "");
    }
    params.zero_grad();
    params.set_requires_grad(false);
    return result;
}

std::vector<std::int32_t> predict_labels(const Checkpoint &model, const TaskDataset &dataset, const Vocab &vocab,
                                         std::size_t max_len, std::size_t batch_size) {
    if (batch_size == 0) {
        throw ConfigError("batch_size must be positive");
    }
    NoGradGuard no_grad;
    const auto examples = encode_dataset(dataset, vocab, max_len);
    std::vector<std::int32_t> out;
    out.reserve(examples.size());
    for (std::size_t start = 0; start < examples.size(); start += batch_size) {
        std::vector<TokenSequence> seqs;
        for (std::size_t i = start; i < std::min(examples.size(), start + batch_size); ++i) {
            seqs.push_back(examples[i].tokens);
        }
        const auto logits =
            cls_logits(forward_encoder(make_batch(seqs), model.params, model.config, false), model.params,
                       model.config);
        const std::size_t c = logits.dim(1);
        for (std::size_t r = 0; r < seqs.size(); ++r) {
            const auto row = logits.data().subspan(r * c, c);
            out.push_back(static_cast<std::int32_t>(std::max_element(row.begin(), row.end()) - row.begin()));
        }
    }
    return out;
}

std::optional<Task> finetuned_task(const Checkpoint &model) {
    constexpr std::string_view prefix = "fine-tuned:";
    if (!model.provenance.starts_with(prefix)) {
        return std::nullopt;
    }
    try {
        return parse_task(std::string_view(model.provenance).substr(prefix.size()));
    } catch (const ConfigError &) {
        return std::nullopt;
    }
}

}  // namespace edulm
