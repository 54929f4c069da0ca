#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "edulm/checkpoint.hpp"
#include "edulm/data.hpp"
#include "edulm/model.hpp"
#include "edulm/optim.hpp"
#include "edulm/rng.hpp"
#include "edulm/tokenizer.hpp"

namespace edulm {

struct PretrainHyper {
    double learning_rate = 5e-5;
    std::size_t batch_size = 8;  // 16 for a distilled student
    std::size_t epochs = 5;
    std::size_t max_len = 512;
    double mask_rate = 0.15;
    std::uint64_t seed = 0;
    /// Linear warmup over the first 10% of steps, constant afterwards.
    bool warmup = true;

    void validate() const;
};

struct FinetuneHyper {
    double learning_rate = 5e-5;
    std::size_t epochs = 2;
    std::size_t max_len = 300;  // 512 for a distilled student
    std::size_t batch_size = 8;
    std::uint64_t seed = 0;
    bool warmup = false;

    void validate() const;
};

inline constexpr double kWarmupFraction = 0.1;

/// Learning rate for a zero-based step under optional linear warmup.
double scheduled_learning_rate(double base, std::size_t step, std::size_t total_steps, bool warmup);

enum class Corruption : std::uint8_t { none, mask, random_token, unchanged };

struct MaskedSequence {
    std::vector<std::int32_t> input_ids;
    /// Original id at selected positions, kIgnoreIndex elsewhere.
    std::vector<std::int32_t> labels;
    std::vector<std::uint8_t> attention_mask;
    std::vector<Corruption> corruption;

    std::size_t selected() const;
};

/// Number of positions selected out of `maskable`: round(rate·maskable), at least 1.
std::size_t masked_count(std::size_t maskable, double rate);

/// Selects masked_count positions among active non-special tokens uniformly
/// without replacement, then corrupts them 80/10/10 ([MASK] / random
/// non-special id / unchanged). Returns nullopt when nothing is maskable.
std::optional<MaskedSequence> mask_tokens(const TokenSequence &seq, double rate, std::size_t vocab_size, Rng &rng);

/// A trimmed, corrupted batch plus the flat hidden-row index and original id
/// of every selected position.
struct MlmBatch {
    EncoderBatch batch;
    std::vector<std::size_t> rows;
    std::vector<std::int32_t> targets;
};

/// Masks corpus[indices...] in order, dropping sequences with nothing maskable.
std::optional<MlmBatch> make_mlm_batch(std::span<const TokenSequence> corpus, std::span<const std::size_t> indices,
                                       double rate, std::size_t vocab_size, Rng &rng);

struct EpochStats {
    std::size_t epoch = 0;
    double loss = 0.0;
    double learning_rate = 0.0;
    double seconds = 0.0;
};

/// `epoch=<k> split=train loss=<f> lr=<f> seconds=<f>` plus an optional phase.
std::string format_epoch_line(const EpochStats &stats, std::string_view phase = "");

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<EpochStats> epochs;
};

/// MLM pretraining. From random weights (init == nullptr) the result is
/// "base"; continuing from a checkpoint gives "domain-adapted".
TrainResult pretrain_mlm(std::span<const TokenSequence> corpus, const ModelConfig &config, const Checkpoint *init,
                         const PretrainHyper &hyper, std::ostream *log = nullptr);

/// Mean MLM cross-entropy over masked positions (evaluation mode, fixed masks from `seed`).
double mlm_loss(const Checkpoint &model, std::span<const TokenSequence> corpus, double mask_rate, std::uint64_t seed,
                std::size_t batch_size = 16);

/// Fraction of masked positions whose argmax prediction is the original token.
double mlm_accuracy(const Checkpoint &model, std::span<const TokenSequence> corpus, double mask_rate,
                    std::uint64_t seed, std::size_t batch_size = 16);

struct EncodedExample {
    TokenSequence tokens;
    std::int32_t label = 0;
};

std::vector<EncodedExample> encode_dataset(const TaskDataset &dataset, const Vocab &vocab, std::size_t max_len);

/// Re-initializes the pooler and 2-way classifier, then trains every weight
/// on cross-entropy. Provenance becomes "fine-tuned:<task>".
TrainResult finetune_classifier(const Checkpoint &init, const TaskDataset &train, const Vocab &vocab,
                                const FinetuneHyper &hyper, std::ostream *log = nullptr);

/// Argmax class per example (evaluation mode).
std::vector<std::int32_t> predict_labels(const Checkpoint &model, const TaskDataset &dataset, const Vocab &vocab,
                                         std::size_t max_len, std::size_t batch_size = 16);

/// Task named by a "fine-tuned:<task>" provenance.
std::optional<Task> finetuned_task(const Checkpoint &model);

}  // namespace edulm
