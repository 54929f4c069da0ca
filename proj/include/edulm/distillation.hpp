#pragma once

#include <cstddef>
#include <cstdint>
#include <ostream>
#include <span>
#include <vector>

#include "edulm/checkpoint.hpp"
#include "edulm/tensor.hpp"
#include "edulm/tokenizer.hpp"
#include "edulm/training.hpp"

namespace edulm {

struct DistillHyper {
    double temperature = 2.0;
    double w_ce = 5.0;   // soft-target KL
    double w_mlm = 2.0;  // hard-label MLM cross-entropy
    double w_cos = 1.0;  // final hidden state alignment
    double learning_rate = 5e-5;
    std::size_t epochs = 5;
    std::size_t batch_size = 16;
    double mask_rate = 0.15;
    std::uint64_t seed = 0;
    bool warmup = true;

    void validate() const;
};

/// Teacher layer indices copied into the student, in order.
using LayerMap = std::vector<std::size_t>;

/// Even-indexed layers 0, 2, 4, ...
LayerMap default_layer_map(std::size_t teacher_layers);

/// Throws ConfigError unless the map is non-empty, strictly increasing and in range.
void validate_layer_map(const LayerMap &map, std::size_t teacher_layers);

/// Student with num_layers = |map|; embeddings, heads and the mapped layers
/// are copied verbatim. Provenance "distill-init".
Checkpoint init_student_from_teacher(const Checkpoint &teacher, const LayerMap &map);

template <typename T>
struct DistillLoss {
    Tensor<T> total;  // scalar
    double kl = 0.0;
    double mlm = 0.0;
    double cosine = 0.0;  // mean (1 - cos)
};

/// w_ce·T²·KL(softmax(t/T) ‖ softmax(s/T)) + w_mlm·CE(s, labels) + w_cos·(1 − cos(h_s, h_t)),
/// each averaged over rows whose label is not kIgnoreIndex. Teacher inputs are
/// constants. Terms with zero weight are skipped entirely.
template <typename T>
DistillLoss<T> distill_loss(const Tensor<T> &student_logits, const Tensor<T> &teacher_logits,
                            std::span<const std::int32_t> labels, const Tensor<T> &student_hidden,
                            const Tensor<T> &teacher_hidden, const DistillHyper &hyper);

/// Initializes the student from the teacher and trains it on masked batches
/// against the frozen teacher. Provenance "distilled"; log lines carry phase=distill.
TrainResult distill(const Checkpoint &teacher, std::span<const TokenSequence> corpus, const DistillHyper &hyper,
                    const LayerMap &map = {}, std::ostream *log = nullptr);

}  // namespace edulm
