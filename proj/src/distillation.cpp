#include "edulm/distillation.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

#include "edulm/error.hpp"
#include "edulm/ops.hpp"

namespace edulm {

namespace {

using Clock = std::chrono::steady_clock;

template <typename T>
Tensor<T> scalar_like(const Tensor<T> &x, T value) {
    return Tensor<T>::full(x.shape(), value);
}

}  // namespace

void DistillHyper::validate() const {
    if (!(temperature > 0.0) || !std::isfinite(temperature)) {
        throw ConfigError("temperature must be positive");
    }
    if (!(w_ce >= 0.0 && w_mlm >= 0.0 && w_cos >= 0.0)) {
        throw ConfigError("distillation loss weights must be non-negative");
    }
    if (w_ce + w_mlm + w_cos <= 0.0) {
        throw ConfigError("at least one distillation loss weight must be positive");
    }
    if (!(learning_rate > 0.0)) {
        throw ConfigError("learning_rate must be positive");
    }
    if (epochs == 0) {
        throw ConfigError("epochs must be at least 1");
    }
    if (batch_size == 0) {
        throw ConfigError("batch_size must be positive");
    }
    if (!(mask_rate > 0.0 && mask_rate < 1.0)) {
        throw ConfigError("mask_rate must lie in (0,1)");
    }
}

LayerMap default_layer_map(std::size_t teacher_layers) {
    LayerMap map;
    for (std::size_t i = 0; i < teacher_layers; i += 2) {
        map.push_back(i);
    }
    return map;
}

void validate_layer_map(const LayerMap &map, std::size_t teacher_layers) {
    if (map.empty()) {
        throw ConfigError("layer_map is empty");
    }
    for (std::size_t i = 0; i < map.size(); ++i) {
        if (map[i] >= teacher_layers) {
            throw ConfigError("layer_map index " + std::to_string(map[i]) + " out of range for a " +
                              std::to_string(teacher_layers) + "-layer teacher");
        }
        if (i > 0 && map[i] <= map[i - 1]) {
            throw ConfigError("layer_map must be strictly increasing");
        }
    }
}

Checkpoint init_student_from_teacher(const Checkpoint &teacher, const LayerMap &map) {
    validate_layer_map(map, teacher.config.num_layers);
    Checkpoint student;
    student.config = teacher.config;
    student.config.num_layers = map.size();
    student.params = teacher.params.clone();
    auto copied = std::move(student.params.layers);
    student.params.layers.clear();
    for (const std::size_t i : map) {
        student.params.layers.push_back(std::move(copied[i]));
    }
    student.provenance = "distill-init";
    return student;
}

template <typename T>
DistillLoss<T> distill_loss(const Tensor<T> &student_logits, const Tensor<T> &teacher_logits,
                            std::span<const std::int32_t> labels, const Tensor<T> &student_hidden,
                            const Tensor<T> &teacher_hidden, const DistillHyper &hyper) {
    hyper.validate();
    if (student_logits.rank() != 2 || student_logits.shape() != teacher_logits.shape()) {
        throw ShapeError("student and teacher logits must be matching [n×V] matrices");
    }
    if (student_hidden.rank() != 2 || student_hidden.shape() != teacher_hidden.shape() ||
        student_hidden.dim(0) != student_logits.dim(0)) {
        throw ShapeError("student and teacher hidden rows must be matching [n×H] matrices");
    }
    if (labels.size() != student_logits.dim(0)) {
        throw ShapeError("one label per logits row expected");
    }
    std::vector<std::size_t> rows;
    std::vector<std::int32_t> kept;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != kIgnoreIndex) {
            rows.push_back(i);
            kept.push_back(labels[i]);
        }
    }
    if (rows.empty()) {
        throw InputError("distillation batch has no labeled positions");
    }
    const bool all_rows = rows.size() == labels.size();
    const auto s_logits = all_rows ? student_logits : gather_rows(student_logits, rows);
    const auto s_hidden = all_rows ? student_hidden : gather_rows(student_hidden, rows);
    const auto t_logits = (all_rows ? teacher_logits : gather_rows(teacher_logits, rows)).detach();
    const auto t_hidden = (all_rows ? teacher_hidden : gather_rows(teacher_hidden, rows)).detach();
    const T n = static_cast<T>(rows.size());

    DistillLoss<T> out;
    std::vector<Tensor<T>> terms;
    if (hyper.w_ce > 0.0) {
        const T inv_t = static_cast<T>(1.0 / hyper.temperature);
        const auto log_p_student = log_softmax(scale(s_logits, inv_t));
        Tensor<T> log_p_teacher, p_teacher;
        {
            NoGradGuard no_grad;
            log_p_teacher = log_softmax(scale(t_logits, inv_t));
            std::vector<T> p(log_p_teacher.numel());
            const auto lp = log_p_teacher.data();
            for (std::size_t i = 0; i < p.size(); ++i) {
                p[i] = std::exp(lp[i]);
            }
            p_teacher = Tensor<T>(log_p_teacher.shape(), std::move(p));
        }
        const auto kl = scale(sum(mul(p_teacher, sub(log_p_teacher, log_p_student))), T(1) / n);
        out.kl = static_cast<double>(kl.item());
        terms.push_back(scale(kl, static_cast<T>(hyper.w_ce * hyper.temperature * hyper.temperature)));
    }
    if (hyper.w_mlm > 0.0) {
        const auto ce = cross_entropy(s_logits, kept);
        out.mlm = static_cast<double>(ce.loss.item());
        terms.push_back(scale(ce.loss, static_cast<T>(hyper.w_mlm)));
    }
    if (hyper.w_cos > 0.0) {
        const auto mean_cos = mean(cosine_similarity_rows(s_hidden, t_hidden));
        const auto term = sub(scalar_like(mean_cos, T(1)), mean_cos);
        out.cosine = static_cast<double>(term.item());
        terms.push_back(scale(term, static_cast<T>(hyper.w_cos)));
    }
    out.total = terms.front();
    for (std::size_t i = 1; i < terms.size(); ++i) {
        out.total = add(out.total, terms[i]);
    }
    return out;
}

template DistillLoss<float> distill_loss(const Tensor<float> &, const Tensor<float> &, std::span<const std::int32_t>,
                                         const Tensor<float> &, const Tensor<float> &, const DistillHyper &);
template DistillLoss<double> distill_loss(const Tensor<double> &, const Tensor<double> &,
                                          std::span<const std::int32_t>, const Tensor<double> &,
                                          const Tensor<double> &, const DistillHyper &);

TrainResult distill(const Checkpoint &teacher, std::span<const TokenSequence> corpus, const DistillHyper &hyper,
                    const LayerMap &map, std::ostream *log) {
    hyper.validate();
    teacher.config.validate();
    if (corpus.empty()) {
        throw InputError("distillation corpus is empty");
    }
    TrainResult result;
    result.checkpoint =
        init_student_from_teacher(teacher, map.empty() ? default_layer_map(teacher.config.num_layers) : map);
    result.checkpoint.provenance = "distilled";
    const ModelConfig &config = result.checkpoint.config;
    auto &params = result.checkpoint.params;
    params.set_requires_grad(true);
    std::vector<Tensor<float>> tensors = params.tensors();
    AdamState<float> adam;
    OptimizerHyper opt;

    const Rng root(hyper.seed);
    const std::size_t steps_per_epoch = (corpus.size() + hyper.batch_size - 1) / hyper.batch_size;
    const std::size_t total_steps = steps_per_epoch * hyper.epochs;
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
        const auto start = Clock::now();
        std::vector<std::size_t> order(corpus.size());
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle_rng = root.split(100 + epoch);
        for (std::size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[shuffle_rng.uniform_index(i)]);
        }
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
            Tensor<float> t_hidden, t_logits;
            {
                NoGradGuard no_grad;
                t_hidden = gather_rows(encoder_hidden_rows(mb->batch, teacher.params, teacher.config, false), mb->rows);
                t_logits = mlm_head_rows(t_hidden, teacher.params, teacher.config);
            }
            Rng dropout_rng = dropout_root.split(b);
            params.zero_grad();
            const auto s_hidden =
                gather_rows(encoder_hidden_rows(mb->batch, params, config, true, &dropout_rng), mb->rows);
            const auto s_logits = mlm_head_rows(s_hidden, params, config);
            const auto loss = distill_loss(s_logits, t_logits, mb->targets, s_hidden, t_hidden, hyper);
            loss.total.backward();
            adam_step<float>(tensors, adam, opt);
            loss_sum += static_cast<double>(loss.total.item()) * static_cast<double>(mb->targets.size());
            weight += static_cast<double>(mb->targets.size());
        }
        EpochStats stats{epoch + 1, weight > 0 ? loss_sum / weight : 0.0, opt.learning_rate,
                         std::chrono::duration<double>(Clock::now() - start).count()};
        result.epochs.push_back(stats);
        if (log != nullptr) {
            *log << format_epoch_line(stats, "distill") << '\n';
            log->flush();
        }
    }
    params.zero_grad();
    params.set_requires_grad(false);
    return result;
}

}  // namespace edulm
