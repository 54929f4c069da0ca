#include "edulm/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <map>

#include "edulm/error.hpp"
#include "edulm/model.hpp"
#include "edulm/rng.hpp"

namespace edulm {

namespace {

void check_pair(std::span<const std::int32_t> preds, std::span<const std::int32_t> golds) {
    if (preds.size() != golds.size()) {
        throw InputError("predictions (" + std::to_string(preds.size()) + ") and gold labels (" +
                         std::to_string(golds.size()) + ") differ in length");
    }
    if (preds.empty()) {
        throw InputError("no predictions to evaluate");
    }
}

std::string fixed(double v, int decimals) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
    return buf;
}

std::string markdown_row(const std::vector<std::string> &cells) {
    std::string line = "|";
    for (const auto &c : cells) {
        line += " " + c + " |";
    }
    return line + "\n";
}

std::string markdown_rule(std::size_t columns) {
    std::string line = "|";
    for (std::size_t i = 0; i < columns; ++i) {
        line += i == 0 ? " --- |" : " ---: |";
    }
    return line + "\n";
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

ConfusionMatrix confusion_matrix(std::span<const std::int32_t> preds, std::span<const std::int32_t> golds) {
    check_pair(preds, golds);
    ConfusionMatrix cm;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if ((preds[i] != 0 && preds[i] != 1) || (golds[i] != 0 && golds[i] != 1)) {
            throw InputError("labels must be 0 or 1 (index " + std::to_string(i) + ")");
        }
        if (golds[i] == 1) {
            ++(preds[i] == 1 ? cm.tp : cm.fn);
        } else {
            ++(preds[i] == 1 ? cm.fp : cm.tn);
        }
    }
    return cm;
}

ClassMetrics prf1(const ConfusionMatrix &cm, int positive_class) {
    if (positive_class != 0 && positive_class != 1) {
        throw InputError("positive_class must be 0 or 1");
    }
    // for class 0 the roles swap: tn acts as tp, fn as fp
    const double tp = static_cast<double>(positive_class == 1 ? cm.tp : cm.tn);
    const double fp = static_cast<double>(positive_class == 1 ? cm.fp : cm.fn);
    const double fn = static_cast<double>(positive_class == 1 ? cm.fn : cm.fp);
    ClassMetrics m;
    if (tp + fp > 0) {
        m.precision = tp / (tp + fp);
    } else {
        m.degenerate = true;
    }
    if (tp + fn > 0) {
        m.recall = tp / (tp + fn);
    } else {
        m.degenerate = true;
    }
    if (m.precision + m.recall > 0) {
        m.f1 = 2 * m.precision * m.recall / (m.precision + m.recall);
    } else {
        m.degenerate = true;
    }
    return m;
}

double weighted_f1(std::span<const double> f1_per_class, std::span<const std::size_t> supports) {
    if (f1_per_class.size() != supports.size()) {
        throw InputError("one support count per class expected");
    }
    double total = 0.0, acc = 0.0;
    for (std::size_t i = 0; i < supports.size(); ++i) {
        total += static_cast<double>(supports[i]);
        acc += f1_per_class[i] * static_cast<double>(supports[i]);
    }
    if (total == 0.0) {
        throw InputError("weighted F1 needs a positive total support");
    }
    return acc / total;
}

double accuracy(std::span<const std::int32_t> preds, std::span<const std::int32_t> golds) {
    check_pair(preds, golds);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        hits += preds[i] == golds[i] ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(preds.size());
}

MetricsReport evaluate_predictions(std::string model, Task task, std::span<const std::int32_t> preds,
                                   std::span<const std::int32_t> golds) {
    const auto cm = confusion_matrix(preds, golds);
    MetricsReport r;
    r.model = std::move(model);
    r.task = task;
    r.per_class = {prf1(cm, 0), prf1(cm, 1)};
    r.supports = {cm.tn + cm.fp, cm.tp + cm.fn};
    const double f1s[2] = {r.per_class[0].f1, r.per_class[1].f1};
    r.weighted_f1 = weighted_f1(f1s, r.supports);
    r.accuracy = accuracy(preds, golds);
    return r;
}

std::array<std::string, 2> class_names(Task task) {
    switch (task) {
        case Task::urgency: return {"Non-urgent", "Urgent"};
        case Task::confusion: return {"Non-confused", "Confused"};
        case Task::sentiment: return {"Non-emotional", "Emotional"};
    }
    return {"Negative", "Positive"};
}

ReportStyle parse_report_style(std::string_view name) {
    if (name == "table1") {
        return ReportStyle::table1;
    }
    if (name == "table2") {
        return ReportStyle::table2;
    }
    throw UsageError("unknown report style '" + std::string(name) + "' (expected table1 or table2)");
}

std::vector<std::string> table1_cells(const MetricsReport &report) {
    std::vector<std::string> cells;
    for (const auto &c : report.per_class) {
        cells.push_back(fixed(c.recall, 3));
        cells.push_back(fixed(c.precision, 3));
        cells.push_back(fixed(c.f1, 3));
    }
    cells.push_back(fixed(report.weighted_f1, 3));
    return cells;
}

std::vector<std::vector<std::string>> table2_rows(std::span<const MetricsReport> reports,
                                                  std::vector<std::string> *models) {
    constexpr Task kColumns[] = {Task::confusion, Task::sentiment, Task::urgency};
    std::vector<std::string> order;
    std::map<std::pair<std::string, Task>, double> cell;
    for (const auto &r : reports) {
        if (!cell.emplace(std::pair(r.model, r.task), r.accuracy).second) {
            throw UsageError("table2 got two " + std::string(task_name(r.task)) + " reports for model '" + r.model +
                             "'");
        }
        if (std::find(order.begin(), order.end(), r.model) == order.end()) {
            order.push_back(r.model);
        }
    }
    std::vector<std::vector<std::string>> rows;
    for (const auto &m : order) {
        std::vector<std::string> row;
        for (const Task t : kColumns) {
            const auto it = cell.find({m, t});
            row.push_back(it == cell.end() ? "-" : fixed(100.0 * it->second, 2));
        }
        rows.push_back(std::move(row));
    }
    if (models != nullptr) {
        *models = order;
    }
    return rows;
}

std::string render_report(std::span<const MetricsReport> reports, ReportStyle style) {
    if (reports.empty()) {
        throw UsageError("no reports to render");
    }
    std::string out;
    if (style == ReportStyle::table1) {
        const Task task = reports.front().task;
        for (const auto &r : reports) {
            if (r.task != task) {
                throw UsageError("table1 compares models on a single task; got " + std::string(task_name(task)) +
                                 " and " + std::string(task_name(r.task)));
            }
        }
        const auto names = class_names(task);
        out += "Performance metrics for " + std::string(task_name(task)) + " prediction\n\n";
        std::vector<std::string> header{"Model"};
        for (const auto &n : names) {
            for (const char *m : {"Recall", "Precision", "F1"}) {
                header.push_back(n + " " + m);
            }
        }
        header.push_back("Weighted F1");
        out += markdown_row(header) + markdown_rule(header.size());
        for (const auto &r : reports) {
            auto cells = table1_cells(r);
            cells.insert(cells.begin(), r.model);
            out += markdown_row(cells);
        }
        return out;
    }
    std::vector<std::string> models;
    const auto rows = table2_rows(reports, &models);
    out += "Accuracy measures on the three tasks\n\n";
    const std::vector<std::string> header{"Model", "Confusion", "Sentiment", "Urgency"};
    out += markdown_row(header) + markdown_rule(header.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        auto cells = rows[i];
        cells.insert(cells.begin(), models[i]);
        out += markdown_row(cells);
    }
    return out;
}

std::string render_key_values(const MetricsReport &report) {
    char buf[96];
    std::string out = "model=" + report.model + "\ntask=" + std::string(task_name(report.task)) + "\n";
    const char *side[2] = {"negative", "positive"};
    for (int c = 0; c < 2; ++c) {
        const auto &m = report.per_class[c];
        std::snprintf(buf, sizeof buf, "%s.recall=%.6f\n%s.precision=%.6f\n%s.f1=%.6f\n", side[c], m.recall, side[c],
                      m.precision, side[c], m.f1);
        out += buf;
        out += std::string(side[c]) + ".degenerate=" + (m.degenerate ? "1" : "0") + "\n";
        out += std::string(side[c]) + ".support=" + std::to_string(report.supports[c]) + "\n";
    }
    std::snprintf(buf, sizeof buf, "weighted_f1=%.6f\naccuracy=%.6f\n", report.weighted_f1, report.accuracy);
    return out + buf;
}

BenchmarkResult benchmark_inference(const Checkpoint &model, const BatchSpec &spec, std::size_t repetitions,
                                    const Checkpoint *reference, std::string name) {
    if (repetitions < 5) {
        throw ConfigError("benchmark needs at least 5 repetitions");
    }
    if (spec.batch_size == 0 || spec.seq_len < 3) {
        throw ConfigError("benchmark batch needs batch_size ≥ 1 and seq_len ≥ 3");
    }
    for (const Checkpoint *c : {&model, reference}) {
        if (c == nullptr) {
            continue;
        }
        if (spec.seq_len > c->config.max_positions) {
            throw ConfigError("benchmark seq_len exceeds max_positions of a model");
        }
        if (reference != nullptr && c->config.vocab_size != model.config.vocab_size) {
            throw ConfigError("benchmarked models must share a vocabulary");
        }
    }
    // a fixed full-length batch of random ordinary tokens
    Rng rng(spec.seed);
    std::vector<TokenSequence> seqs(spec.batch_size);
    for (auto &s : seqs) {
        s.ids.push_back(kClsId);
        while (s.ids.size() + 1 < spec.seq_len) {
            s.ids.push_back(static_cast<std::int32_t>(
                kNumSpecialTokens + rng.uniform_index(model.config.vocab_size - kNumSpecialTokens)));
        }
        s.ids.push_back(kSepId);
        s.attention_mask.assign(s.ids.size(), 1);
        s.segment_ids.assign(s.ids.size(), 0);
    }
    const EncoderBatch batch = make_batch(seqs);

    NoGradGuard no_grad;
    auto run = [&](const Checkpoint &c) {
        const auto start = std::chrono::steady_clock::now();
        const auto logits =
            cls_logits(forward_encoder(batch, c.params, c.config, false), c.params, c.config);
        const auto stop = std::chrono::steady_clock::now();
        if (logits.numel() == 0) {
            throw NumericError("empty benchmark output");
        }
        return std::chrono::duration<double>(stop - start).count();
    };
    for (std::size_t i = 0; i < kBenchmarkWarmups; ++i) {
        run(model);
        if (reference != nullptr) {
            run(*reference);
        }
    }
    std::vector<double> mine, theirs;
    for (std::size_t i = 0; i < repetitions; ++i) {
        mine.push_back(run(model));
        if (reference != nullptr) {
            theirs.push_back(run(*reference));
        }
    }
    BenchmarkResult r;
    r.model = std::move(name);
    r.median_latency_seconds = median(mine);
    r.throughput = static_cast<double>(spec.batch_size) / r.median_latency_seconds;
    r.parameter_bytes = sizeof(float) * count_parameters(model.config);
    if (reference != nullptr) {
        r.reference_latency_seconds = median(theirs);
        r.speedup = *r.reference_latency_seconds / r.median_latency_seconds;
    }
    return r;
}

std::string render_benchmark(const BenchmarkResult &result) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "model=%s\nmedian_latency_seconds=%.6g\nthroughput_posts_per_second=%.6g\n"
                                   "parameter_bytes=%zu\n",
                  result.model.c_str(), result.median_latency_seconds, result.throughput, result.parameter_bytes);
    std::string out = buf;
    if (result.speedup) {
        std::snprintf(buf, sizeof buf, "reference_latency_seconds=%.6g\nspeedup=%.4f\n",
                      *result.reference_latency_seconds, *result.speedup);
        out += buf;
    }
    return out;
}

}  // namespace edulm
