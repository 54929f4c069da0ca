#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "edulm/checkpoint.hpp"
#include "edulm/data.hpp"

namespace edulm {

/// Binary counts; class 1 is the positive class.
struct ConfusionMatrix {
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;

    std::size_t total() const { return tp + fp + tn + fn; }
    bool operator==(const ConfusionMatrix &) const = default;
};

ConfusionMatrix confusion_matrix(std::span<const std::int32_t> preds, std::span<const std::int32_t> golds);

struct ClassMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    /// Set when a zero denominator forced a metric to 0.
    bool degenerate = false;
};

/// Metrics with `positive_class` (0 or 1) treated as the class of interest.
ClassMetrics prf1(const ConfusionMatrix &cm, int positive_class);

double weighted_f1(std::span<const double> f1_per_class, std::span<const std::size_t> supports);

double accuracy(std::span<const std::int32_t> preds, std::span<const std::int32_t> golds);

struct MetricsReport {
    std::string model;
    Task task = Task::urgency;
    std::array<ClassMetrics, 2> per_class{};  // [negative, positive]
    std::array<std::size_t, 2> supports{};
    double weighted_f1 = 0.0;
    double accuracy = 0.0;
};

MetricsReport evaluate_predictions(std::string model, Task task, std::span<const std::int32_t> preds,
                                   std::span<const std::int32_t> golds);

/// Display names of the negative and positive class, e.g. Non-urgent / Urgent.
std::array<std::string, 2> class_names(Task task);

enum class ReportStyle { table1, table2 };

ReportStyle parse_report_style(std::string_view name);

/// Numeric cells of one table row: 3 decimals for table1, accuracy ×100 to
/// 2 decimals for table2 (Confusion, Sentiment, Urgency; "-" when missing).
std::vector<std::string> table1_cells(const MetricsReport &report);
std::vector<std::vector<std::string>> table2_rows(std::span<const MetricsReport> reports,
                                                  std::vector<std::string> *models = nullptr);

/// Markdown table. table1 needs every report on the same task; table2 needs
/// each (model, task) pair at most once. Violations are UsageErrors.
std::string render_report(std::span<const MetricsReport> reports, ReportStyle style);

/// Flat key=value twin of one report.
std::string render_key_values(const MetricsReport &report);

struct BatchSpec {
    std::size_t batch_size = 8;
    std::size_t seq_len = 64;
    std::uint64_t seed = 0;
};

struct BenchmarkResult {
    std::string model;
    double median_latency_seconds = 0.0;  // per batch
    double throughput = 0.0;              // posts per second
    std::size_t parameter_bytes = 0;
    std::optional<double> reference_latency_seconds;
    /// reference latency / model latency
    std::optional<double> speedup;
};

inline constexpr std::size_t kBenchmarkWarmups = 3;

/// Times classification forward passes on a fixed random batch. With a
/// reference, runs are interleaved so drift affects both sides equally.
BenchmarkResult benchmark_inference(const Checkpoint &model, const BatchSpec &spec, std::size_t repetitions,
                                    const Checkpoint *reference = nullptr, std::string name = "model");

std::string render_benchmark(const BenchmarkResult &result);

}  // namespace edulm
