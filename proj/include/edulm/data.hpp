#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace edulm {

enum class Task { sentiment, confusion, urgency };

inline constexpr Task kAllTasks[] = {Task::confusion, Task::sentiment, Task::urgency};

std::string_view task_name(Task task);
/// Accepts "sentiment", "confusion" or "urgency"; anything else is a ConfigError.
Task parse_task(std::string_view name);

inline constexpr double kMinScore = 1.0;
inline constexpr double kMaxScore = 7.0;
inline constexpr double kPositiveThreshold = 4.0;

struct LabeledPost {
    std::string id;
    std::string text;
    double sentiment = 1.0;
    double confusion = 1.0;
    double urgency = 1.0;
    std::optional<std::string> course_id;

    double score(Task task) const;
    bool operator==(const LabeledPost &) const = default;
};

/// Throws ValidationError for a score outside [1,7] or text that normalizes to nothing.
void validate_post(const LabeledPost &post);

/// JSONL, one object per line: id, text, sentiment, confusion, urgency, optional course_id.
/// Blank lines are skipped. All bad records are collected into one error that
/// names each line; it is a ValidationError when every problem is an
/// invariant violation and an InputError otherwise. An empty file yields an
/// empty list and a warning.
std::vector<LabeledPost> parse_posts(std::string_view jsonl, std::string_view source = "<input>");
std::vector<LabeledPost> load_posts(const std::filesystem::path &path);

std::string posts_to_jsonl(std::span<const LabeledPost> posts);
void save_posts(std::span<const LabeledPost> posts, const std::filesystem::path &path);

/// Maps our field names (id, text, sentiment, confusion, urgency, course_id)
/// to column headers of an external CSV file. course_id may be omitted.
using CsvColumnMap = std::map<std::string, std::string>;

/// RFC 4180 style CSV (quoted fields, doubled quotes, embedded newlines).
std::vector<LabeledPost> parse_posts_csv(std::string_view csv, const CsvColumnMap &columns,
                                         std::string_view source = "<input>");
std::vector<LabeledPost> load_posts_csv(const std::filesystem::path &path, const CsvColumnMap &columns);

/// 1 iff score ≥ 4; ValidationError outside [1,7].
int binarize(double score);

struct Example {
    std::string text;
    std::int32_t label = 0;
    std::string course_id;
};

struct TaskDataset {
    Task task = Task::urgency;
    std::vector<Example> examples;
    std::uint64_t split_seed = 0;
    std::string provenance;

    std::size_t positives() const;
};

TaskDataset make_task_dataset(std::span<const LabeledPost> posts, Task task, std::string provenance = "");

struct Fraction {
    std::size_t numerator = 2;
    std::size_t denominator = 3;
};

struct DatasetSplit {
    TaskDataset train;
    TaskDataset test;
};

/// Seeded shuffle, then the first floor(n·fraction) examples train.
/// With stratify_by_course each course is spread evenly through the order,
/// so every course contributes to both sides in proportion to its size.
DatasetSplit split_dataset(const TaskDataset &dataset, std::uint64_t seed, Fraction train_fraction = {},
                           bool stratify_by_course = false);

enum class Theme { education, general };

std::string_view theme_name(Theme theme);
Theme parse_theme(std::string_view name);

struct SynthSpec {
    std::size_t n_posts = 500;
    double class_balance = 0.5;
    Theme theme = Theme::education;
    /// Unlabeled lines generated alongside the labeled posts.
    std::size_t n_unlabeled = 500;
};

struct SynthCorpus {
    std::vector<std::string> unlabeled;
    std::vector<LabeledPost> posts;
};

/// Template posts in which each task's label is planted by keyword families.
/// Exactly round(n·balance) posts are positive for each task.
SynthCorpus synth_corpus(const SynthSpec &spec, std::uint64_t seed);

/// Planted keywords for a task; a post is positive iff it contains one.
std::span<const std::string_view> keyword_family(Task task);

/// The separability oracle: 1 iff any word of `text` is in the task's family.
int keyword_oracle(std::string_view text, Task task);

}  // namespace edulm
