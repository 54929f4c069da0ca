#include "edulm/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include <json.hpp>

#include "edulm/error.hpp"
#include "edulm/io.hpp"
#include "edulm/log.hpp"
#include "edulm/rng.hpp"
#include "edulm/tokenizer.hpp"

namespace edulm {

namespace {

using ordered_json = nlohmann::ordered_json;

constexpr std::string_view kUrgencyWords[] = {"urgent", "asap", "immediately", "deadline", "emergency"};
constexpr std::string_view kConfusionWords[] = {"confused", "unclear", "lost", "puzzled", "confusing"};
constexpr std::string_view kSentimentWords[] = {"love", "hate", "amazing", "terrible", "frustrated", "thrilled"};

// One phrase per keyword, same order as the families above; {n} is a theme noun.
constexpr std::string_view kUrgencyPhrases[] = {"this is urgent", "please reply asap", "i need help immediately",
                                                "the deadline is tonight", "this is an emergency"};
constexpr std::string_view kConfusionPhrases[] = {"i am confused about the {n}", "the {n} instructions are unclear",
                                                  "i am completely lost", "i am puzzled by the {n}",
                                                  "the {n} is confusing"};
constexpr std::string_view kSentimentPhrases[] = {"i love the {n}",      "i hate the {n}",
                                                  "the {n} is amazing",  "the {n} was terrible",
                                                  "i am so frustrated",  "i am thrilled with the {n}"};

constexpr std::string_view kEducationNouns[] = {"lecture", "quiz",    "assignment", "homework", "exam",     "video",
                                                "module",  "reading", "syllabus",   "forum",    "notes",    "lab",
                                                "project", "textbook", "slides",    "grade"};
constexpr std::string_view kEducationSentences[] = {
    "the {n} for week {k} is posted",
    "i watched the {n} yesterday",
    "does anyone know where the {n} is",
    "thanks for the notes on the {n}",
    "my answer to question {k} was different",
    "we discussed the {n} in the study group",
    "the professor mentioned the {n} in lecture {k}",
    "i submitted the {n} this morning",
    "can someone share a link to the {n}",
    "the {n} covers chapter {k}",
};

constexpr std::string_view kGeneralNouns[] = {"garden", "recipe",  "movie",  "bike", "trip", "weather",
                                              "concert", "market", "park",   "dog",  "kitchen", "beach",
                                              "train",  "soup",    "book",   "game"};
constexpr std::string_view kGeneralSentences[] = {
    "the {n} was nice this weekend",
    "i bought a new {n} yesterday",
    "my friend recommended the {n}",
    "we went to see the {n} on saturday",
    "the {n} near my house is closed",
    "i cooked dinner after the {n}",
    "has anyone tried the {n} downtown",
    "the {n} took about {k} hours",
    "my neighbor painted the {n} blue",
    "there were {k} people at the {n}",
};

constexpr std::size_t kCourses = 5;

// Subject terms per course (per hobby for the general theme); {t} slots draw
// from the post's own course, so words within a post predict each other.
constexpr std::string_view kEducationTerms[kCourses][24] = {
    {"derivative", "integral", "limit",     "series",    "polynomial", "tangent",  "slope",    "vector",
     "matrix",     "eigenvalue", "logarithm", "exponent", "asymptote", "gradient", "theorem",  "lemma",
     "proof",      "calculus", "function",  "interval",  "sequence",   "parabola", "hyperbola", "quotient"},
    {"cell",     "membrane", "protein",  "enzyme",     "mitosis",  "meiosis",   "genome",   "chromosome",
     "ribosome", "nucleus",  "bacteria", "virus",      "organism", "species",   "evolution", "allele",
     "mutation", "tissue",   "neuron",   "hormone",    "ecosystem", "photosynthesis", "mitochondria", "dna"},
    {"python",   "loop",      "exception", "compiler", "function", "recursion", "array",   "pointer",
     "variable", "class",     "object",    "method",   "string",   "integer",   "debugger", "stack",
     "queue",    "hashmap",   "iterator",  "library",  "syntax",   "runtime",   "thread",  "bytecode"},
    {"treaty",    "empire",   "revolution", "king",     "peasant",  "colony",   "dynasty", "senate",
     "republic",  "crusade",  "monarchy",   "parliament", "pharaoh", "rebellion", "feudalism", "renaissance",
     "reformation", "serfdom", "emperor",   "conquest", "pilgrim",  "merchant", "castle",  "archive"},
    {"acid",     "metal",    "electron", "orbital",  "catalyst", "molecule", "isotope", "solvent",
     "reaction", "oxidation", "polymer", "titration", "enthalpy", "entropy", "ion",     "valence",
     "compound", "solution", "alkaline", "nitrogen", "carbon",  "hydrogen", "covalent", "precipitate"},
};
constexpr std::string_view kGeneralTerms[kCourses][24] = {
    {"onion",   "garlic",  "butter",  "bread",   "sauce",   "pepper",  "basil",   "tomato",
     "oven",    "skillet", "flour",   "yeast",   "broth",   "pasta",   "cumin",   "ginger",
     "lemon",   "vinegar", "dough",   "cinnamon", "saffron", "risotto", "noodles", "pastry"},
    {"flight",  "hotel",   "harbor",  "museum",  "passport", "luggage", "airport", "ferry",
     "hostel",  "itinerary", "visa",  "cathedral", "island", "volcano", "glacier", "canyon",
     "souvenir", "map",    "tourist", "border",  "village", "cruise",  "suitcase", "tram"},
    {"striker", "goalkeeper", "referee", "penalty", "league", "stadium", "coach",  "lineup",
     "midfielder", "defender", "tournament", "trophy", "offside", "corner", "header", "dribble",
     "captain", "substitute", "playoff", "season",  "fans",    "jersey",  "whistle", "kickoff"},
    {"guitar",  "drummer", "singer",  "lyrics",  "chorus",  "melody",  "rhythm",  "album",
     "violin",  "piano",   "bassist", "amplifier", "orchestra", "tempo", "harmony", "ballad",
     "encore",  "festival", "vinyl",  "saxophone", "trumpet", "studio", "soundcheck", "setlist"},
    {"tomatoes", "seeds",  "roses",   "soil",    "compost", "shovel",  "hedge",   "tulips",
     "lettuce", "mulch",   "greenhouse", "fertilizer", "orchard", "weeds", "sprinkler", "trellis",
     "bulbs",   "pruning", "seedlings", "zucchini", "marigold", "lavender", "rake",  "hose"},
};
constexpr std::string_view kEducationSubjects[] = {
    "i do not get the {t} in problem {k}",
    "how does the {t} relate to the {t}",
    "the {t} and the {t} were on the slides",
    "is the {t} part of the {t} question",
    "the textbook explains the {t} with a {t}",
    "my notes on the {t} and {t} are attached",
};
constexpr std::string_view kGeneralSubjects[] = {
    "we talked about the {t} and the {t}",
    "the {t} was better than the {t}",
    "does anyone have tips for the {t}",
    "i finally tried the {t} with a {t}",
    "the {t} cost {k} dollars",
    "my favorite part was the {t}",
};
// Chance that a filler sentence comes from the post's own course.
constexpr double kSubjectRate = 0.7;

std::string fill_template(std::string_view pattern, std::string_view noun, std::size_t number,
                          std::span<const std::string_view> terms = {}, Rng *rng = nullptr) {
    std::string out;
    for (std::size_t i = 0; i < pattern.size(); ++i) {
        if (pattern.compare(i, 3, "{t}") == 0) {
            out += terms[rng->uniform_index(terms.size())];
            i += 2;
        } else if (pattern.compare(i, 3, "{n}") == 0) {
            out += noun;
            i += 2;
        } else if (pattern.compare(i, 3, "{k}") == 0) {
            out += std::to_string(number);
            i += 2;
        } else {
            out += pattern[i];
        }
    }
    return out;
}

std::span<const std::string_view> phrases_for(Task task) {
    switch (task) {
        case Task::urgency: return kUrgencyPhrases;
        case Task::confusion: return kConfusionPhrases;
        case Task::sentiment: return kSentimentPhrases;
    }
    return {};
}

template <typename T>
void shuffle_in_place(std::vector<T> &items, Rng &rng) {
    for (std::size_t i = items.size(); i > 1; --i) {
        std::swap(items[i - 1], items[rng.uniform_index(i)]);
    }
}

// A post text with the given per-task labels (indexed like kAllTasks).
std::string make_post(Theme theme, std::size_t course, const bool positive[3], Rng &rng) {
    const bool edu = theme == Theme::education;
    const auto nouns = edu ? std::span<const std::string_view>(kEducationNouns)
                           : std::span<const std::string_view>(kGeneralNouns);
    const auto sentences = edu ? std::span<const std::string_view>(kEducationSentences)
                               : std::span<const std::string_view>(kGeneralSentences);
    const auto subject = edu ? std::span<const std::string_view>(kEducationSubjects)
                             : std::span<const std::string_view>(kGeneralSubjects);
    const auto terms = edu ? std::span<const std::string_view>(kEducationTerms[course])
                           : std::span<const std::string_view>(kGeneralTerms[course]);
    auto noun = [&] { return nouns[rng.uniform_index(nouns.size())]; };
    std::vector<std::string> parts;
    const std::size_t filler = 1 + rng.uniform_index(3);
    for (std::size_t i = 0; i < filler; ++i) {
        const auto pool = rng.uniform() < kSubjectRate ? subject : sentences;
        parts.push_back(
            fill_template(pool[rng.uniform_index(pool.size())], noun(), 1 + rng.uniform_index(12), terms, &rng));
    }
    for (std::size_t t = 0; t < 3; ++t) {
        if (positive[t]) {
            const auto options = phrases_for(kAllTasks[t]);
            const std::string phrase = fill_template(options[rng.uniform_index(options.size())], noun(), 0);
            parts.insert(parts.begin() + static_cast<std::ptrdiff_t>(rng.uniform_index(parts.size() + 1)), phrase);
        }
    }
    std::string text;
    for (const auto &p : parts) {
        if (!text.empty()) {
            text += rng.uniform() < 0.5 ? " . " : " , ";
        }
        text += p;
    }
    return text;
}

double draw_score(bool positive, Rng &rng) {
    // half-point grid: positives 4.0..7.0, negatives 1.0..3.5
    const double base = positive ? kPositiveThreshold : kMinScore;
    const std::size_t steps = positive ? 7 : 6;
    return base + 0.5 * static_cast<double>(rng.uniform_index(steps));
}

std::string describe_json_type(const ordered_json &v) { return v.type_name(); }

struct RecordErrors {
    std::vector<std::string> messages;
    bool all_validation = true;

    void add(std::string_view source, std::size_t line, const std::string &what, bool validation) {
        messages.push_back(std::string(source) + ":" + std::to_string(line) + ": " + what);
        all_validation = all_validation && validation;
    }
    void raise_if_any() const {
        if (messages.empty()) {
            return;
        }
        std::string text = std::to_string(messages.size()) + " invalid record(s):";
        for (const auto &m : messages) {
            text += "\n  " + m;
        }
        if (all_validation) {
            throw ValidationError(text);
        }
        throw InputError(text);
    }
};

// Runs validate_post and routes the outcome into `errors`.
bool accept(const LabeledPost &post, std::string_view source, std::size_t line, RecordErrors &errors) {
    try {
        validate_post(post);
        return true;
    } catch (const ValidationError &e) {
        errors.add(source, line, e.what(), true);
        return false;
    }
}

double parse_csv_score(const std::string &field, const std::string &column) {
    try {
        std::size_t used = 0;
        const double v = std::stod(field, &used);
        if (used == field.size()) {
            return v;
        }
    } catch (const std::exception &) {
    }
    throw InputError("column '" + column + "' is not a number: '" + field + "'");
}

// Splits CSV text into records; returns (first line number, fields) pairs.
std::vector<std::pair<std::size_t, std::vector<std::string>>> csv_records(std::string_view csv,
                                                                          std::string_view source) {
    std::vector<std::pair<std::size_t, std::vector<std::string>>> records;
    std::vector<std::string> fields;
    std::string field;
    bool quoted = false;
    bool field_started = false;
    std::size_t line = 1, record_line = 1;
    auto end_field = [&] {
        fields.push_back(std::move(field));
        field.clear();
        field_started = false;
    };
    auto end_record = [&] {
        end_field();
        if (!(fields.size() == 1 && fields[0].empty())) {
            records.emplace_back(record_line, std::move(fields));
        }
        fields.clear();
        record_line = line;
    };
    for (std::size_t i = 0; i < csv.size(); ++i) {
        const char c = csv[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < csv.size() && csv[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                if (c == '\n') {
                    ++line;
                }
                field += c;
            }
        } else if (c == '"' && !field_started) {
            quoted = true;
            field_started = true;
        } else if (c == ',') {
            end_field();
        } else if (c == '\n' || c == '\r') {
            if (c == '\r' && i + 1 < csv.size() && csv[i + 1] == '\n') {
                ++i;
            }
            ++line;
            end_record();
        } else {
            field += c;
            field_started = true;
        }
    }
    if (quoted) {
        throw InputError(std::string(source) + ":" + std::to_string(record_line) + ": unterminated quoted field");
    }
    if (!field.empty() || !fields.empty()) {
        end_record();
    }
    return records;
}

}  // namespace

std::string_view task_name(Task task) {
    switch (task) {
        case Task::sentiment: return "sentiment";
        case Task::confusion: return "confusion";
        case Task::urgency: return "urgency";
    }
    return "?";
}

Task parse_task(std::string_view name) {
    for (const Task t : kAllTasks) {
        if (task_name(t) == name) {
            return t;
        }
    }
    throw ConfigError("unknown task '" + std::string(name) + "' (expected sentiment, confusion or urgency)");
}

double LabeledPost::score(Task task) const {
    switch (task) {
        case Task::sentiment: return sentiment;
        case Task::confusion: return confusion;
        case Task::urgency: return urgency;
    }
    return 0.0;
}

void validate_post(const LabeledPost &post) {
    for (const Task t : kAllTasks) {
        const double s = post.score(t);
        if (!(s >= kMinScore && s <= kMaxScore)) {
            throw ValidationError(std::string(task_name(t)) + " score " + std::to_string(s) +
                                  " outside the Likert range [1,7]");
        }
    }
    if (normalize_text(post.text).empty()) {
        throw ValidationError("post '" + post.id + "' has no text after normalization");
    }
}

std::vector<LabeledPost> parse_posts(std::string_view jsonl, std::string_view source) {
    std::vector<LabeledPost> posts;
    RecordErrors errors;
    std::size_t line_no = 0;
    std::size_t start = 0;
    bool any_content = false;
    while (start < jsonl.size()) {
        std::size_t end = jsonl.find('\n', start);
        if (end == std::string_view::npos) {
            end = jsonl.size();
        }
        std::string_view line = jsonl.substr(start, end - start);
        start = end + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.remove_suffix(1);
        }
        if (line.find_first_not_of(" \t") == std::string_view::npos) {
            continue;
        }
        any_content = true;
        ordered_json record;
        try {
            record = ordered_json::parse(line);
        } catch (const nlohmann::json::parse_error &e) {
            errors.add(source, line_no, std::string("malformed JSON: ") + e.what(), false);
            continue;
        }
        if (!record.is_object()) {
            errors.add(source, line_no, "expected a JSON object, got " + describe_json_type(record), false);
            continue;
        }
        LabeledPost post;
        std::string problem;
        auto text_field = [&](const char *key, std::string &out) {
            const auto it = record.find(key);
            if (it == record.end() || !it->is_string()) {
                problem = std::string("missing or non-string \"") + key + "\"";
                return false;
            }
            out = it->get<std::string>();
            return true;
        };
        auto score_field = [&](const char *key, double &out) {
            const auto it = record.find(key);
            if (it == record.end() || !it->is_number()) {
                problem = std::string("missing or non-numeric \"") + key + "\"";
                return false;
            }
            out = it->get<double>();
            return true;
        };
        const bool ok = text_field("id", post.id) && text_field("text", post.text) &&
                        score_field("sentiment", post.sentiment) && score_field("confusion", post.confusion) &&
                        score_field("urgency", post.urgency);
        if (!ok) {
            errors.add(source, line_no, problem, false);
            continue;
        }
        if (const auto it = record.find("course_id"); it != record.end() && !it->is_null()) {
            if (!it->is_string()) {
                errors.add(source, line_no, "\"course_id\" must be a string", false);
                continue;
            }
            post.course_id = it->get<std::string>();
        }
        if (accept(post, source, line_no, errors)) {
            posts.push_back(std::move(post));
        }
    }
    errors.raise_if_any();
    if (!any_content) {
        warn(std::string(source) + " contains no posts");
    }
    return posts;
}

std::vector<LabeledPost> load_posts(const std::filesystem::path &path) {
    return parse_posts(read_file(path), path.string());
}

std::string posts_to_jsonl(std::span<const LabeledPost> posts) {
    std::string out;
    for (const auto &p : posts) {
        ordered_json record;
        record["id"] = p.id;
        record["text"] = p.text;
        record["sentiment"] = p.sentiment;
        record["confusion"] = p.confusion;
        record["urgency"] = p.urgency;
        if (p.course_id) {
            record["course_id"] = *p.course_id;
        }
        out += record.dump();
        out += '\n';
    }
    return out;
}

void save_posts(std::span<const LabeledPost> posts, const std::filesystem::path &path) {
    write_file_atomic(path, posts_to_jsonl(posts));
}

std::vector<LabeledPost> parse_posts_csv(std::string_view csv, const CsvColumnMap &columns, std::string_view source) {
    for (const auto &[field, header] : columns) {
        if (field != "id" && field != "text" && field != "sentiment" && field != "confusion" && field != "urgency" &&
            field != "course_id") {
            throw ConfigError("unknown post field '" + field + "' in CSV column map");
        }
    }
    const auto records = csv_records(csv, source);
    if (records.empty()) {
        warn(std::string(source) + " contains no posts");
        return {};
    }
    const auto &header = records.front().second;
    std::map<std::string, std::size_t> index;
    for (const char *field : {"id", "text", "sentiment", "confusion", "urgency", "course_id"}) {
        const auto mapped = columns.find(field);
        const std::string name = mapped != columns.end() ? mapped->second : std::string(field);
        const auto it = std::find(header.begin(), header.end(), name);
        if (it != header.end()) {
            index[field] = static_cast<std::size_t>(it - header.begin());
        } else if (std::string_view(field) != "course_id") {
            throw InputError(std::string(source) + ": CSV header lacks column '" + name + "' for field '" + field +
                             "'");
        }
    }
    std::vector<LabeledPost> posts;
    RecordErrors errors;
    for (std::size_t r = 1; r < records.size(); ++r) {
        const auto &[line, fields] = records[r];
        if (fields.size() != header.size()) {
            errors.add(source, line,
                       "expected " + std::to_string(header.size()) + " fields, found " + std::to_string(fields.size()),
                       false);
            continue;
        }
        LabeledPost post;
        try {
            post.id = fields[index.at("id")];
            post.text = fields[index.at("text")];
            post.sentiment = parse_csv_score(fields[index.at("sentiment")], "sentiment");
            post.confusion = parse_csv_score(fields[index.at("confusion")], "confusion");
            post.urgency = parse_csv_score(fields[index.at("urgency")], "urgency");
        } catch (const InputError &e) {
            errors.add(source, line, e.what(), false);
            continue;
        }
        if (const auto it = index.find("course_id"); it != index.end() && !fields[it->second].empty()) {
            post.course_id = fields[it->second];
        }
        if (accept(post, source, line, errors)) {
            posts.push_back(std::move(post));
        }
    }
    errors.raise_if_any();
    return posts;
}

std::vector<LabeledPost> load_posts_csv(const std::filesystem::path &path, const CsvColumnMap &columns) {
    return parse_posts_csv(read_file(path), columns, path.string());
}

int binarize(double score) {
    if (!(score >= kMinScore && score <= kMaxScore)) {
        throw ValidationError("score " + std::to_string(score) + " outside the Likert range [1,7]");
    }
    return score >= kPositiveThreshold ? 1 : 0;
}

std::size_t TaskDataset::positives() const {
    return static_cast<std::size_t>(
        std::count_if(examples.begin(), examples.end(), [](const Example &e) { return e.label == 1; }));
}

TaskDataset make_task_dataset(std::span<const LabeledPost> posts, Task task, std::string provenance) {
    TaskDataset d;
    d.task = task;
    d.provenance = std::move(provenance);
    d.examples.reserve(posts.size());
    for (const auto &p : posts) {
        d.examples.push_back({p.text, binarize(p.score(task)), p.course_id.value_or("")});
    }
    return d;
}

DatasetSplit split_dataset(const TaskDataset &dataset, std::uint64_t seed, Fraction train_fraction,
                           bool stratify_by_course) {
    if (train_fraction.denominator == 0 || train_fraction.numerator > train_fraction.denominator) {
        throw ConfigError("train fraction must lie in [0,1]");
    }
    const std::size_t n = dataset.examples.size();
    if (n == 0) {
        throw InputError("cannot split an empty dataset");
    }
    Rng rng(seed);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    if (!stratify_by_course) {
        Rng shuffle_rng = rng.split(0);
        shuffle_in_place(order, shuffle_rng);
    } else {
        std::map<std::string, std::vector<std::size_t>> groups;
        for (std::size_t i = 0; i < n; ++i) {
            groups[dataset.examples[i].course_id].push_back(i);
        }
        // position of each example within its shuffled course, as a fraction of the course size
        std::vector<std::pair<double, std::size_t>> keyed;
        std::uint64_t g = 0;
        for (auto &[course, members] : groups) {
            Rng group_rng = rng.split(++g);
            shuffle_in_place(members, group_rng);
            const double offset = group_rng.uniform();
            for (std::size_t r = 0; r < members.size(); ++r) {
                keyed.emplace_back((static_cast<double>(r) + offset) / static_cast<double>(members.size()),
                                   members[r]);
            }
        }
        std::stable_sort(keyed.begin(), keyed.end(),
                         [](const auto &a, const auto &b) { return a.first < b.first; });
        for (std::size_t i = 0; i < n; ++i) {
            order[i] = keyed[i].second;
        }
    }
    const std::size_t n_train = n * train_fraction.numerator / train_fraction.denominator;
    DatasetSplit out;
    for (TaskDataset *part : {&out.train, &out.test}) {
        part->task = dataset.task;
        part->split_seed = seed;
        part->provenance = dataset.provenance;
    }
    for (std::size_t i = 0; i < n; ++i) {
        (i < n_train ? out.train : out.test).examples.push_back(dataset.examples[order[i]]);
    }
    if (out.train.examples.empty() || out.test.examples.empty()) {
        warn("split of " + std::to_string(n) + " example(s) leaves an empty " +
             (out.train.examples.empty() ? "training" : "test") + " set");
    }
    return out;
}

std::string_view theme_name(Theme theme) { return theme == Theme::education ? "education" : "general"; }

Theme parse_theme(std::string_view name) {
    if (name == "education") {
        return Theme::education;
    }
    if (name == "general") {
        return Theme::general;
    }
    throw ConfigError("unknown theme '" + std::string(name) + "' (expected education or general)");
}

std::span<const std::string_view> keyword_family(Task task) {
    switch (task) {
        case Task::urgency: return kUrgencyWords;
        case Task::confusion: return kConfusionWords;
        case Task::sentiment: return kSentimentWords;
    }
    return {};
}

int keyword_oracle(std::string_view text, Task task) {
    const auto family = keyword_family(task);
    for (const auto &w : split_words(text)) {
        if (std::find(family.begin(), family.end(), w.text) != family.end()) {
            return 1;
        }
    }
    return 0;
}

SynthCorpus synth_corpus(const SynthSpec &spec, std::uint64_t seed) {
    if (spec.n_posts == 0) {
        throw ConfigError("synthetic corpus needs at least one post");
    }
    if (!(spec.class_balance > 0.0 && spec.class_balance < 1.0)) {
        throw ConfigError("class_balance must lie in (0,1)");
    }
    const Rng root(seed);
    const auto n_positive = static_cast<std::size_t>(std::llround(static_cast<double>(spec.n_posts) * spec.class_balance));

    // labels[t][i]: exactly n_positive ones per task, placed by independent shuffles
    std::vector<std::vector<bool>> labels(3, std::vector<bool>(spec.n_posts, false));
    for (std::size_t t = 0; t < 3; ++t) {
        std::vector<std::size_t> order(spec.n_posts);
        std::iota(order.begin(), order.end(), 0);
        Rng rng = root.split(10 + t);
        shuffle_in_place(order, rng);
        for (std::size_t i = 0; i < n_positive; ++i) {
            labels[t][order[i]] = true;
        }
    }

    SynthCorpus out;
    Rng post_rng = root.split(1);
    for (std::size_t i = 0; i < spec.n_posts; ++i) {
        const bool positive[3] = {labels[0][i], labels[1][i], labels[2][i]};
        LabeledPost post;
        char id[32];
        std::snprintf(id, sizeof id, "synth-%06zu", i + 1);
        post.id = id;
        const std::size_t course = post_rng.uniform_index(kCourses);
        post.text = make_post(spec.theme, course, positive, post_rng);
        post.confusion = draw_score(positive[0], post_rng);
        post.sentiment = draw_score(positive[1], post_rng);
        post.urgency = draw_score(positive[2], post_rng);
        post.course_id = "course-" + std::to_string(1 + course);
        out.posts.push_back(std::move(post));
    }

    Rng text_rng = root.split(2);
    for (std::size_t i = 0; i < spec.n_unlabeled; ++i) {
        const bool positive[3] = {text_rng.uniform() < spec.class_balance, text_rng.uniform() < spec.class_balance,
                                  text_rng.uniform() < spec.class_balance};
        const std::size_t course = text_rng.uniform_index(kCourses);
        out.unlabeled.push_back(make_post(spec.theme, course, positive, text_rng));
    }
    return out;
}

}  // namespace edulm
