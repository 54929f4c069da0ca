#include "edulm/tokenizer.hpp"

#include <algorithm>
#include <map>
#include <sstream>

#include <unicode/locid.h>
#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>
#include <unicode/utf8.h>

#include "edulm/error.hpp"
#include "edulm/io.hpp"

namespace edulm {

namespace {

constexpr std::size_t kMaxCharsPerWord = 100;

const std::vector<std::string> &special_tokens() {
    static const std::vector<std::string> specials{"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};
    return specials;
}

bool is_punctuation(UChar32 c) {
    // every ASCII symbol counts, not just Unicode's P* categories ($, +, <, ...)
    if ((c >= 33 && c <= 47) || (c >= 58 && c <= 64) || (c >= 91 && c <= 96) || (c >= 123 && c <= 126)) {
        return true;
    }
    return u_ispunct(c) != 0;
}

bool is_space(UChar32 c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || u_isUWhiteSpace(c); }

std::string normalize_word(std::string_view raw) {
    UErrorCode status = U_ZERO_ERROR;
    const icu::Normalizer2 *nfc = icu::Normalizer2::getNFCInstance(status);
    if (U_FAILURE(status)) {
        throw Error("ICU NFC normalizer unavailable");
    }
    icu::UnicodeString text = icu::UnicodeString::fromUTF8(icu::StringPiece(raw.data(), static_cast<int32_t>(raw.size())));
    text.toLower(icu::Locale::getRoot());
    icu::UnicodeString normalized = nfc->normalize(text, status);
    if (U_FAILURE(status)) {
        throw InputError("text could not be normalized");
    }
    std::string out;
    normalized.toUTF8String(out);
    return out;
}

}  // namespace

Vocab Vocab::from_tokens(std::vector<std::string> tokens) {
    const auto &specials = special_tokens();
    if (tokens.size() < specials.size()) {
        throw InputError("vocabulary must start with the 5 special tokens");
    }
    for (std::size_t i = 0; i < specials.size(); ++i) {
        if (tokens[i] != specials[i]) {
            throw InputError("vocabulary slot " + std::to_string(i) + " must be " + specials[i] + ", found '" +
                             tokens[i] + "'");
        }
    }
    Vocab vocab;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        const std::string &t = tokens[i];
        if (t.empty() || t.find_first_of(" \t\r\n") != std::string::npos) {
            throw InputError("vocabulary entry " + std::to_string(i) + " is empty or contains whitespace");
        }
        if (!vocab.index_.emplace(t, static_cast<std::int32_t>(i)).second) {
            throw InputError("duplicate vocabulary entry '" + t + "' at line " + std::to_string(i));
        }
    }
    vocab.tokens_ = std::move(tokens);
    return vocab;
}

Vocab Vocab::from_text(std::string_view text) {
    std::vector<std::string> tokens;
    std::size_t start = 0;
    while (start < text.size()) {
        std::size_t end = text.find('\n', start);
        if (end == std::string_view::npos) {
            end = text.size();
        }
        tokens.emplace_back(text.substr(start, end - start));
        start = end + 1;
    }
    return from_tokens(std::move(tokens));
}

Vocab Vocab::load(const std::filesystem::path &path) { return from_text(read_file(path)); }

std::string Vocab::to_text() const {
    std::string out;
    for (const auto &t : tokens_) {
        out += t;
        out += '\n';
    }
    return out;
}

void Vocab::save(const std::filesystem::path &path) const { write_file_atomic(path, to_text()); }

const std::string &Vocab::token(std::int32_t id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
        throw InputError("token id " + std::to_string(id) + " outside vocabulary of " +
                         std::to_string(tokens_.size()));
    }
    return tokens_[static_cast<std::size_t>(id)];
}

std::optional<std::int32_t> Vocab::find(std::string_view token) const {
    const auto it = index_.find(std::string(token));
    if (it == index_.end()) {
        return std::nullopt;
    }
    return it->second;
}

std::int32_t Vocab::id_of(std::string_view token) const { return find(token).value_or(kUnkId); }

std::vector<std::string> utf8_chars(std::string_view text) {
    std::vector<std::string> out;
    int32_t i = 0;
    const auto n = static_cast<int32_t>(text.size());
    while (i < n) {
        const int32_t start = i;
        UChar32 c;
        U8_NEXT(text.data(), i, n, c);
        out.emplace_back(text.substr(static_cast<std::size_t>(start), static_cast<std::size_t>(i - start)));
    }
    return out;
}

std::vector<Word> split_words(std::string_view text) {
    std::vector<Word> words;
    const auto n = static_cast<int32_t>(text.size());
    int32_t i = 0;
    std::size_t word_start = 0;
    bool in_word = false;
    auto flush = [&](std::size_t end) {
        if (in_word) {
            std::string normalized = normalize_word(text.substr(word_start, end - word_start));
            if (!normalized.empty()) {
                words.push_back({std::move(normalized), word_start, end});
            }
            in_word = false;
        }
    };
    while (i < n) {
        const int32_t start = i;
        UChar32 c;
        U8_NEXT(text.data(), i, n, c);
        const auto begin = static_cast<std::size_t>(start);
        const auto end = static_cast<std::size_t>(i);
        if (c >= 0 && is_space(c)) {
            flush(begin);
        } else if (c >= 0 && is_punctuation(c)) {
            flush(begin);
            words.push_back({normalize_word(text.substr(begin, end - begin)), begin, end});
        } else if (!in_word) {
            in_word = true;
            word_start = begin;
        }
    }
    flush(text.size());
    return words;
}

std::string normalize_text(std::string_view text) {
    std::string out;
    for (const auto &w : split_words(text)) {
        if (!out.empty()) {
            out += ' ';
        }
        out += w.text;
    }
    return out;
}

Vocab build_vocab(std::span<const std::string> corpus_lines, std::size_t target_size, std::size_t min_freq) {
    if (target_size <= static_cast<std::size_t>(kNumSpecialTokens)) {
        throw ConfigError("vocabulary target size must exceed the 5 special tokens");
    }
    if (min_freq == 0) {
        throw ConfigError("min_freq must be positive");
    }
    std::map<std::string, std::size_t> word_freq;
    std::map<std::string, std::size_t> char_freq;
    for (const auto &line : corpus_lines) {
        for (const auto &w : split_words(line)) {
            ++word_freq[w.text];
            for (auto &c : utf8_chars(w.text)) {
                ++char_freq[c];
            }
        }
    }
    if (word_freq.empty()) {
        throw InputError("cannot build a vocabulary from an empty corpus");
    }

    using Unit = std::pair<std::string, std::size_t>;
    auto rank = [](std::vector<Unit> &units) {
        std::sort(units.begin(), units.end(), [](const Unit &a, const Unit &b) {
            return a.second != b.second ? a.second > b.second : a.first < b.first;
        });
    };
    std::vector<Unit> char_units;
    for (const auto &[c, count] : char_freq) {
        if (count >= min_freq) {
            char_units.emplace_back(c, count);
            char_units.emplace_back(std::string(kContinuationMarker) + c, count);
        }
    }
    std::vector<Unit> word_units;
    for (const auto &[w, count] : word_freq) {
        if (count >= min_freq && utf8_chars(w).size() > 1) {
            word_units.emplace_back(w, count);
        }
    }
    rank(char_units);
    rank(word_units);

    std::vector<std::string> tokens = special_tokens();
    for (const auto *group : {&char_units, &word_units}) {
        for (const auto &unit : *group) {
            if (tokens.size() >= target_size) {
                break;
            }
            tokens.push_back(unit.first);
        }
    }
    return Vocab::from_tokens(std::move(tokens));
}

Vocab build_vocab(std::istream &corpus, std::size_t target_size, std::size_t min_freq) {
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(corpus, line)) {
        lines.push_back(line);
    }
    return build_vocab(lines, target_size, min_freq);
}

std::vector<std::string> wordpiece_split(std::string_view word, const Vocab &vocab) {
    const std::vector<std::string> chars = utf8_chars(word);
    if (chars.empty() || chars.size() > kMaxCharsPerWord) {
        return {special_tokens()[kUnkId]};
    }
    std::vector<std::string> pieces;
    std::size_t start = 0;
    while (start < chars.size()) {
        std::optional<std::string> match;
        std::size_t match_end = start;
        for (std::size_t end = chars.size(); end > start; --end) {
            std::string candidate = start > 0 ? std::string(kContinuationMarker) : std::string();
            for (std::size_t c = start; c < end; ++c) {
                candidate += chars[c];
            }
            if (vocab.contains(candidate)) {
                match = std::move(candidate);
                match_end = end;
                break;
            }
        }
        if (!match) {
            return {special_tokens()[kUnkId]};
        }
        pieces.push_back(std::move(*match));
        start = match_end;
    }
    return pieces;
}

std::size_t TokenSequence::active_length() const {
    return static_cast<std::size_t>(std::count(attention_mask.begin(), attention_mask.end(), std::uint8_t{1}));
}

TokenSequence encode(std::string_view text, const Vocab &vocab, std::size_t max_len, Truncation truncation) {
    if (max_len < 3) {
        throw ConfigError("max_len must be at least 3 ([CLS] + 1 token + [SEP])");
    }
    std::vector<std::int32_t> content;
    std::vector<std::pair<std::size_t, std::size_t>> spans;
    for (const auto &word : split_words(text)) {
        for (const auto &piece : wordpiece_split(word.text, vocab)) {
            content.push_back(vocab.id_of(piece));
            spans.emplace_back(word.begin, word.end);
        }
    }
    const std::size_t budget = max_len - 2;
    if (content.size() > budget) {
        const auto drop = static_cast<std::ptrdiff_t>(content.size() - budget);
        if (truncation == Truncation::keep_head) {
            content.resize(budget);
            spans.resize(budget);
        } else {
            content.erase(content.begin(), content.begin() + drop);
            spans.erase(spans.begin(), spans.begin() + drop);
        }
    }
    TokenSequence seq;
    seq.ids.reserve(max_len);
    seq.ids.push_back(kClsId);
    seq.ids.insert(seq.ids.end(), content.begin(), content.end());
    seq.ids.push_back(kSepId);
    seq.source_spans.emplace_back(0, 0);
    seq.source_spans.insert(seq.source_spans.end(), spans.begin(), spans.end());
    seq.source_spans.emplace_back(0, 0);
    seq.attention_mask.assign(seq.ids.size(), 1);
    seq.ids.resize(max_len, kPadId);
    seq.attention_mask.resize(max_len, 0);
    seq.source_spans.resize(max_len, {0, 0});
    seq.segment_ids.assign(max_len, 0);
    return seq;
}

std::string decode(std::span<const std::int32_t> ids, const Vocab &vocab) {
    std::string out;
    for (const std::int32_t id : ids) {
        const std::string &tok = vocab.token(id);
        if (is_special_id(id)) {
            continue;
        }
        if (tok.starts_with(kContinuationMarker) && !out.empty()) {
            out += tok.substr(kContinuationMarker.size());
        } else {
            if (!out.empty()) {
                out += ' ';
            }
            out += tok;
        }
    }
    return out;
}

}  // namespace edulm
