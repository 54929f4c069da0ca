#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace edulm {

inline constexpr std::int32_t kPadId = 0;
inline constexpr std::int32_t kUnkId = 1;
inline constexpr std::int32_t kClsId = 2;
inline constexpr std::int32_t kSepId = 3;
inline constexpr std::int32_t kMaskId = 4;
inline constexpr std::int32_t kNumSpecialTokens = 5;

inline constexpr std::string_view kContinuationMarker = "##";

inline bool is_special_id(std::int32_t id) { return id >= 0 && id < kNumSpecialTokens; }

/// Subword vocabulary. Ids are dense; ids 0-4 are [PAD] [UNK] [CLS] [SEP] [MASK].
class Vocab {
   public:
    /// Validates the special slots and uniqueness.
    static Vocab from_tokens(std::vector<std::string> tokens);
    /// One token per line; line number is the id.
    static Vocab from_text(std::string_view text);
    static Vocab load(const std::filesystem::path &path);

    std::string to_text() const;
    void save(const std::filesystem::path &path) const;

    std::size_t size() const noexcept { return tokens_.size(); }
    const std::vector<std::string> &tokens() const noexcept { return tokens_; }
    const std::string &token(std::int32_t id) const;
    std::optional<std::int32_t> find(std::string_view token) const;
    /// Falls back to [UNK].
    std::int32_t id_of(std::string_view token) const;
    bool contains(std::string_view token) const { return find(token).has_value(); }

   private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, std::int32_t> index_;
};

/// A normalized word with its byte span in the original text.
struct Word {
    std::string text;
    std::size_t begin = 0;
    std::size_t end = 0;
};

/// Splits on whitespace, isolates punctuation characters as their own words,
/// then applies NFC and lowercasing to each word.
std::vector<Word> split_words(std::string_view text);

/// Normalized words joined with single spaces (what decode reproduces).
std::string normalize_text(std::string_view text);

/// Splits a UTF-8 string into code points (each returned as its byte string).
std::vector<std::string> utf8_chars(std::string_view text);

/// Frequency-ranked vocabulary: specials, then every character seen at least
/// min_freq times (as both "c" and "##c"), then whole words. Within each
/// group: descending frequency, ties lexicographic. Truncated to target_size.
Vocab build_vocab(std::span<const std::string> corpus_lines, std::size_t target_size, std::size_t min_freq);
Vocab build_vocab(std::istream &corpus, std::size_t target_size, std::size_t min_freq);

/// Greedy longest-match-first segmentation; ["[UNK]"] if any position fails.
std::vector<std::string> wordpiece_split(std::string_view word, const Vocab &vocab);

enum class Truncation { keep_head, keep_tail };

struct TokenSequence {
    std::vector<std::int32_t> ids;
    std::vector<std::uint8_t> attention_mask;
    std::vector<std::uint8_t> segment_ids;
    /// Byte span in the source text for each position; (0,0) for specials.
    std::vector<std::pair<std::size_t, std::size_t>> source_spans;

    std::size_t length() const noexcept { return ids.size(); }
    /// Non-padding positions, including [CLS] and [SEP].
    std::size_t active_length() const;
};

/// [CLS] content [SEP] [PAD]..., exactly max_len long.
TokenSequence encode(std::string_view text, const Vocab &vocab, std::size_t max_len,
                     Truncation truncation = Truncation::keep_head);

/// Drops specials, merges "##" continuations, joins words with single spaces.
std::string decode(std::span<const std::int32_t> ids, const Vocab &vocab);

}  // namespace edulm
