#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "diachron/corpus.hpp"

namespace diachron {

/// Maximal run of recurring fixed-length phrases in one document,
/// token indices half-open.
struct BoilerplateSpan {
    std::uint32_t doc = 0;
    std::uint32_t start = 0;
    std::uint32_t end = 0;
};

/// A frequently-recurring 4-gram with its reserved 16-bit unit code.
struct PhraseCode {
    std::array<std::string, 4> phrase;
    std::uint16_t code = 0;
    std::uint64_t count = 0;
};

/// One 4-of-5 window subset. subset_mask has bit o set when window offset o
/// is included; hash concatenates the four included unit codes in window
/// order, 16 bits each.
struct SkipgramRecord {
    std::uint64_t hash = 0;
    std::uint32_t doc = 0;
    std::uint32_t base_pos = 0;
    std::uint8_t subset_mask = 0;
};

/// Aligned approximately-parallel passage between two documents. Documents
/// are corpus indices; spans are half-open token index ranges. matched_words
/// counts original token positions at aligned identical unit codes (a
/// conflated phrase unit contributes its token length).
struct ReuseMatch {
    std::uint32_t base_doc = 0;
    std::uint32_t target_doc = 0;
    std::uint32_t base_start = 0;
    std::uint32_t base_end = 0;
    std::uint32_t target_start = 0;
    std::uint32_t target_end = 0;
    std::uint32_t matched_words = 0;
};

/// Order in which the two selected least-frequent letters enter the code.
enum class LetterOrder {
    canonical,  // ascending (corpus frequency, code point)
    word,       // order of first appearance in the token
};

struct ReuseParams {
    std::size_t phrase_len = 20;        // boilerplate n-gram length
    std::size_t boiler_min_count = 25;  // boilerplate frequency threshold
    std::size_t max_gap = 10;           // boilerplate conflation gap, tokens
    std::size_t top_k = 35000;          // frequent 4-gram budget; 0 disables conflation
    std::uint64_t min_phrase_count = 1; // frequency floor for conflated 4-grams
    std::size_t min_words = 16;         // minimum matched words per match
    std::size_t max_skip = 3;           // non-matching positions tolerated inside a match
    int min_gap_years = 50;
    LetterOrder letter_order = LetterOrder::canonical;
    std::size_t hash_group_cap = 0;     // skip collision groups larger than this; 0 = unlimited
    int threads = 1;
};

/// Token sequences mapped to dense ids. Ids are assigned in lexicographic
/// token order, so comparing id tuples compares the underlying phrases.
struct InternedCorpus {
    std::vector<std::vector<std::uint32_t>> docs;
    std::vector<std::string> vocab;

    std::optional<std::uint32_t> id_of(std::string_view token) const;
};

InternedCorpus intern_corpus(std::span<const Document> docs, int threads = 1);

/// 16-bit code for one token from its two least-frequent distinct characters
/// (ties broken by code point): index(c1) * |alphabet| + index(c2).
/// Single-character tokens duplicate their character. Characters absent from
/// the table raise DataError.
std::uint16_t word_code(std::string_view token, const CharFrequencyTable& chars,
                        LetterOrder order = LetterOrder::canonical);

/// Unit-code assignment for a corpus: character-pair codes in
/// [0, |alphabet|^2), phrase codes in [2^16 - reserved_top_k, 2^16).
/// Construction fails when the two ranges cannot coexist in 16 bits.
class ReuseCodec {
public:
    ReuseCodec(const InternedCorpus& interned, const CharFrequencyTable& chars, std::vector<PhraseCode> phrases,
               std::size_t reserved_top_k, LetterOrder order = LetterOrder::canonical);

    std::uint16_t code_for_id(std::uint32_t token_id) const { return code_by_id_[token_id]; }
    std::optional<std::uint16_t> phrase_code_at(std::span<const std::uint32_t> ids, std::size_t pos) const;
    const std::vector<PhraseCode>& phrases() const { return phrases_; }
    /// First code of the reserved phrase range; 65536 when none is reserved.
    std::uint32_t phrase_code_base() const { return phrase_base_; }

private:
    std::vector<std::uint16_t> code_by_id_;
    std::vector<PhraseCode> phrases_;
    std::vector<std::pair<std::array<std::uint32_t, 4>, std::uint16_t>> phrase_by_ids_;  // sorted
    std::uint32_t phrase_base_ = 65536;
};

/// One document rewritten as conflated units outside boilerplate. Each unit
/// keeps its original token offset and length; segments are the maximal unit
/// ranges windows may not cross.
struct UnitDoc {
    std::vector<std::uint16_t> codes;
    std::vector<std::uint32_t> token_start;
    std::vector<std::uint8_t> token_len;
    std::vector<std::pair<std::uint32_t, std::uint32_t>> segments;

    std::size_t units() const { return codes.size(); }
};

UnitDoc build_unit_doc(std::span<const std::uint32_t> token_ids, const ReuseCodec& codec,
                       std::span<const BoilerplateSpan> doc_spans);

/// Finds maximal spans of `phrase_len`-grams whose exact corpus frequency is
/// at least min_count, conflating qualifying occurrences within a document
/// that are separated by at most max_gap tokens. Spans per document are
/// disjoint and sorted; output ordered by (doc, start).
std::vector<BoilerplateSpan> find_boilerplate(std::span<const Document> docs, std::size_t phrase_len = 20,
                                              std::size_t min_count = 25, std::size_t max_gap = 10,
                                              int threads = 1);

/// Top-k most frequent n-grams outside boilerplate, ties at the cutoff broken
/// by lexicographic phrase order. Codes come from [2^16 - top_k, 2^16) in
/// rank order. min_phrase_count floors the frequency of returned phrases.
std::vector<PhraseCode> find_frequent_phrases(std::span<const Document> docs,
                                              std::span<const BoilerplateSpan> boilerplate, std::size_t n = 4,
                                              std::size_t top_k = 35000, std::uint64_t min_phrase_count = 1,
                                              int threads = 1);

/// All 4-of-5 skipgram records of one document; exactly 5 per eligible
/// window, windows never cross segment boundaries.
std::vector<SkipgramRecord> compute_skipgrams(const UnitDoc& doc, std::uint32_t doc_index);

/// Corpus-wide postings sorted by (hash, doc, pos): the flat layout that a
/// sharded build merges into and that the matcher streams over.
class SkipgramIndex {
public:
    struct Posting {
        std::uint64_t hash = 0;
        std::uint32_t doc = 0;
        std::uint32_t pos_mask = 0;  // pos in high 27 bits, subset mask in low 5

        std::uint32_t pos() const { return pos_mask >> 5; }
        std::uint8_t mask() const { return static_cast<std::uint8_t>(pos_mask & 0x1f); }
    };

    static SkipgramIndex build(std::span<const UnitDoc> unit_docs, int threads = 1);

    std::span<const Posting> postings() const { return postings_; }
    std::size_t doc_count() const { return doc_count_; }

    void save(const std::filesystem::path& path) const;
    static SkipgramIndex load(const std::filesystem::path& path);

private:
    std::vector<Posting> postings_;
    std::size_t doc_count_ = 0;
};

/// Matches between one ordered document pair. Collisions of skipgram hashes
/// are clustered on near-diagonals (diagonal keys within max_skip), aligned
/// identical positions are chained with gaps of at most max_skip, and chains
/// totalling at least min_words matched words become matches.
std::vector<ReuseMatch> match_documents(std::uint32_t base_doc, std::uint32_t target_doc, const SkipgramIndex& index,
                                        std::span<const UnitDoc> unit_docs, const ReuseParams& params);

/// All cross-document matches in the corpus, canonical order, independent of
/// thread count. Pairs are oriented (smaller corpus index first).
std::vector<ReuseMatch> find_all_matches(const SkipgramIndex& index, std::span<const UnitDoc> unit_docs,
                                         const ReuseParams& params);

/// Orients every match so base is the earlier document, then keeps matches
/// whose elapsed years reach min_gap. Same-date pairs are always dropped,
/// eliminating duplicate texts.
std::vector<ReuseMatch> filter_by_elapsed_years(std::vector<ReuseMatch> matches, std::span<const Document> docs,
                                                int min_gap = 50);

/// Size of the union of token positions covered by boilerplate spans or by
/// the later-document side of matches.
std::uint64_t count_reused_words(std::span<const Document> docs, std::span<const BoilerplateSpan> boilerplate,
                                 std::span<const ReuseMatch> filtered_matches);

/// Removes every later instance of detected reuse: match-covered positions
/// in later documents, and boilerplate spans everywhere except the
/// chronologically earliest occurrence of each identical span text.
std::vector<Document> hollow(std::span<const Document> docs, std::span<const BoilerplateSpan> boilerplate,
                             std::span<const ReuseMatch> filtered_matches);

struct MatchLengthStats {
    std::size_t count = 0;
    double mean = 0.0;
    double stdev = 0.0;
};

/// Mean and population standard deviation of target-side span lengths.
MatchLengthStats match_length_stats(std::span<const ReuseMatch> matches);

/// End-to-end SKP run: boilerplate, frequent phrases, matching, date filter.
struct ReuseResult {
    std::vector<BoilerplateSpan> boilerplate;
    std::vector<PhraseCode> phrases;
    std::vector<ReuseMatch> raw_matches;
    std::vector<ReuseMatch> matches;  // filtered, oriented earlier -> later
};

ReuseResult run_reuse(std::span<const Document> docs, const ReuseParams& params);

// JSONL serialization. Matches carry doc_ids on disk; loading maps them back
// to corpus indices and rejects unknown ids.
void save_matches_jsonl(const std::filesystem::path& path, std::span<const ReuseMatch> matches,
                        std::span<const Document> docs);
std::vector<ReuseMatch> load_matches_jsonl(const std::filesystem::path& path, std::span<const Document> docs);
void save_boilerplate_jsonl(const std::filesystem::path& path, std::span<const BoilerplateSpan> spans,
                            std::span<const Document> docs);
std::vector<BoilerplateSpan> load_boilerplate_jsonl(const std::filesystem::path& path,
                                                    std::span<const Document> docs);

}  // namespace diachron
