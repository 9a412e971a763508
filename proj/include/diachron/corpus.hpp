#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "diachron/text.hpp"

namespace diachron {

/// One dated text. death_year is an AH calendar year; all computation keeps
/// dates as stored integers. lemmas, when present, aligns 1:1 with tokens.
struct Document {
    std::string doc_id;
    std::string title;
    std::string author;
    std::string source;
    int death_year = 0;
    std::vector<std::string> tokens;
    std::vector<std::string> lemmas;

    bool has_lemmas() const { return !lemmas.empty(); }
};

/// Corpus-wide character occurrence counts over token text, plus the
/// observed alphabet in ascending code point order. Alphabet indices define
/// the character half of the 16-bit word code space.
struct CharFrequencyTable {
    std::unordered_map<char32_t, std::uint64_t> counts;
    std::vector<char32_t> alphabet;
    std::unordered_map<char32_t, std::uint16_t> index;

    std::size_t alphabet_size() const { return alphabet.size(); }
    std::uint64_t count_of(char32_t cp) const {
        auto it = counts.find(cp);
        return it == counts.end() ? 0 : it->second;
    }
};

/// Half-open year interval [start_year, end_year) with its member documents,
/// identified by index into the corpus document array.
struct TimeBin {
    int start_year = 0;
    int end_year = 0;
    std::vector<std::size_t> doc_indices;

    bool empty() const { return doc_indices.empty(); }
    bool contains_year(int y) const { return y >= start_year && y < end_year; }
};

enum class IngestFormat { jsonl, plaintext_sidecar };

/// Reads documents from `path`, tokenizing and normalizing text. Records are
/// validated (doc_id present and unique, death_year present and positive,
/// lemmas aligned with tokens) and returned sorted by (death_year, doc_id).
/// All record-level problems are collected into a single DataError.
std::vector<Document> ingest(const std::filesystem::path& path, IngestFormat format,
                             const Normalizer& norm = Normalizer::arabic_default());

/// Exact corpus-wide character histogram over all document tokens.
/// Sharded over documents when threads > 1; the merged result is identical
/// for every shard count. Raises DataError when no characters are observed.
CharFrequencyTable build_char_table(std::span<const Document> docs, int threads = 1);

/// Partitions documents into bins of `width` years covering
/// [min death_year rounded down to width, max death_year rounded up), with
/// the first merge_head years of that range fused into a single bin.
/// Empty bins are retained. merge_head must be 0 or a multiple of width.
std::vector<TimeBin> bin_by_period(std::span<const Document> docs, int width, int merge_head = 0);

/// Concatenated token (or lemma) streams of the bin's documents, one span per
/// document so downstream consumers never form windows across document
/// boundaries. Spans alias the documents' storage.
std::vector<std::span<const std::string>> bin_sentences(std::span<const Document> docs, const TimeBin& bin,
                                                        bool use_lemmas = false);

// Versioned binary corpus container. Readers reject unknown magic/version.
void save_corpus(std::span<const Document> docs, const std::filesystem::path& path);
std::vector<Document> load_corpus(const std::filesystem::path& path);

/// Total token count across documents.
std::uint64_t total_tokens(std::span<const Document> docs);

}  // namespace diachron
