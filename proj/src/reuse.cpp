#include "diachron/reuse.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <tuple>
#include <unordered_map>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "diachron/errors.hpp"
#include "diachron/thread_pool.hpp"
#include "diachron/utf8.hpp"

namespace diachron {

namespace {

using Key4 = std::array<std::uint32_t, 4>;

constexpr std::uint64_t kHashBase = 0x9e3779b97f4a7c15ULL;

std::uint64_t pow_base(std::size_t n) {
    std::uint64_t r = 1;
    for (std::size_t i = 0; i < n; ++i) r *= kHashBase;
    return r;
}

/// Maximal token ranges of a document not covered by its boilerplate spans.
std::vector<std::pair<std::uint32_t, std::uint32_t>> free_segments(std::uint32_t doc_len,
                                                                   std::span<const BoilerplateSpan> doc_spans) {
    std::vector<std::pair<std::uint32_t, std::uint32_t>> segs;
    std::uint32_t cursor = 0;
    for (const auto& s : doc_spans) {
        if (s.start > cursor) segs.emplace_back(cursor, s.start);
        cursor = std::max(cursor, s.end);
    }
    if (cursor < doc_len) segs.emplace_back(cursor, doc_len);
    return segs;
}

/// Groups a span of boilerplate rows by document; spans must be sorted by doc.
template <typename T>
std::vector<std::span<const T>> rows_by_doc(std::span<const T> rows, std::size_t doc_count) {
    std::vector<std::span<const T>> by_doc(doc_count);
    std::size_t i = 0;
    while (i < rows.size()) {
        std::size_t j = i;
        while (j < rows.size() && rows[j].doc == rows[i].doc) ++j;
        by_doc[rows[i].doc] = rows.subspan(i, j - i);
        i = j;
    }
    return by_doc;
}

}  // namespace

std::optional<std::uint32_t> InternedCorpus::id_of(std::string_view token) const {
    auto it = std::lower_bound(vocab.begin(), vocab.end(), token);
    if (it == vocab.end() || *it != token) return std::nullopt;
    return static_cast<std::uint32_t>(it - vocab.begin());
}

InternedCorpus intern_corpus(std::span<const Document> docs, int threads) {
    InternedCorpus out;
    {
        std::unordered_set<std::string_view> seen;
        for (const auto& d : docs)
            for (const auto& t : d.tokens) seen.insert(t);
        out.vocab.reserve(seen.size());
        for (auto sv : seen) out.vocab.emplace_back(sv);
        std::sort(out.vocab.begin(), out.vocab.end());
    }
    std::unordered_map<std::string_view, std::uint32_t> ids;
    ids.reserve(out.vocab.size() * 2);
    for (std::uint32_t i = 0; i < out.vocab.size(); ++i) ids.emplace(out.vocab[i], i);

    out.docs.resize(docs.size());
    parallel_for(docs.size(), threads, [&](std::size_t i) {
        auto& seq = out.docs[i];
        seq.reserve(docs[i].tokens.size());
        for (const auto& t : docs[i].tokens) seq.push_back(ids.at(t));
    });
    return out;
}

std::uint16_t word_code(std::string_view token, const CharFrequencyTable& chars, LetterOrder order) {
    const std::vector<char32_t> cps = utf8_decode(token);
    if (cps.empty()) throw DataError("word_code: empty token");

    // Distinct characters with their first position in the token.
    std::vector<std::pair<char32_t, std::size_t>> distinct;
    for (std::size_t i = 0; i < cps.size(); ++i) {
        bool seen = false;
        for (const auto& d : distinct)
            if (d.first == cps[i]) {
                seen = true;
                break;
            }
        if (!seen) distinct.emplace_back(cps[i], i);
    }

    for (const auto& d : distinct)
        if (!chars.counts.count(d.first))
            throw DataError("word_code: character U+" + std::to_string(static_cast<std::uint32_t>(d.first)) +
                            " not in frequency table");

    std::sort(distinct.begin(), distinct.end(), [&](const auto& a, const auto& b) {
        const std::uint64_t fa = chars.count_of(a.first), fb = chars.count_of(b.first);
        if (fa != fb) return fa < fb;
        return a.first < b.first;
    });

    char32_t c1, c2;
    if (distinct.size() == 1) {
        c1 = c2 = distinct[0].first;
    } else {
        c1 = distinct[0].first;
        c2 = distinct[1].first;
        if (order == LetterOrder::word && distinct[0].second > distinct[1].second) std::swap(c1, c2);
    }
    const std::uint32_t a = chars.index.at(c1);
    const std::uint32_t b = chars.index.at(c2);
    return static_cast<std::uint16_t>(a * chars.alphabet_size() + b);
}

ReuseCodec::ReuseCodec(const InternedCorpus& interned, const CharFrequencyTable& chars,
                       std::vector<PhraseCode> phrases, std::size_t reserved_top_k, LetterOrder order)
    : phrases_(std::move(phrases)) {
    const std::uint64_t pair_space = static_cast<std::uint64_t>(chars.alphabet_size()) * chars.alphabet_size();
    if (pair_space + reserved_top_k > 65536)
        throw DataError("16-bit code space exhausted: alphabet " + std::to_string(chars.alphabet_size()) +
                        " needs " + std::to_string(pair_space) + " pair codes plus " +
                        std::to_string(reserved_top_k) + " phrase codes");
    phrase_base_ = static_cast<std::uint32_t>(65536 - reserved_top_k);

    code_by_id_.resize(interned.vocab.size());
    for (std::size_t i = 0; i < interned.vocab.size(); ++i)
        code_by_id_[i] = word_code(interned.vocab[i], chars, order);

    phrase_by_ids_.reserve(phrases_.size());
    for (const auto& p : phrases_) {
        Key4 key{};
        bool ok = true;
        for (std::size_t k = 0; k < 4; ++k) {
            auto id = interned.id_of(p.phrase[k]);
            if (!id) {
                ok = false;
                break;
            }
            key[k] = *id;
        }
        if (ok) phrase_by_ids_.emplace_back(key, p.code);
    }
    std::sort(phrase_by_ids_.begin(), phrase_by_ids_.end());
}

std::optional<std::uint16_t> ReuseCodec::phrase_code_at(std::span<const std::uint32_t> ids, std::size_t pos) const {
    if (phrase_by_ids_.empty() || pos + 4 > ids.size()) return std::nullopt;
    Key4 key{ids[pos], ids[pos + 1], ids[pos + 2], ids[pos + 3]};
    auto it = std::lower_bound(phrase_by_ids_.begin(), phrase_by_ids_.end(), key,
                               [](const auto& entry, const Key4& k) { return entry.first < k; });
    if (it == phrase_by_ids_.end() || it->first != key) return std::nullopt;
    return it->second;
}

// ---------------------------------------------------------------------------
// Boilerplate detection
// ---------------------------------------------------------------------------

std::vector<BoilerplateSpan> find_boilerplate(std::span<const Document> docs, std::size_t phrase_len,
                                              std::size_t min_count, std::size_t max_gap, int threads) {
    if (phrase_len == 0 || min_count == 0) throw UsageError("phrase_len and min_count must be positive");
    const InternedCorpus interned = intern_corpus(docs, threads);
    const std::uint64_t drop = pow_base(phrase_len);

    auto doc_window_count = [&](std::size_t i) -> std::size_t {
        const std::size_t len = interned.docs[i].size();
        return len >= phrase_len ? len - phrase_len + 1 : 0;
    };

    // Pass 1: every window's rolling hash, then sort + run-length count.
    std::size_t total_windows = 0;
    for (std::size_t i = 0; i < docs.size(); ++i) total_windows += doc_window_count(i);
    std::vector<std::uint64_t> hashes;
    hashes.reserve(total_windows);
    std::vector<std::size_t> doc_offset(docs.size(), 0);
    for (std::size_t i = 0; i < docs.size(); ++i) {
        doc_offset[i] = hashes.size();
        hashes.resize(hashes.size() + doc_window_count(i));
    }
    parallel_for(docs.size(), threads, [&](std::size_t i) {
        const auto& ids = interned.docs[i];
        if (ids.size() < phrase_len) return;
        std::uint64_t h = 0;
        for (std::size_t k = 0; k < phrase_len; ++k) h = h * kHashBase + (ids[k] + 1);
        std::uint64_t* out = hashes.data() + doc_offset[i];
        out[0] = h;
        for (std::size_t p = 1; p + phrase_len <= ids.size(); ++p) {
            h = h * kHashBase + (ids[p + phrase_len - 1] + 1) - (ids[p - 1] + 1) * drop;
            out[p] = h;
        }
    });

    std::vector<std::uint64_t> sorted = hashes;
    std::sort(sorted.begin(), sorted.end());
    std::vector<std::uint64_t> uniq_hash;  // hashes whose raw count reaches the threshold
    for (std::size_t i = 0; i < sorted.size();) {
        std::size_t j = i;
        while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
        if (j - i >= min_count) uniq_hash.push_back(sorted[i]);
        i = j;
    }
    sorted.clear();
    sorted.shrink_to_fit();

    auto hash_qualifies = [&](std::uint64_t h) {
        auto it = std::lower_bound(uniq_hash.begin(), uniq_hash.end(), h);
        return it != uniq_hash.end() && *it == h;
    };

    // Pass 2: candidate positions, verified by exact content so hash
    // collisions can never merge two distinct phrases past the threshold.
    struct Candidate {
        std::uint64_t hash;
        std::uint32_t doc;
        std::uint32_t pos;
    };
    std::vector<Candidate> candidates;
    for (std::size_t i = 0; i < docs.size(); ++i) {
        const std::size_t n = doc_window_count(i);
        for (std::size_t p = 0; p < n; ++p) {
            const std::uint64_t h = hashes[doc_offset[i] + p];
            if (hash_qualifies(h))
                candidates.push_back({h, static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(p)});
        }
    }
    hashes.clear();
    hashes.shrink_to_fit();

    std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
        if (a.hash != b.hash) return a.hash < b.hash;
        if (a.doc != b.doc) return a.doc < b.doc;
        return a.pos < b.pos;
    });

    auto window_ids = [&](const Candidate& c) {
        return std::span<const std::uint32_t>(interned.docs[c.doc].data() + c.pos, phrase_len);
    };
    auto window_less = [&](const Candidate& a, const Candidate& b) {
        const auto wa = window_ids(a), wb = window_ids(b);
        return std::lexicographical_compare(wa.begin(), wa.end(), wb.begin(), wb.end());
    };
    auto window_eq = [&](const Candidate& a, const Candidate& b) {
        return std::equal(window_ids(a).begin(), window_ids(a).end(), window_ids(b).begin());
    };

    std::vector<std::pair<std::uint32_t, std::uint32_t>> qualifying;  // (doc, pos)
    for (std::size_t i = 0; i < candidates.size();) {
        std::size_t j = i;
        while (j < candidates.size() && candidates[j].hash == candidates[i].hash) ++j;
        std::sort(candidates.begin() + i, candidates.begin() + j, [&](const Candidate& a, const Candidate& b) {
            if (!window_eq(a, b)) return window_less(a, b);
            if (a.doc != b.doc) return a.doc < b.doc;
            return a.pos < b.pos;
        });
        std::size_t gi = i;
        while (gi < j) {
            std::size_t gj = gi;
            while (gj < j && window_eq(candidates[gj], candidates[gi])) ++gj;
            if (gj - gi >= min_count)
                for (std::size_t k = gi; k < gj; ++k) qualifying.emplace_back(candidates[k].doc, candidates[k].pos);
            gi = gj;
        }
        i = j;
    }
    std::sort(qualifying.begin(), qualifying.end());

    // Conflate qualifying occurrences per document.
    std::vector<BoilerplateSpan> spans;
    for (std::size_t i = 0; i < qualifying.size();) {
        const std::uint32_t doc = qualifying[i].first;
        std::uint32_t start = qualifying[i].second;
        std::uint32_t end = start + static_cast<std::uint32_t>(phrase_len);
        ++i;
        while (i < qualifying.size() && qualifying[i].first == doc) {
            const std::uint32_t s = qualifying[i].second;
            if (s <= end + max_gap) {
                end = std::max(end, s + static_cast<std::uint32_t>(phrase_len));
                ++i;
            } else {
                spans.push_back({doc, start, end});
                start = s;
                end = s + static_cast<std::uint32_t>(phrase_len);
                ++i;
            }
        }
        spans.push_back({doc, start, end});
    }
    return spans;
}

// ---------------------------------------------------------------------------
// Frequent phrase selection
// ---------------------------------------------------------------------------

std::vector<PhraseCode> find_frequent_phrases(std::span<const Document> docs,
                                              std::span<const BoilerplateSpan> boilerplate, std::size_t n,
                                              std::size_t top_k, std::uint64_t min_phrase_count, int threads) {
    if (n != 4) throw UsageError("frequent phrase length must be 4");
    if (top_k == 0) return {};
    const InternedCorpus interned = intern_corpus(docs, threads);
    const auto by_doc = rows_by_doc(boilerplate, docs.size());

    std::vector<Key4> instances;
    for (std::size_t i = 0; i < docs.size(); ++i) {
        const auto& ids = interned.docs[i];
        for (auto [b, e] : free_segments(static_cast<std::uint32_t>(ids.size()), by_doc[i])) {
            if (e - b < n) continue;
            for (std::uint32_t p = b; p + n <= e; ++p)
                instances.push_back({ids[p], ids[p + 1], ids[p + 2], ids[p + 3]});
        }
    }
    std::sort(instances.begin(), instances.end());

    struct Cand {
        std::uint64_t count;
        Key4 key;
    };
    std::vector<Cand> cands;
    for (std::size_t i = 0; i < instances.size();) {
        std::size_t j = i;
        while (j < instances.size() && instances[j] == instances[i]) ++j;
        if (j - i >= min_phrase_count) cands.push_back({j - i, instances[i]});
        i = j;
    }
    instances.clear();
    instances.shrink_to_fit();

    auto better = [](const Cand& a, const Cand& b) {
        if (a.count != b.count) return a.count > b.count;
        return a.key < b.key;
    };
    if (cands.size() > top_k) {
        std::nth_element(cands.begin(), cands.begin() + top_k, cands.end(), better);
        cands.resize(top_k);
    }
    std::sort(cands.begin(), cands.end(), better);

    const std::uint16_t base = static_cast<std::uint16_t>(65536 - top_k);
    std::vector<PhraseCode> out;
    out.reserve(cands.size());
    for (std::size_t r = 0; r < cands.size(); ++r) {
        PhraseCode pc;
        for (std::size_t k = 0; k < 4; ++k) pc.phrase[k] = interned.vocab[cands[r].key[k]];
        pc.code = static_cast<std::uint16_t>(base + r);
        pc.count = cands[r].count;
        out.push_back(std::move(pc));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Unit documents and skipgrams
// ---------------------------------------------------------------------------

UnitDoc build_unit_doc(std::span<const std::uint32_t> token_ids, const ReuseCodec& codec,
                       std::span<const BoilerplateSpan> doc_spans) {
    UnitDoc out;
    out.codes.reserve(token_ids.size());
    out.token_start.reserve(token_ids.size());
    out.token_len.reserve(token_ids.size());
    for (auto [b, e] : free_segments(static_cast<std::uint32_t>(token_ids.size()), doc_spans)) {
        const std::uint32_t seg_begin = static_cast<std::uint32_t>(out.codes.size());
        std::uint32_t p = b;
        while (p < e) {
            if (p + 4 <= e) {
                if (auto pc = codec.phrase_code_at(token_ids, p)) {
                    out.codes.push_back(*pc);
                    out.token_start.push_back(p);
                    out.token_len.push_back(4);
                    p += 4;
                    continue;
                }
            }
            out.codes.push_back(codec.code_for_id(token_ids[p]));
            out.token_start.push_back(p);
            out.token_len.push_back(1);
            ++p;
        }
        out.segments.emplace_back(seg_begin, static_cast<std::uint32_t>(out.codes.size()));
    }
    return out;
}

std::vector<SkipgramRecord> compute_skipgrams(const UnitDoc& doc, std::uint32_t doc_index) {
    std::vector<SkipgramRecord> out;
    for (auto [b, e] : doc.segments) {
        if (e - b < 5) continue;
        out.reserve(out.size() + static_cast<std::size_t>(e - b - 4) * 5);
        for (std::uint32_t p = b; p + 5 <= e; ++p) {
            for (int skip = 0; skip < 5; ++skip) {
                std::uint64_t h = 0;
                std::uint8_t mask = 0;
                for (int o = 0; o < 5; ++o) {
                    if (o == skip) continue;
                    h = (h << 16) | doc.codes[p + o];
                    mask |= static_cast<std::uint8_t>(1u << o);
                }
                out.push_back({h, doc_index, p, mask});
            }
        }
    }
    return out;
}

SkipgramIndex SkipgramIndex::build(std::span<const UnitDoc> unit_docs, int threads) {
    SkipgramIndex idx;
    idx.doc_count_ = unit_docs.size();

    std::vector<std::size_t> counts(unit_docs.size(), 0);
    parallel_for(unit_docs.size(), threads, [&](std::size_t i) {
        std::size_t c = 0;
        for (auto [b, e] : unit_docs[i].segments)
            if (e - b >= 5) c += static_cast<std::size_t>(e - b - 4) * 5;
        counts[i] = c;
    });
    std::vector<std::size_t> offsets(unit_docs.size() + 1, 0);
    for (std::size_t i = 0; i < unit_docs.size(); ++i) offsets[i + 1] = offsets[i] + counts[i];

    idx.postings_.resize(offsets.back());
    parallel_for(unit_docs.size(), threads, [&](std::size_t i) {
        const auto records = compute_skipgrams(unit_docs[i], static_cast<std::uint32_t>(i));
        Posting* out = idx.postings_.data() + offsets[i];
        for (std::size_t k = 0; k < records.size(); ++k) {
            out[k].hash = records[k].hash;
            out[k].doc = records[k].doc;
            out[k].pos_mask = (records[k].base_pos << 5) | records[k].subset_mask;
        }
    });

    std::sort(idx.postings_.begin(), idx.postings_.end(), [](const Posting& a, const Posting& b) {
        if (a.hash != b.hash) return a.hash < b.hash;
        if (a.doc != b.doc) return a.doc < b.doc;
        return a.pos_mask < b.pos_mask;
    });
    return idx;
}

namespace {
constexpr char kIndexMagic[4] = {'D', 'S', 'K', 'P'};
constexpr std::uint32_t kIndexVersion = 1;
}  // namespace

void SkipgramIndex::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write index file: " + path.string());
    out.write(kIndexMagic, 4);
    const std::uint32_t ver = kIndexVersion;
    const std::uint64_t docs = doc_count_, n = postings_.size();
    out.write(reinterpret_cast<const char*>(&ver), 4);
    out.write(reinterpret_cast<const char*>(&docs), 8);
    out.write(reinterpret_cast<const char*>(&n), 8);
    for (const auto& p : postings_) {
        out.write(reinterpret_cast<const char*>(&p.hash), 8);
        out.write(reinterpret_cast<const char*>(&p.doc), 4);
        out.write(reinterpret_cast<const char*>(&p.pos_mask), 4);
    }
    if (!out) throw DataError("write failed: " + path.string());
}

SkipgramIndex SkipgramIndex::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open index file: " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kIndexMagic, 4) != 0) throw DataError("not an index file: " + path.string());
    std::uint32_t ver = 0;
    in.read(reinterpret_cast<char*>(&ver), 4);
    if (ver != kIndexVersion) throw DataError("unsupported index version in " + path.string());
    std::uint64_t docs = 0, n = 0;
    in.read(reinterpret_cast<char*>(&docs), 8);
    in.read(reinterpret_cast<char*>(&n), 8);
    SkipgramIndex idx;
    idx.doc_count_ = docs;
    idx.postings_.resize(n);
    for (auto& p : idx.postings_) {
        in.read(reinterpret_cast<char*>(&p.hash), 8);
        in.read(reinterpret_cast<char*>(&p.doc), 4);
        in.read(reinterpret_cast<char*>(&p.pos_mask), 4);
    }
    if (!in) throw DataError("index file truncated: " + path.string());
    return idx;
}

// ---------------------------------------------------------------------------
// Collision chaining
// ---------------------------------------------------------------------------

namespace {

struct Collision {
    std::uint32_t p;  // base window start, unit space
    std::uint32_t q;  // target window start, unit space
};

struct UnionFind {
    std::vector<std::uint32_t> parent;
    explicit UnionFind(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0u); }
    std::uint32_t find(std::uint32_t x) {
        while (parent[x] != x) {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        return x;
    }
    void unite(std::uint32_t a, std::uint32_t b) {
        a = find(a);
        b = find(b);
        if (a != b) parent[std::max(a, b)] = std::min(a, b);
    }
};

/// Turns the collision set of one ordered document pair into matches.
std::vector<ReuseMatch> chain_collisions(std::vector<Collision> colls, std::uint32_t base_doc,
                                         std::uint32_t target_doc, const UnitDoc& base, const UnitDoc& target,
                                         const ReuseParams& params) {
    std::vector<ReuseMatch> matches;
    if (colls.empty()) return matches;

    std::sort(colls.begin(), colls.end(), [](const Collision& a, const Collision& b) {
        if (a.p != b.p) return a.p < b.p;
        return a.q < b.q;
    });
    colls.erase(std::unique(colls.begin(), colls.end(),
                            [](const Collision& a, const Collision& b) { return a.p == b.p && a.q == b.q; }),
                colls.end());

    const std::int64_t max_skip = static_cast<std::int64_t>(params.max_skip);
    auto diag = [](const Collision& c) { return static_cast<std::int64_t>(c.p) - static_cast<std::int64_t>(c.q); };

    // Cluster collisions that lie on near-diagonals: windows within
    // max_skip of each other whose diagonal keys differ by at most max_skip.
    UnionFind uf(colls.size());
    for (std::size_t i = 1; i < colls.size(); ++i) {
        for (std::size_t j = i; j-- > 0;) {
            if (static_cast<std::int64_t>(colls[i].p) - static_cast<std::int64_t>(colls[j].p) > 5 + max_skip) break;
            if (std::llabs(diag(colls[i]) - diag(colls[j])) <= max_skip)
                uf.unite(static_cast<std::uint32_t>(j), static_cast<std::uint32_t>(i));
        }
    }

    std::vector<std::uint32_t> order(colls.size());
    std::iota(order.begin(), order.end(), 0u);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::uint32_t a, std::uint32_t b) { return uf.find(a) < uf.find(b); });

    // Per cluster: chains of aligned identical positions, strictly
    // increasing on both sides with at most max_skip non-matching positions
    // between consecutive cells. Best chains are extracted greedily until
    // none reaches min_words.
    std::vector<std::pair<std::uint32_t, std::uint32_t>> aligned;  // (base unit, target unit)
    std::vector<std::uint32_t> score, parent;
    for (std::size_t ci = 0; ci < order.size();) {
        std::size_t cj = ci;
        const std::uint32_t root = uf.find(order[ci]);
        while (cj < order.size() && uf.find(order[cj]) == root) ++cj;

        // Aligned identical unit positions attested by the cluster.
        aligned.clear();
        for (std::size_t k = ci; k < cj; ++k) {
            const Collision& c = colls[order[k]];
            for (std::uint32_t o = 0; o < 5; ++o)
                if (base.codes[c.p + o] == target.codes[c.q + o]) aligned.emplace_back(c.p + o, c.q + o);
        }
        std::sort(aligned.begin(), aligned.end());
        aligned.erase(std::unique(aligned.begin(), aligned.end()), aligned.end());
        ci = cj;

        const std::uint32_t reach = static_cast<std::uint32_t>(max_skip) + 1;
        while (!aligned.empty()) {
            const std::size_t n = aligned.size();
            score.assign(n, 0);
            parent.assign(n, std::numeric_limits<std::uint32_t>::max());
            std::size_t best_end = 0;
            for (std::size_t i = 0; i < n; ++i) {
                const auto [bp, tq] = aligned[i];
                score[i] = base.token_len[bp];
                for (std::size_t j = i; j-- > 0;) {
                    const auto [pbp, ptq] = aligned[j];
                    if (bp - pbp > reach) break;  // sorted by bp
                    if (pbp == bp || ptq >= tq || tq - ptq > reach) continue;
                    if (score[j] + base.token_len[bp] > score[i]) {
                        score[i] = score[j] + base.token_len[bp];
                        parent[i] = static_cast<std::uint32_t>(j);
                    }
                }
                if (score[i] > score[best_end]) best_end = i;
            }
            if (score[best_end] < params.min_words) break;

            std::size_t head = best_end;
            while (parent[head] != std::numeric_limits<std::uint32_t>::max()) head = parent[head];
            const auto [first_bp, first_q] = aligned[head];
            const auto [last_bp, last_q] = aligned[best_end];

            ReuseMatch m;
            m.base_doc = base_doc;
            m.target_doc = target_doc;
            m.base_start = base.token_start[first_bp];
            m.base_end = base.token_start[last_bp] + base.token_len[last_bp];
            m.target_start = target.token_start[first_q];
            m.target_end = target.token_start[last_q] + target.token_len[last_q];
            m.matched_words = score[best_end];
            matches.push_back(m);

            // Remove cells the match consumed so leftover chains are disjoint.
            std::vector<std::pair<std::uint32_t, std::uint32_t>> rest;
            rest.reserve(aligned.size());
            for (const auto& cell : aligned) {
                const bool in_base = cell.first >= first_bp && cell.first <= last_bp;
                const bool in_target = cell.second >= first_q && cell.second <= last_q;
                if (!in_base && !in_target) rest.push_back(cell);
            }
            aligned.swap(rest);
        }
    }

    std::sort(matches.begin(), matches.end(), [](const ReuseMatch& a, const ReuseMatch& b) {
        return std::tie(a.base_start, a.base_end, a.target_start, a.target_end) <
               std::tie(b.base_start, b.base_end, b.target_start, b.target_end);
    });
    matches.erase(std::unique(matches.begin(), matches.end(),
                              [](const ReuseMatch& a, const ReuseMatch& b) {
                                  return a.base_start == b.base_start && a.base_end == b.base_end &&
                                         a.target_start == b.target_start && a.target_end == b.target_end;
                              }),
                  matches.end());
    return matches;
}

}  // namespace

std::vector<ReuseMatch> match_documents(std::uint32_t base_doc, std::uint32_t target_doc, const SkipgramIndex& index,
                                        std::span<const UnitDoc> unit_docs, const ReuseParams& params) {
    if (base_doc == target_doc) throw UsageError("match_documents: base and target must differ");
    std::vector<Collision> colls;
    const auto postings = index.postings();
    std::size_t i = 0;
    while (i < postings.size()) {
        std::size_t j = i;
        while (j < postings.size() && postings[j].hash == postings[i].hash) ++j;
        std::uint32_t prev_b = std::numeric_limits<std::uint32_t>::max();
        for (std::size_t a = i; a < j; ++a) {
            if (postings[a].doc != base_doc) continue;
            if (postings[a].pos() == prev_b) continue;
            prev_b = postings[a].pos();
            std::uint32_t prev_t = std::numeric_limits<std::uint32_t>::max();
            for (std::size_t b = i; b < j; ++b) {
                if (postings[b].doc != target_doc) continue;
                if (postings[b].pos() == prev_t) continue;
                prev_t = postings[b].pos();
                colls.push_back({prev_b, prev_t});
            }
        }
        i = j;
    }
    return chain_collisions(std::move(colls), base_doc, target_doc, unit_docs[base_doc], unit_docs[target_doc],
                            params);
}

std::vector<ReuseMatch> find_all_matches(const SkipgramIndex& index, std::span<const UnitDoc> unit_docs,
                                         const ReuseParams& params) {
    const auto postings = index.postings();

    // Collision lists per ordered (smaller index, larger index) pair.
    std::map<std::pair<std::uint32_t, std::uint32_t>, std::vector<Collision>> buckets;
    std::vector<std::pair<std::uint32_t, std::uint32_t>> doc_pos;  // distinct (doc, pos) in one group
    std::size_t i = 0;
    while (i < postings.size()) {
        std::size_t j = i;
        while (j < postings.size() && postings[j].hash == postings[i].hash) ++j;
        if (j - i >= 2 && postings[i].doc != postings[j - 1].doc) {
            doc_pos.clear();
            for (std::size_t k = i; k < j; ++k) {
                const std::pair<std::uint32_t, std::uint32_t> dp{postings[k].doc, postings[k].pos()};
                if (doc_pos.empty() || doc_pos.back() != dp) doc_pos.push_back(dp);
            }
            if (params.hash_group_cap == 0 || doc_pos.size() <= params.hash_group_cap) {
                for (std::size_t a = 0; a < doc_pos.size(); ++a)
                    for (std::size_t b = a + 1; b < doc_pos.size(); ++b) {
                        if (doc_pos[a].first == doc_pos[b].first) continue;
                        buckets[{doc_pos[a].first, doc_pos[b].first}].push_back(
                            {doc_pos[a].second, doc_pos[b].second});
                    }
            }
        }
        i = j;
    }

    std::vector<std::pair<std::pair<std::uint32_t, std::uint32_t>, std::vector<Collision>>> pairs;
    pairs.reserve(buckets.size());
    for (auto& [key, colls] : buckets) pairs.emplace_back(key, std::move(colls));
    buckets.clear();

    std::vector<std::vector<ReuseMatch>> results(pairs.size());
    parallel_for(pairs.size(), params.threads, [&](std::size_t k) {
        const auto [a, b] = pairs[k].first;
        results[k] = chain_collisions(std::move(pairs[k].second), a, b, unit_docs[a], unit_docs[b], params);
    });

    std::vector<ReuseMatch> all;
    for (auto& r : results) all.insert(all.end(), r.begin(), r.end());
    std::sort(all.begin(), all.end(), [](const ReuseMatch& a, const ReuseMatch& b) {
        return std::tie(a.base_doc, a.target_doc, a.base_start, a.base_end, a.target_start, a.target_end) <
               std::tie(b.base_doc, b.target_doc, b.base_start, b.base_end, b.target_start, b.target_end);
    });
    return all;
}

// ---------------------------------------------------------------------------
// Filtering, accounting, hollowing
// ---------------------------------------------------------------------------

std::vector<ReuseMatch> filter_by_elapsed_years(std::vector<ReuseMatch> matches, std::span<const Document> docs,
                                                int min_gap) {
    std::vector<ReuseMatch> kept;
    kept.reserve(matches.size());
    for (ReuseMatch m : matches) {
        int by = docs[m.base_doc].death_year;
        int ty = docs[m.target_doc].death_year;
        if (by == ty) continue;  // duplicate texts with the same date
        if (by > ty) {
            std::swap(m.base_doc, m.target_doc);
            std::swap(m.base_start, m.target_start);
            std::swap(m.base_end, m.target_end);
            std::swap(by, ty);
        }
        if (ty - by >= min_gap) kept.push_back(m);
    }
    std::sort(kept.begin(), kept.end(), [](const ReuseMatch& a, const ReuseMatch& b) {
        return std::tie(a.base_doc, a.target_doc, a.base_start, a.base_end, a.target_start, a.target_end) <
               std::tie(b.base_doc, b.target_doc, b.base_start, b.base_end, b.target_start, b.target_end);
    });
    return kept;
}

namespace {

/// Per-document deletion masks for boilerplate (minus earliest occurrences)
/// plus later-side match spans.
std::vector<std::vector<char>> deletion_masks(std::span<const Document> docs,
                                              std::span<const BoilerplateSpan> boilerplate,
                                              std::span<const ReuseMatch> matches, bool keep_earliest_boiler) {
    std::vector<std::vector<char>> del(docs.size());
    for (std::size_t i = 0; i < docs.size(); ++i) del[i].assign(docs[i].tokens.size(), 0);

    std::vector<char> spared(boilerplate.size(), 0);
    if (keep_earliest_boiler) {
        // Earliest occurrence per identical span text is kept.
        std::map<std::string, std::size_t> earliest;
        auto span_text = [&](const BoilerplateSpan& s) {
            std::string key;
            for (std::uint32_t t = s.start; t < s.end; ++t) {
                key += docs[s.doc].tokens[t];
                key.push_back('\x1f');
            }
            return key;
        };
        auto earlier = [&](const BoilerplateSpan& a, const BoilerplateSpan& b) {
            const auto& da = docs[a.doc];
            const auto& db = docs[b.doc];
            return std::tie(da.death_year, da.doc_id, a.start) < std::tie(db.death_year, db.doc_id, b.start);
        };
        for (std::size_t i = 0; i < boilerplate.size(); ++i) {
            const std::string key = span_text(boilerplate[i]);
            auto it = earliest.find(key);
            if (it == earliest.end())
                earliest.emplace(key, i);
            else if (earlier(boilerplate[i], boilerplate[it->second]))
                it->second = i;
        }
        for (const auto& [key, idx] : earliest) spared[idx] = 1;
    }

    for (std::size_t i = 0; i < boilerplate.size(); ++i) {
        if (spared[i]) continue;
        const auto& s = boilerplate[i];
        for (std::uint32_t t = s.start; t < s.end && t < del[s.doc].size(); ++t) del[s.doc][t] = 1;
    }
    for (const auto& m : matches) {
        std::uint32_t later = m.target_doc;
        std::uint32_t start = m.target_start, end = m.target_end;
        if (docs[m.base_doc].death_year > docs[m.target_doc].death_year) {
            later = m.base_doc;
            start = m.base_start;
            end = m.base_end;
        }
        for (std::uint32_t t = start; t < end && t < del[later].size(); ++t) del[later][t] = 1;
    }
    return del;
}

}  // namespace

std::uint64_t count_reused_words(std::span<const Document> docs, std::span<const BoilerplateSpan> boilerplate,
                                 std::span<const ReuseMatch> filtered_matches) {
    // Every boilerplate position counts as reused, so no sparing here.
    const auto del = deletion_masks(docs, boilerplate, filtered_matches, /*keep_earliest_boiler=*/false);
    std::uint64_t total = 0;
    for (const auto& mask : del)
        for (char c : mask) total += static_cast<std::uint64_t>(c);
    return total;
}

std::vector<Document> hollow(std::span<const Document> docs, std::span<const BoilerplateSpan> boilerplate,
                             std::span<const ReuseMatch> filtered_matches) {
    const auto del = deletion_masks(docs, boilerplate, filtered_matches, /*keep_earliest_boiler=*/true);
    std::vector<Document> out;
    out.reserve(docs.size());
    for (std::size_t i = 0; i < docs.size(); ++i) {
        Document d;
        d.doc_id = docs[i].doc_id;
        d.title = docs[i].title;
        d.author = docs[i].author;
        d.source = docs[i].source;
        d.death_year = docs[i].death_year;
        d.tokens.reserve(docs[i].tokens.size());
        const bool lemmas = docs[i].has_lemmas();
        if (lemmas) d.lemmas.reserve(docs[i].lemmas.size());
        for (std::size_t t = 0; t < docs[i].tokens.size(); ++t) {
            if (del[i][t]) continue;
            d.tokens.push_back(docs[i].tokens[t]);
            if (lemmas) d.lemmas.push_back(docs[i].lemmas[t]);
        }
        out.push_back(std::move(d));
    }
    return out;
}

MatchLengthStats match_length_stats(std::span<const ReuseMatch> matches) {
    MatchLengthStats s;
    s.count = matches.size();
    if (matches.empty()) return s;
    double sum = 0.0, sq = 0.0;
    for (const auto& m : matches) {
        const double len = static_cast<double>(m.target_end - m.target_start);
        sum += len;
        sq += len * len;
    }
    s.mean = sum / static_cast<double>(matches.size());
    const double var = sq / static_cast<double>(matches.size()) - s.mean * s.mean;
    s.stdev = var > 0 ? std::sqrt(var) : 0.0;
    return s;
}

ReuseResult run_reuse(std::span<const Document> docs, const ReuseParams& params) {
    ReuseResult r;
    r.boilerplate = find_boilerplate(docs, params.phrase_len, params.boiler_min_count, params.max_gap,
                                     params.threads);
    r.phrases = find_frequent_phrases(docs, r.boilerplate, 4, params.top_k, params.min_phrase_count, params.threads);

    const InternedCorpus interned = intern_corpus(docs, params.threads);
    const CharFrequencyTable chars = build_char_table(docs, params.threads);
    const ReuseCodec codec(interned, chars, r.phrases, params.top_k, params.letter_order);

    const auto by_doc = rows_by_doc(std::span<const BoilerplateSpan>(r.boilerplate), docs.size());
    std::vector<UnitDoc> unit_docs(docs.size());
    parallel_for(docs.size(), params.threads,
                 [&](std::size_t i) { unit_docs[i] = build_unit_doc(interned.docs[i], codec, by_doc[i]); });

    const SkipgramIndex index = SkipgramIndex::build(unit_docs, params.threads);
    r.raw_matches = find_all_matches(index, unit_docs, params);
    r.matches = filter_by_elapsed_years(r.raw_matches, docs, params.min_gap_years);
    return r;
}

// ---------------------------------------------------------------------------
// JSONL serialization
// ---------------------------------------------------------------------------

namespace {

using nlohmann::json;

std::unordered_map<std::string, std::uint32_t> doc_index_map(std::span<const Document> docs) {
    std::unordered_map<std::string, std::uint32_t> m;
    m.reserve(docs.size() * 2);
    for (std::uint32_t i = 0; i < docs.size(); ++i) m.emplace(docs[i].doc_id, i);
    return m;
}

}  // namespace

void save_matches_jsonl(const std::filesystem::path& path, std::span<const ReuseMatch> matches,
                        std::span<const Document> docs) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write matches file: " + path.string());
    for (const auto& m : matches) {
        json j;
        j["base_doc"] = docs[m.base_doc].doc_id;
        j["target_doc"] = docs[m.target_doc].doc_id;
        j["base_span"] = {m.base_start, m.base_end};
        j["target_span"] = {m.target_start, m.target_end};
        j["matched_words"] = m.matched_words;
        out << j.dump() << '\n';
    }
    if (!out) throw DataError("write failed: " + path.string());
}

std::vector<ReuseMatch> load_matches_jsonl(const std::filesystem::path& path, std::span<const Document> docs) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open matches file: " + path.string());
    const auto ids = doc_index_map(docs);
    std::vector<ReuseMatch> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": invalid JSON (" + e.what() + ")");
        }
        ReuseMatch m;
        const std::string base_id = j.at("base_doc").get<std::string>();
        const std::string target_id = j.at("target_doc").get<std::string>();
        auto bi = ids.find(base_id);
        auto ti = ids.find(target_id);
        if (bi == ids.end()) throw DataError("matches file references unknown doc_id: " + base_id);
        if (ti == ids.end()) throw DataError("matches file references unknown doc_id: " + target_id);
        m.base_doc = bi->second;
        m.target_doc = ti->second;
        m.base_start = j.at("base_span").at(0).get<std::uint32_t>();
        m.base_end = j.at("base_span").at(1).get<std::uint32_t>();
        m.target_start = j.at("target_span").at(0).get<std::uint32_t>();
        m.target_end = j.at("target_span").at(1).get<std::uint32_t>();
        m.matched_words = j.at("matched_words").get<std::uint32_t>();
        out.push_back(m);
    }
    return out;
}

void save_boilerplate_jsonl(const std::filesystem::path& path, std::span<const BoilerplateSpan> spans,
                            std::span<const Document> docs) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write boilerplate file: " + path.string());
    for (const auto& s : spans) {
        json j;
        j["doc_id"] = docs[s.doc].doc_id;
        j["start"] = s.start;
        j["end"] = s.end;
        out << j.dump() << '\n';
    }
    if (!out) throw DataError("write failed: " + path.string());
}

std::vector<BoilerplateSpan> load_boilerplate_jsonl(const std::filesystem::path& path,
                                                    std::span<const Document> docs) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open boilerplate file: " + path.string());
    const auto ids = doc_index_map(docs);
    std::vector<BoilerplateSpan> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": invalid JSON (" + e.what() + ")");
        }
        const std::string id = j.at("doc_id").get<std::string>();
        auto it = ids.find(id);
        if (it == ids.end()) throw DataError("boilerplate file references unknown doc_id: " + id);
        out.push_back({it->second, j.at("start").get<std::uint32_t>(), j.at("end").get<std::uint32_t>()});
    }
    std::sort(out.begin(), out.end(), [](const BoilerplateSpan& a, const BoilerplateSpan& b) {
        return std::tie(a.doc, a.start, a.end) < std::tie(b.doc, b.start, b.end);
    });
    return out;
}

}  // namespace diachron
