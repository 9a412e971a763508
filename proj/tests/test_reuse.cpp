#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "diachron/errors.hpp"
#include "diachron/reuse.hpp"
#include "support/oracles.hpp"
#include "support/synthetic.hpp"

using namespace diachron;
namespace dt = diachron::testing;

namespace {

bool spans_equal(const std::vector<BoilerplateSpan>& a, const std::vector<BoilerplateSpan>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i].doc != b[i].doc || a[i].start != b[i].start || a[i].end != b[i].end) return false;
    return true;
}

/// Everything needed to run the matcher on a document set; frequent-phrase
/// conflation is off unless phrases are supplied.
struct Fixture {
    std::vector<Document> docs;
    InternedCorpus interned;
    CharFrequencyTable chars;
    std::vector<BoilerplateSpan> boiler;
    std::vector<UnitDoc> units;
    SkipgramIndex index;
    ReuseParams params;

    explicit Fixture(std::vector<Document> d, ReuseParams p = {}, std::vector<PhraseCode> phrases = {})
        : docs(std::move(d)), params(p) {
        params.top_k = phrases.empty() ? 0 : params.top_k;
        interned = intern_corpus(docs);
        chars = build_char_table(docs);
        boiler = find_boilerplate(docs, params.phrase_len, params.boiler_min_count, params.max_gap);
        const ReuseCodec codec(interned, chars, std::move(phrases), params.top_k, params.letter_order);
        units.resize(docs.size());
        std::vector<std::vector<BoilerplateSpan>> per_doc(docs.size());
        for (const auto& s : boiler) per_doc[s.doc].push_back(s);
        for (std::size_t i = 0; i < docs.size(); ++i) units[i] = build_unit_doc(interned.docs[i], codec, per_doc[i]);
        index = SkipgramIndex::build(units);
    }
};

UnitDoc slice_units(const UnitDoc& u, std::uint32_t token_lo, std::uint32_t token_hi) {
    UnitDoc out;
    for (std::size_t i = 0; i < u.units(); ++i) {
        if (u.token_start[i] >= token_lo && u.token_start[i] < token_hi) {
            out.codes.push_back(u.codes[i]);
            out.token_start.push_back(u.token_start[i]);
            out.token_len.push_back(u.token_len[i]);
        }
    }
    out.segments.emplace_back(0, static_cast<std::uint32_t>(out.codes.size()));
    return out;
}

ReuseMatch mk_match(std::uint32_t base, std::uint32_t target) {
    ReuseMatch m;
    m.base_doc = base;
    m.target_doc = target;
    m.base_start = 0;
    m.base_end = 20;
    m.target_start = 0;
    m.target_end = 20;
    m.matched_words = 20;
    return m;
}

}  // namespace

// ---------------------------------------------------------------------------
// Boilerplate
// ---------------------------------------------------------------------------

TEST_CASE("a 20-gram occurring exactly 25 times yields 25 spans") {
    Rng rng(41);
    const auto phrase = dt::make_vocab(20, rng);
    const auto docs = dt::corpus_with_repeated_phrase(phrase, 25, 60, 300, 42);
    const auto spans = find_boilerplate(docs, 20, 25, 10);
    CHECK(spans.size() == 25);
    for (const auto& s : spans) CHECK(s.end - s.start == 20);
}

TEST_CASE("24 occurrences stay below the threshold") {
    Rng rng(41);
    const auto phrase = dt::make_vocab(20, rng);
    const auto docs = dt::corpus_with_repeated_phrase(phrase, 24, 60, 300, 42);
    CHECK(find_boilerplate(docs, 20, 25, 10).empty());
}

TEST_CASE("qualifying 20-grams separated by the max gap conflate into one span") {
    Rng rng(17);
    const auto phrase_a = dt::make_vocab(20, rng);
    const auto phrase_b = dt::make_vocab(20, rng);
    Rng fill(99);
    const auto filler = dt::make_vocab(500, fill);

    // 24 documents carry each phrase separately; the 25th carries both with
    // exactly 10 tokens between them.
    std::vector<Document> docs;
    for (int i = 0; i < 24; ++i) {
        std::vector<std::string> t1(phrase_a);
        std::vector<std::string> t2(phrase_b);
        for (int k = 0; k < 30; ++k) {
            t1.push_back(filler[fill.next_below(filler.size())]);
            t2.push_back(filler[fill.next_below(filler.size())]);
        }
        docs.push_back(dt::make_doc("a" + std::to_string(i), 100 + i, std::move(t1)));
        docs.push_back(dt::make_doc("b" + std::to_string(i), 200 + i, std::move(t2)));
    }
    std::vector<std::string> both(phrase_a);
    for (int k = 0; k < 10; ++k) both.push_back(filler[fill.next_below(filler.size())]);
    both.insert(both.end(), phrase_b.begin(), phrase_b.end());
    docs.push_back(dt::make_doc("both", 300, std::move(both)));

    const auto spans = find_boilerplate(docs, 20, 25, 10);
    const auto oracle = dt::brute_boilerplate(docs, 20, 25, 10);
    CHECK(spans_equal(spans, oracle));

    // The combined document ends with one conflated span covering both.
    const std::uint32_t both_doc = static_cast<std::uint32_t>(docs.size() - 1);
    std::vector<BoilerplateSpan> in_both;
    for (const auto& s : spans)
        if (s.doc == both_doc) in_both.push_back(s);
    REQUIRE(in_both.size() == 1);
    CHECK(in_both[0].start == 0);
    CHECK(in_both[0].end == 50);
}

TEST_CASE("boilerplate equals the brute-force oracle on random planted corpora") {
    for (std::uint64_t seed = 1; seed <= 8; ++seed) {
        Rng rng(seed * 1000 + 7);
        const std::size_t n_phrases = 1 + rng.next_below(3);
        std::vector<std::vector<std::string>> phrases;
        for (std::size_t i = 0; i < n_phrases; ++i) phrases.push_back(dt::make_vocab(8, rng));

        auto docs = dt::random_corpus(10, 400, 50 + rng.next_below(200), seed);
        // Plant each phrase with an occurrence count around the threshold.
        for (const auto& ph : phrases) {
            const std::size_t occurrences = 3 + rng.next_below(6);
            for (std::size_t k = 0; k < occurrences; ++k) {
                auto& toks = docs[rng.next_below(docs.size())].tokens;
                const std::size_t at = rng.next_below(toks.size());
                toks.insert(toks.begin() + static_cast<std::ptrdiff_t>(at), ph.begin(), ph.end());
            }
        }
        const auto got = find_boilerplate(docs, 8, 4, 5);
        const auto want = dt::brute_boilerplate(docs, 8, 4, 5);
        CHECK(spans_equal(got, want));
    }
}

// ---------------------------------------------------------------------------
// Frequent phrases
// ---------------------------------------------------------------------------

TEST_CASE("a dominant 4-gram wins top_k=1") {
    Rng rng(5);
    const auto vocab = dt::make_vocab(4000, rng);
    std::vector<std::string> stream;
    const std::vector<std::string> hot{vocab[0], vocab[1], vocab[2], vocab[3]};
    std::size_t cursor = 4;
    for (int rep = 0; rep < 600; ++rep) {
        stream.insert(stream.end(), hot.begin(), hot.end());
        for (int k = 0; k < 5 && cursor < vocab.size(); ++k) stream.push_back(vocab[cursor++]);
    }
    std::vector<Document> docs{dt::make_doc("d", 100, stream)};
    const auto phrases = find_frequent_phrases(docs, {}, 4, 1);
    REQUIRE(phrases.size() == 1);
    CHECK(phrases[0].phrase == std::array<std::string, 4>{vocab[0], vocab[1], vocab[2], vocab[3]});
    CHECK(phrases[0].count == 600);
    CHECK(phrases[0].code == 65535);
}

TEST_CASE("fewer distinct 4-grams than top_k returns all") {
    std::vector<Document> docs{dt::make_doc("d", 100, {"a", "b", "c", "d", "e", "f"})};
    const auto phrases = find_frequent_phrases(docs, {}, 4, 35000);
    CHECK(phrases.size() == 3);  // abcd, bcde, cdef
    std::set<std::uint16_t> codes;
    for (const auto& p : phrases) {
        CHECK(p.code >= 65536 - 35000);
        codes.insert(p.code);
    }
    CHECK(codes.size() == phrases.size());
}

TEST_CASE("boilerplate regions are excluded from phrase counting") {
    Rng rng(13);
    const auto phrase = dt::make_vocab(8, rng);
    auto docs = dt::corpus_with_repeated_phrase(phrase, 30, 40, 400, 77);
    const auto boiler = find_boilerplate(docs, 8, 25, 10);
    REQUIRE(!boiler.empty());
    const auto phrases = find_frequent_phrases(docs, boiler, 4, 35000, 25);
    for (const auto& p : phrases)
        for (std::size_t k = 0; k + 3 < phrase.size(); ++k)
            CHECK(p.phrase != std::array<std::string, 4>{phrase[k], phrase[k + 1], phrase[k + 2], phrase[k + 3]});
}

// ---------------------------------------------------------------------------
// Word codes
// ---------------------------------------------------------------------------

TEST_CASE("word_code uses the two least frequent characters") {
    // freq: a=1 (in "ab"), b=3 ("ab" + "bb")
    std::vector<Document> docs{dt::make_doc("d", 100, {"ab", "bb"})};
    const auto table = build_char_table(docs);
    const std::uint16_t code = word_code("ab", table);
    const std::uint16_t a = table.index.at(U'a'), b = table.index.at(U'b');
    CHECK(code == a * table.alphabet_size() + b);
}

TEST_CASE("single-character tokens duplicate their character") {
    std::vector<Document> docs{dt::make_doc("d", 100, {"a", "b"})};
    const auto table = build_char_table(docs);
    const std::uint16_t a = table.index.at(U'a');
    CHECK(word_code("a", table) == a * table.alphabet_size() + a);
}

TEST_CASE("prefixes made of frequent characters do not change the code") {
    // 'w' is far more frequent than k, t, b, so ktb and wktb share a code.
    std::vector<Document> docs{dt::make_doc("d", 100, {"ktb", "wktb", "ww", "ww", "ww", "ww", "ww", "ww"})};
    const auto table = build_char_table(docs);
    CHECK(word_code("ktb", table) == word_code("wktb", table));
}

TEST_CASE("letter order flag switches between canonical and word order") {
    // freq: a=1, b=3; token "ba": canonical emits (a, b), word order (b, a).
    std::vector<Document> docs{dt::make_doc("d", 100, {"ba", "bb"})};
    const auto table = build_char_table(docs);
    const std::uint16_t a = table.index.at(U'a'), b = table.index.at(U'b');
    CHECK(word_code("ba", table, LetterOrder::canonical) == a * table.alphabet_size() + b);
    CHECK(word_code("ba", table, LetterOrder::word) == b * table.alphabet_size() + a);
}

TEST_CASE("word_code rejects characters missing from the table") {
    std::vector<Document> docs{dt::make_doc("d", 100, {"ab"})};
    const auto table = build_char_table(docs);
    CHECK_THROWS_AS(word_code("xy", table), DataError);
}

TEST_CASE("the code space partition is enforced at codec build") {
    const auto docs = dt::random_corpus(2, 100, 50, 3);
    const auto interned = intern_corpus(docs);
    const auto table = build_char_table(docs);
    CHECK_THROWS_AS(ReuseCodec(interned, table, {}, 65536), DataError);
    CHECK_NOTHROW(ReuseCodec(interned, table, {}, 35000));
}

TEST_CASE("phrase codes and pair codes never collide") {
    Rng rng(5);
    const auto vocab = dt::make_vocab(200, rng);
    std::vector<std::string> stream;
    for (int rep = 0; rep < 50; ++rep)
        for (int k = 0; k < 8; ++k) stream.push_back(vocab[static_cast<std::size_t>(k)]);
    std::vector<Document> docs{dt::make_doc("d", 100, stream)};
    const auto phrases = find_frequent_phrases(docs, {}, 4, 100, 2);
    REQUIRE(!phrases.empty());
    const auto interned = intern_corpus(docs);
    const auto table = build_char_table(docs);
    const ReuseCodec codec(interned, table, phrases, 100);
    const std::uint64_t pair_limit = static_cast<std::uint64_t>(table.alphabet_size()) * table.alphabet_size();
    for (const auto& p : codec.phrases()) CHECK(p.code >= 65536 - 100);
    for (std::uint32_t id = 0; id < interned.vocab.size(); ++id) CHECK(codec.code_for_id(id) < pair_limit);
}

// ---------------------------------------------------------------------------
// Skipgrams
// ---------------------------------------------------------------------------

TEST_CASE("skipgram counts follow 5 * (L - 4)") {
    auto make_units = [](std::size_t n) {
        std::vector<std::string> toks;
        for (std::size_t i = 0; i < n; ++i) toks.push_back("tok" + std::to_string(i));
        std::vector<Document> docs{dt::make_doc("d", 100, std::move(toks))};
        const auto interned = intern_corpus(docs);
        const auto table = build_char_table(docs);
        const ReuseCodec codec(interned, table, {}, 0);
        return build_unit_doc(interned.docs[0], codec, {});
    };
    CHECK(compute_skipgrams(make_units(5), 0).size() == 5);
    CHECK(compute_skipgrams(make_units(6), 0).size() == 10);
    CHECK(compute_skipgrams(make_units(4), 0).empty());
    CHECK(compute_skipgrams(make_units(30), 0).size() == 5 * 26);
}

TEST_CASE("skipgram masks cover the five 4-of-5 subsets and hashes concatenate codes") {
    std::vector<Document> docs{dt::make_doc("d", 100, {"ab", "cd", "ef", "gh", "ij"})};
    const auto interned = intern_corpus(docs);
    const auto table = build_char_table(docs);
    const ReuseCodec codec(interned, table, {}, 0);
    const auto units = build_unit_doc(interned.docs[0], codec, {});
    const auto records = compute_skipgrams(units, 7);
    REQUIRE(records.size() == 5);
    std::set<std::uint8_t> masks;
    for (const auto& r : records) {
        CHECK(r.doc == 7);
        CHECK(r.base_pos == 0);
        masks.insert(r.subset_mask);
    }
    CHECK(masks == std::set<std::uint8_t>{0b11110, 0b11101, 0b11011, 0b10111, 0b01111});
    for (const auto& r : records) {
        if (r.subset_mask == 0b11110) {
            const std::uint64_t expect = (static_cast<std::uint64_t>(units.codes[1]) << 48) |
                                         (static_cast<std::uint64_t>(units.codes[2]) << 32) |
                                         (static_cast<std::uint64_t>(units.codes[3]) << 16) | units.codes[4];
            CHECK(r.hash == expect);
        }
    }
}

TEST_CASE("documents fully covered by boilerplate emit no skipgrams") {
    std::vector<Document> docs{dt::make_doc("d", 100, {"a", "b", "c", "d", "e", "f", "g", "h"})};
    const auto interned = intern_corpus(docs);
    const auto table = build_char_table(docs);
    const ReuseCodec codec(interned, table, {}, 0);
    const std::vector<BoilerplateSpan> cover{{0, 0, 8}};
    const auto units = build_unit_doc(interned.docs[0], codec, cover);
    CHECK(units.units() == 0);
    CHECK(compute_skipgrams(units, 0).empty());
}

TEST_CASE("windows never cross boilerplate boundaries") {
    std::vector<std::string> toks;
    for (int i = 0; i < 20; ++i) toks.push_back("tok" + std::to_string(i));
    std::vector<Document> docs{dt::make_doc("d", 100, toks)};
    const auto interned = intern_corpus(docs);
    const auto table = build_char_table(docs);
    const ReuseCodec codec(interned, table, {}, 0);
    const std::vector<BoilerplateSpan> mid{{0, 8, 12}};  // splits into 8 + 8
    const auto units = build_unit_doc(interned.docs[0], codec, mid);
    CHECK(units.units() == 16);
    REQUIRE(units.segments.size() == 2);
    CHECK(compute_skipgrams(units, 0).size() == 2 * 5 * 4);
}

TEST_CASE("conflated phrases become single units with token length 4") {
    Rng rng(5);
    const auto vocab = dt::make_vocab(100, rng);
    std::vector<std::string> stream;
    for (int rep = 0; rep < 10; ++rep) {
        for (int k = 0; k < 4; ++k) stream.push_back(vocab[static_cast<std::size_t>(k)]);
        for (int k = 0; k < 3; ++k) stream.push_back(vocab[4 + rng.next_below(90)]);
    }
    std::vector<Document> docs{dt::make_doc("d", 100, stream)};
    const auto phrases = find_frequent_phrases(docs, {}, 4, 10, 5);
    REQUIRE(!phrases.empty());
    const auto interned = intern_corpus(docs);
    const auto table = build_char_table(docs);
    const ReuseCodec codec(interned, table, phrases, 10);
    const auto units = build_unit_doc(interned.docs[0], codec, {});
    std::size_t phrase_units = 0, token_sum = 0;
    for (std::size_t i = 0; i < units.units(); ++i) {
        token_sum += units.token_len[i];
        if (units.token_len[i] == 4) {
            ++phrase_units;
            CHECK(units.codes[i] >= codec.phrase_code_base());
        }
    }
    CHECK(phrase_units == 10);
    CHECK(token_sum == stream.size());
}

// ---------------------------------------------------------------------------
// Matching
// ---------------------------------------------------------------------------

TEST_CASE("a verbatim 20-token copy is matched") {
    Rng rng(2024);
    const auto vocab = dt::make_vocab(900, rng);
    auto tokens_of = [&](std::size_t n) {
        std::vector<std::string> t;
        for (std::size_t i = 0; i < n; ++i) t.push_back(vocab[rng.next_below(vocab.size())]);
        return t;
    };
    auto base = tokens_of(100);
    auto target = tokens_of(100);
    std::copy(base.begin() + 10, base.begin() + 30, target.begin() + 40);

    Fixture fx({dt::make_doc("base", 100, base), dt::make_doc("target", 200, target)});
    const auto matches = match_documents(0, 1, fx.index, fx.units, fx.params);
    REQUIRE(matches.size() >= 1);
    const auto& m = matches[0];
    CHECK(m.matched_words >= 16);
    CHECK(m.base_start <= 12);
    CHECK(m.base_end >= 28);
    CHECK(m.target_start <= 42);
    CHECK(m.target_end >= 58);
}

TEST_CASE("copies with one substitution every 10 tokens still match") {
    for (std::uint64_t seed = 1; seed <= 6; ++seed) {
        Rng rng(seed * 31);
        const auto vocab = dt::make_vocab(900, rng);
        auto tokens_of = [&](std::size_t n) {
            std::vector<std::string> t;
            for (std::size_t i = 0; i < n; ++i) t.push_back(vocab[rng.next_below(vocab.size())]);
            return t;
        };
        auto base = tokens_of(120);
        auto target = tokens_of(120);
        for (std::size_t i = 0; i < 40; ++i) target[30 + i] = base[20 + i];
        for (std::size_t off : {5, 15, 25, 35}) target[30 + off] = vocab[rng.next_below(vocab.size())];

        Fixture fx({dt::make_doc("base", 100, base), dt::make_doc("target", 200, target)});
        const auto matches = match_documents(0, 1, fx.index, fx.units, fx.params);
        REQUIRE(!matches.empty());
        const ReuseMatch* best = &matches[0];
        for (const auto& m : matches)
            if (m.matched_words > best->matched_words) best = &m;
        CHECK(best->matched_words >= 16);

        // Independent local-alignment oracle agrees a chain of that size
        // exists within the emitted spans.
        const auto sliced_base = slice_units(fx.units[0], best->base_start, best->base_end);
        const auto sliced_target = slice_units(fx.units[1], best->target_start, best->target_end);
        const std::uint32_t oracle = dt::best_chain_words(sliced_base, sliced_target, fx.params.max_skip);
        CHECK(oracle >= best->matched_words);
        CHECK(oracle >= 16);
    }
}

TEST_CASE("unrelated random documents never match") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        auto docs = dt::random_corpus(2, 800, 1000, seed * 7 + 1, 100, 100);
        docs[1].death_year = 300;
        Fixture fx(std::move(docs));
        CHECK(match_documents(0, 1, fx.index, fx.units, fx.params).empty());
    }
}

TEST_CASE("emitted matches are sound: a gap-respecting chain of that size exists in the spans") {
    const auto planted = dt::planted_reuse_corpus(6, 6, 400, 800, 12, 20, 60, 6, 99);
    Fixture fx(planted.docs);
    const auto matches = find_all_matches(fx.index, fx.units, fx.params);
    REQUIRE(!matches.empty());
    for (const auto& m : matches) {
        CHECK(m.matched_words >= fx.params.min_words);
        CHECK(m.base_end > m.base_start);
        CHECK(m.target_end > m.target_start);
        const auto sb = slice_units(fx.units[m.base_doc], m.base_start, m.base_end);
        const auto st = slice_units(fx.units[m.target_doc], m.target_start, m.target_end);
        const std::uint32_t oracle = dt::best_chain_words(sb, st, fx.params.max_skip);
        CHECK(oracle >= m.matched_words);
    }
}

TEST_CASE("the per-pair matcher agrees with the corpus driver") {
    const auto planted = dt::planted_reuse_corpus(4, 4, 400, 700, 8, 20, 40, 6, 4242);
    Fixture fx(planted.docs);
    const auto all = find_all_matches(fx.index, fx.units, fx.params);
    for (std::uint32_t a = 0; a < planted.docs.size(); ++a) {
        for (std::uint32_t b = a + 1; b < planted.docs.size(); ++b) {
            const auto pair_matches = match_documents(a, b, fx.index, fx.units, fx.params);
            std::vector<ReuseMatch> from_all;
            for (const auto& m : all)
                if (m.base_doc == a && m.target_doc == b) from_all.push_back(m);
            REQUIRE(pair_matches.size() == from_all.size());
            for (std::size_t i = 0; i < pair_matches.size(); ++i) {
                CHECK(pair_matches[i].base_start == from_all[i].base_start);
                CHECK(pair_matches[i].base_end == from_all[i].base_end);
                CHECK(pair_matches[i].target_start == from_all[i].target_start);
                CHECK(pair_matches[i].target_end == from_all[i].target_end);
                CHECK(pair_matches[i].matched_words == from_all[i].matched_words);
            }
        }
    }
}

TEST_CASE("find_all_matches is independent of thread count") {
    const auto planted = dt::planted_reuse_corpus(5, 5, 300, 700, 10, 20, 40, 6, 1234);
    Fixture fx(planted.docs);
    ReuseParams p1 = fx.params;
    p1.threads = 1;
    ReuseParams p4 = fx.params;
    p4.threads = 4;
    const auto m1 = find_all_matches(fx.index, fx.units, p1);
    const auto m4 = find_all_matches(fx.index, fx.units, p4);
    REQUIRE(m1.size() == m4.size());
    for (std::size_t i = 0; i < m1.size(); ++i) {
        CHECK(m1[i].base_doc == m4[i].base_doc);
        CHECK(m1[i].target_doc == m4[i].target_doc);
        CHECK(m1[i].base_start == m4[i].base_start);
        CHECK(m1[i].target_start == m4[i].target_start);
        CHECK(m1[i].matched_words == m4[i].matched_words);
    }
}

TEST_CASE("the skipgram index is independent of build thread count") {
    const auto docs = dt::random_corpus(6, 200, 300, 55);
    Fixture fx(docs);
    const auto again = SkipgramIndex::build(fx.units, 3);
    REQUIRE(fx.index.postings().size() == again.postings().size());
    for (std::size_t i = 0; i < again.postings().size(); ++i) {
        CHECK(fx.index.postings()[i].hash == again.postings()[i].hash);
        CHECK(fx.index.postings()[i].doc == again.postings()[i].doc);
        CHECK(fx.index.postings()[i].pos_mask == again.postings()[i].pos_mask);
    }
}

TEST_CASE("skipgram index round-trips through its file format") {
    const auto docs = dt::random_corpus(3, 100, 200, 66);
    Fixture fx(docs);
    const auto path = std::filesystem::temp_directory_path() / "diachron_test" / "index.bin";
    std::filesystem::create_directories(path.parent_path());
    fx.index.save(path);
    const auto loaded = SkipgramIndex::load(path);
    REQUIRE(loaded.postings().size() == fx.index.postings().size());
    CHECK(loaded.doc_count() == fx.index.doc_count());
    for (std::size_t i = 0; i < loaded.postings().size(); ++i)
        CHECK(loaded.postings()[i].hash == fx.index.postings()[i].hash);
}

// ---------------------------------------------------------------------------
// Date filter
// ---------------------------------------------------------------------------

TEST_CASE("elapsed-years filter boundary cases") {
    std::vector<Document> docs{dt::make_doc("y100", 100, {"x"}), dt::make_doc("y150", 150, {"x"}),
                               dt::make_doc("y130", 130, {"x"}), dt::make_doc("y200a", 200, {"x"}),
                               dt::make_doc("y200b", 200, {"x"})};
    CHECK(filter_by_elapsed_years({mk_match(0, 1)}, docs, 50).size() == 1);  // gap 50 kept
    CHECK(filter_by_elapsed_years({mk_match(0, 2)}, docs, 50).empty());      // gap 30 dropped
    CHECK(filter_by_elapsed_years({mk_match(3, 4)}, docs, 50).empty());      // same date dropped
    CHECK(filter_by_elapsed_years({mk_match(3, 4)}, docs, 0).empty());       // same date dropped even at 0
}

TEST_CASE("filter orients matches so base is earlier") {
    std::vector<Document> docs{dt::make_doc("late", 400, {"x"}), dt::make_doc("early", 100, {"x"})};
    ReuseMatch m = mk_match(0, 1);
    m.base_start = 5;
    m.base_end = 25;
    m.target_start = 7;
    m.target_end = 27;
    const auto kept = filter_by_elapsed_years({m}, docs, 50);
    REQUIRE(kept.size() == 1);
    CHECK(kept[0].base_doc == 1);
    CHECK(kept[0].target_doc == 0);
    CHECK(kept[0].base_start == 7);
    CHECK(kept[0].target_start == 5);
}

TEST_CASE("filter is monotone in the gap") {
    Rng rng(3);
    std::vector<Document> docs;
    for (int i = 0; i < 30; ++i)
        docs.push_back(dt::make_doc("d" + std::to_string(i), 50 + static_cast<int>(rng.next_below(500)), {"x"}));
    std::vector<ReuseMatch> matches;
    for (int i = 0; i < 100; ++i)
        matches.push_back(
            mk_match(static_cast<std::uint32_t>(rng.next_below(30)), static_cast<std::uint32_t>(rng.next_below(30))));
    std::size_t prev = matches.size() + 1;
    for (int gap : {0, 25, 50, 100, 200, 1000}) {
        const std::size_t n = filter_by_elapsed_years(matches, docs, gap).size();
        CHECK(n <= prev);
        prev = n;
    }
}

TEST_CASE("filter equals the set-comprehension oracle") {
    Rng rng(8);
    std::vector<Document> docs;
    for (int i = 0; i < 40; ++i)
        docs.push_back(dt::make_doc("d" + std::to_string(i), 50 + static_cast<int>(rng.next_below(400)), {"x"}));
    std::vector<ReuseMatch> matches;
    for (int i = 0; i < 200; ++i) {
        const auto a = static_cast<std::uint32_t>(rng.next_below(40));
        const auto b = static_cast<std::uint32_t>(rng.next_below(40));
        if (a != b) matches.push_back(mk_match(a, b));
    }
    const auto kept = filter_by_elapsed_years(matches, docs, 50);
    std::size_t expected = 0;
    for (const auto& m : matches) {
        const int lo = std::min(docs[m.base_doc].death_year, docs[m.target_doc].death_year);
        const int hi = std::max(docs[m.base_doc].death_year, docs[m.target_doc].death_year);
        if (hi - lo >= 50) ++expected;
    }
    CHECK(kept.size() == expected);
    for (const auto& m : kept) CHECK(docs[m.target_doc].death_year - docs[m.base_doc].death_year >= 50);
}

// ---------------------------------------------------------------------------
// Reused-word accounting and hollowing
// ---------------------------------------------------------------------------

TEST_CASE("count_reused_words on a single boilerplate span") {
    std::vector<Document> docs{dt::make_doc("d", 100, std::vector<std::string>(50, "x"))};
    const std::vector<BoilerplateSpan> spans{{0, 10, 30}};
    CHECK(count_reused_words(docs, spans, {}) == 20);
}

TEST_CASE("count_reused_words uses union semantics on overlaps") {
    std::vector<Document> docs{dt::make_doc("a", 100, std::vector<std::string>(50, "x")),
                               dt::make_doc("b", 200, std::vector<std::string>(50, "x"))};
    const std::vector<BoilerplateSpan> spans{{1, 10, 30}};
    ReuseMatch m = mk_match(0, 1);
    m.target_start = 25;
    m.target_end = 40;  // overlaps [10,30) by 5
    const std::vector<ReuseMatch> one{m};
    CHECK(count_reused_words(docs, spans, one) == 30);  // 20 + 15 - 5
}

TEST_CASE("hollow removes the later copy and keeps the earliest") {
    Rng rng(91);
    const auto vocab = dt::make_vocab(600, rng);
    auto tokens_of = [&](std::size_t n) {
        std::vector<std::string> t;
        for (std::size_t i = 0; i < n; ++i) t.push_back(vocab[rng.next_below(vocab.size())]);
        return t;
    };
    auto a = tokens_of(80);
    auto b = tokens_of(80);
    std::copy(a.begin() + 10, a.begin() + 40, b.begin() + 20);
    std::vector<Document> docs{dt::make_doc("a", 100, a), dt::make_doc("b", 200, b)};

    Fixture fx(docs);
    auto matches = filter_by_elapsed_years(find_all_matches(fx.index, fx.units, fx.params), docs, 50);
    REQUIRE(!matches.empty());
    const auto hollowed = hollow(docs, {}, matches);
    CHECK(hollowed[0].tokens == docs[0].tokens);  // earliest untouched
    CHECK(hollowed[1].tokens.size() < docs[1].tokens.size());
}

TEST_CASE("hollowing a shared passage across a chain keeps only the first") {
    Rng rng(47);
    const auto vocab = dt::make_vocab(700, rng);
    auto tokens_of = [&](std::size_t n) {
        std::vector<std::string> t;
        for (std::size_t i = 0; i < n; ++i) t.push_back(vocab[rng.next_below(vocab.size())]);
        return t;
    };
    const auto passage = tokens_of(30);
    auto mk = [&](const std::string& id, int year) {
        auto toks = tokens_of(60);
        toks.insert(toks.begin() + 15, passage.begin(), passage.end());
        return dt::make_doc(id, year, std::move(toks));
    };
    std::vector<Document> docs{mk("a", 100), mk("b", 200), mk("c", 300)};

    Fixture fx(docs);
    auto matches = filter_by_elapsed_years(find_all_matches(fx.index, fx.units, fx.params), docs, 50);
    const auto hollowed = hollow(docs, {}, matches);
    CHECK(hollowed[0].tokens == docs[0].tokens);
    CHECK(hollowed[1].tokens.size() <= docs[1].tokens.size() - 25);
    CHECK(hollowed[2].tokens.size() <= docs[2].tokens.size() - 25);

    // Conservation: removed tokens equal the union of deleted positions.
    std::vector<std::set<std::uint32_t>> deleted(docs.size());
    for (const auto& m : matches)
        for (std::uint32_t t = m.target_start; t < m.target_end; ++t) deleted[m.target_doc].insert(t);
    std::uint64_t union_size = 0;
    for (const auto& s : deleted) union_size += s.size();
    CHECK(total_tokens(docs) - total_tokens(hollowed) == union_size);
}

TEST_CASE("hollow leaves unmatched documents unchanged") {
    const auto docs = dt::random_corpus(4, 100, 500, 31);
    const auto hollowed = hollow(docs, {}, {});
    REQUIRE(hollowed.size() == docs.size());
    for (std::size_t i = 0; i < docs.size(); ++i) CHECK(hollowed[i].tokens == docs[i].tokens);
}

TEST_CASE("hollow keeps the chronologically earliest boilerplate occurrence") {
    Rng rng(10);
    const auto phrase = dt::make_vocab(20, rng);
    auto docs = dt::corpus_with_repeated_phrase(phrase, 25, 40, 400, 21);
    const auto boiler = find_boilerplate(docs, 20, 25, 10);
    REQUIRE(boiler.size() == 25);
    const auto hollowed = hollow(docs, boiler, {});
    // Years ascend with the doc index in this generator, so doc 0 keeps it.
    CHECK(hollowed[0].tokens.size() == docs[0].tokens.size());
    for (std::size_t i = 1; i < docs.size(); ++i) CHECK(hollowed[i].tokens.size() == docs[i].tokens.size() - 20);
}

TEST_CASE("hollow keeps lemma alignment") {
    Rng rng(12);
    const auto vocab = dt::make_vocab(500, rng);
    auto tokens_of = [&](std::size_t n) {
        std::vector<std::string> t;
        for (std::size_t i = 0; i < n; ++i) t.push_back(vocab[rng.next_below(vocab.size())]);
        return t;
    };
    auto a = tokens_of(60);
    auto b = tokens_of(60);
    std::copy(a.begin(), a.begin() + 25, b.begin() + 10);
    std::vector<Document> docs{dt::make_doc("a", 100, a), dt::make_doc("b", 200, b)};
    for (auto& d : docs) d.lemmas = d.tokens;

    Fixture fx(docs);
    auto matches = filter_by_elapsed_years(find_all_matches(fx.index, fx.units, fx.params), docs, 50);
    REQUIRE(!matches.empty());
    const auto hollowed = hollow(docs, {}, matches);
    for (const auto& d : hollowed) {
        REQUIRE(d.lemmas.size() == d.tokens.size());
        CHECK(d.lemmas == d.tokens);
    }
}

// ---------------------------------------------------------------------------
// End-to-end and serialization
// ---------------------------------------------------------------------------

TEST_CASE("run_reuse finds planted passages and matches serialize losslessly") {
    const auto planted = dt::planted_reuse_corpus(6, 6, 300, 800, 10, 24, 50, 6, 501);
    ReuseParams params;
    params.top_k = 0;
    const ReuseResult r = run_reuse(planted.docs, params);
    CHECK(!r.matches.empty());

    const auto dir = std::filesystem::temp_directory_path() / "diachron_test";
    std::filesystem::create_directories(dir);
    save_matches_jsonl(dir / "m.jsonl", r.matches, planted.docs);
    const auto loaded = load_matches_jsonl(dir / "m.jsonl", planted.docs);
    REQUIRE(loaded.size() == r.matches.size());
    for (std::size_t i = 0; i < loaded.size(); ++i) {
        CHECK(loaded[i].base_doc == r.matches[i].base_doc);
        CHECK(loaded[i].target_doc == r.matches[i].target_doc);
        CHECK(loaded[i].base_start == r.matches[i].base_start);
        CHECK(loaded[i].base_end == r.matches[i].base_end);
        CHECK(loaded[i].target_start == r.matches[i].target_start);
        CHECK(loaded[i].target_end == r.matches[i].target_end);
        CHECK(loaded[i].matched_words == r.matches[i].matched_words);
    }

    save_boilerplate_jsonl(dir / "b.jsonl", r.boilerplate, planted.docs);
    const auto bl = load_boilerplate_jsonl(dir / "b.jsonl", planted.docs);
    CHECK(spans_equal(bl, r.boilerplate));
}

TEST_CASE("arabic passages match despite added waw prefixes") {
    // Words built from rarer Arabic letters; waw and alef dominate the
    // character table, so prefixing a word with waw keeps its code.
    const char* rare[] = {"ب", "ت", "ث", "ج", "ح", "خ", "د", "ذ",
                          "ر", "ز", "س", "ش", "ص", "ض", "ط", "ظ",
                          "ع", "غ", "ف", "ق", "ك", "ل", "م", "ن"};
    const std::string waw = "و";
    const std::string alef = "ا";
    Rng rng(1453);
    auto word = [&]() {
        std::string w;
        const std::size_t len = 3 + rng.next_below(2);
        for (std::size_t i = 0; i < len; ++i) {
            if (rng.next_below(4) == 0) w += alef;
            w += rare[rng.next_below(24)];
        }
        return w;
    };
    std::vector<std::string> vocab;
    for (int i = 0; i < 500; ++i) vocab.push_back(word());
    auto tokens_of = [&](std::size_t n) {
        std::vector<std::string> t;
        for (std::size_t i = 0; i < n; ++i) t.push_back(vocab[rng.next_below(vocab.size())]);
        return t;
    };

    auto base = tokens_of(120);
    auto target = tokens_of(120);
    // Copy 30 tokens, then prefix every fifth copied word with waw.
    for (std::size_t i = 0; i < 30; ++i) {
        target[40 + i] = base[20 + i];
        if (i % 5 == 2) target[40 + i] = waw + target[40 + i];
    }
    std::vector<Document> docs{dt::make_doc("base", 100, base), dt::make_doc("target", 200, target)};
    // Keep waw and alef the most frequent characters regardless of sampling.
    std::vector<std::string> filler;
    for (int i = 0; i < 400; ++i) filler.push_back(waw + alef);
    docs.push_back(dt::make_doc("filler", 300, filler));

    Fixture fx(docs);
    const auto table = build_char_table(docs);
    // The prefixed form really does share its code with the bare form.
    const std::string sample = vocab[0];
    CHECK(word_code(sample, table) == word_code(waw + sample, table));

    const auto matches = match_documents(0, 1, fx.index, fx.units, fx.params);
    REQUIRE(!matches.empty());
    std::uint32_t best = 0;
    for (const auto& m : matches) best = std::max(best, m.matched_words);
    CHECK(best >= 25);  // all 30 positions align through the prefixes
}

TEST_CASE("match_documents rejects identical endpoints and loaders reject unknown ids") {
    const auto docs = dt::random_corpus(2, 60, 100, 9);
    Fixture fx(docs);
    CHECK_THROWS_AS(match_documents(1, 1, fx.index, fx.units, fx.params), UsageError);

    const auto dir = std::filesystem::temp_directory_path() / "diachron_test";
    std::filesystem::create_directories(dir);
    {
        std::ofstream out(dir / "bad_matches.jsonl");
        out << R"({"base_doc": "ghost", "target_doc": "doc0", "base_span": [0,20], "target_span": [0,20], "matched_words": 20})"
            << "\n";
    }
    CHECK_THROWS_WITH_AS(load_matches_jsonl(dir / "bad_matches.jsonl", docs), doctest::Contains("ghost"), DataError);
}

TEST_CASE("matching still works across conflated frequent phrases") {
    Rng rng(314);
    const auto vocab = dt::make_vocab(800, rng);
    const std::vector<std::string> hot{vocab[0], vocab[1], vocab[2], vocab[3]};
    auto tokens_of = [&](std::size_t n) {
        std::vector<std::string> t;
        for (std::size_t i = 0; i < n; ++i) t.push_back(vocab[4 + rng.next_below(vocab.size() - 4)]);
        return t;
    };

    // Scatter the hot 4-gram through filler documents so it gets conflated.
    std::vector<Document> docs;
    for (int i = 0; i < 12; ++i) {
        auto toks = tokens_of(120);
        for (int k = 0; k < 4; ++k)
            toks.insert(toks.begin() + static_cast<std::ptrdiff_t>(rng.next_below(toks.size())), hot.begin(),
                        hot.end());
        docs.push_back(dt::make_doc("fill" + std::to_string(i), 100, std::move(toks)));
    }
    // A 28-token passage with the hot phrase inside, copied early -> late.
    auto passage = tokens_of(24);
    passage.insert(passage.begin() + 10, hot.begin(), hot.end());
    auto base = tokens_of(100);
    base.insert(base.begin() + 30, passage.begin(), passage.end());
    auto target = tokens_of(100);
    target.insert(target.begin() + 50, passage.begin(), passage.end());
    docs.push_back(dt::make_doc("src", 100, base));
    docs.push_back(dt::make_doc("dst", 300, target));

    ReuseParams params;
    params.top_k = 64;
    params.min_phrase_count = 10;  // conflate the planted hot phrase only
    const ReuseResult r = run_reuse(docs, params);
    REQUIRE(!r.phrases.empty());
    CHECK(r.phrases[0].phrase == std::array<std::string, 4>{hot[0], hot[1], hot[2], hot[3]});

    bool found = false;
    for (const auto& m : r.matches) {
        if (docs[m.base_doc].doc_id == "src" && docs[m.target_doc].doc_id == "dst" && m.matched_words >= 24)
            found = true;
    }
    CHECK(found);
}

TEST_CASE("match length stats") {
    std::vector<ReuseMatch> ms;
    auto add = [&](std::uint32_t len) {
        ReuseMatch m = mk_match(0, 1);
        m.target_start = 0;
        m.target_end = len;
        ms.push_back(m);
    };
    add(20);
    add(40);
    const auto s = match_length_stats(ms);
    CHECK(s.count == 2);
    CHECK(s.mean == doctest::Approx(30.0));
    CHECK(s.stdev == doctest::Approx(10.0));
    CHECK(match_length_stats({}).count == 0);
}
