#include "diachron/corpus.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "diachron/errors.hpp"
#include "diachron/thread_pool.hpp"
#include "diachron/utf8.hpp"

namespace diachron {

namespace {

using nlohmann::json;

std::vector<std::string> split_whitespace(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream in(s);
    std::string w;
    while (in >> w) out.push_back(w);
    return out;
}

Document parse_record(const json& j, const Normalizer& norm, const std::string& where) {
    if (!j.contains("doc_id") || !j["doc_id"].is_string() || j["doc_id"].get<std::string>().empty())
        throw DataError(where + ": missing doc_id");
    Document d;
    d.doc_id = j["doc_id"].get<std::string>();
    if (!j.contains("death_year_ah") || !j["death_year_ah"].is_number_integer())
        throw DataError(where + ": record " + d.doc_id + " missing death_year_ah");
    d.death_year = j["death_year_ah"].get<int>();
    if (d.death_year <= 0)
        throw DataError(where + ": record " + d.doc_id + " has non-positive death_year_ah");
    d.title = j.value("title", std::string());
    d.author = j.value("author", std::string());
    d.source = j.value("source", std::string());
    if (!j.contains("text") || !j["text"].is_string())
        throw DataError(where + ": record " + d.doc_id + " missing text");
    d.tokens = tokenize(j["text"].get<std::string>(), norm);
    if (d.tokens.empty()) throw DataError(where + ": record " + d.doc_id + " has no tokens");
    if (j.contains("lemmas") && !j["lemmas"].is_null()) {
        if (!j["lemmas"].is_string()) throw DataError(where + ": record " + d.doc_id + " lemmas must be a string");
        d.lemmas = split_whitespace(j["lemmas"].get<std::string>());
        if (d.lemmas.size() != d.tokens.size())
            throw DataError(where + ": record " + d.doc_id + " lemma count " + std::to_string(d.lemmas.size()) +
                            " does not match token count " + std::to_string(d.tokens.size()));
    }
    return d;
}

std::vector<Document> ingest_jsonl(const std::filesystem::path& path, const Normalizer& norm) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open input file: " + path.string());
    std::vector<Document> docs;
    std::vector<std::string> problems;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const std::string where = path.filename().string() + ":" + std::to_string(lineno);
        try {
            json j = json::parse(line);
            docs.push_back(parse_record(j, norm, where));
        } catch (const json::exception& e) {
            problems.push_back(where + ": invalid JSON (" + e.what() + ")");
        } catch (const DataError& e) {
            problems.push_back(e.what());
        }
    }
    if (!problems.empty()) {
        std::string msg = "ingest found " + std::to_string(problems.size()) + " bad record(s):";
        for (const auto& p : problems) msg += "\n  " + p;
        throw DataError(msg);
    }
    return docs;
}

// Directory tree reader: every "<name>.txt" is document text and
// "<name>.json" beside it carries the metadata fields of the JSONL schema
// (minus "text").
std::vector<Document> ingest_sidecar(const std::filesystem::path& path, const Normalizer& norm) {
    if (!std::filesystem::is_directory(path)) throw DataError("not a directory: " + path.string());
    std::vector<std::filesystem::path> texts;
    for (const auto& entry : std::filesystem::recursive_directory_iterator(path))
        if (entry.is_regular_file() && entry.path().extension() == ".txt") texts.push_back(entry.path());
    std::sort(texts.begin(), texts.end());
    std::vector<Document> docs;
    std::vector<std::string> problems;
    for (const auto& txt : texts) {
        std::filesystem::path meta = txt;
        meta.replace_extension(".json");
        const std::string where = txt.filename().string();
        try {
            if (!std::filesystem::exists(meta)) throw DataError(where + ": missing sidecar " + meta.filename().string());
            std::ifstream min(meta);
            if (!min) throw DataError("cannot open input file: " + meta.string());
            json j = json::parse(min);
            std::ifstream tin(txt);
            if (!tin) throw DataError("cannot open input file: " + txt.string());
            std::stringstream body;
            body << tin.rdbuf();
            j["text"] = body.str();
            docs.push_back(parse_record(j, norm, where));
        } catch (const json::exception& e) {
            problems.push_back(where + ": invalid JSON (" + std::string(e.what()) + ")");
        } catch (const DataError& e) {
            problems.push_back(e.what());
        }
    }
    if (!problems.empty()) {
        std::string msg = "ingest found " + std::to_string(problems.size()) + " bad record(s):";
        for (const auto& p : problems) msg += "\n  " + p;
        throw DataError(msg);
    }
    return docs;
}

}  // namespace

std::vector<Document> ingest(const std::filesystem::path& path, IngestFormat format, const Normalizer& norm) {
    if (!std::filesystem::exists(path)) throw DataError("input path does not exist: " + path.string());
    std::vector<Document> docs =
        format == IngestFormat::jsonl ? ingest_jsonl(path, norm) : ingest_sidecar(path, norm);

    std::sort(docs.begin(), docs.end(), [](const Document& a, const Document& b) {
        if (a.death_year != b.death_year) return a.death_year < b.death_year;
        return a.doc_id < b.doc_id;
    });

    std::vector<std::string> dups;
    for (std::size_t i = 1; i < docs.size(); ++i)
        if (docs[i].doc_id == docs[i - 1].doc_id) dups.push_back(docs[i].doc_id);
    if (!dups.empty()) {
        std::string msg = "duplicate doc_id(s):";
        for (const auto& d : dups) msg += " " + d;
        throw DataError(msg);
    }
    return docs;
}

CharFrequencyTable build_char_table(std::span<const Document> docs, int threads) {
    if (docs.empty()) throw DataError("build_char_table: no documents");

    threads = resolve_threads(threads);
    const std::size_t shards = std::max<std::size_t>(1, std::min<std::size_t>(docs.size(), threads));
    std::vector<std::unordered_map<char32_t, std::uint64_t>> partial(shards);
    parallel_for(shards, threads, [&](std::size_t w) {
        auto& counts = partial[w];
        for (std::size_t i = w; i < docs.size(); i += shards)
            for (const auto& tok : docs[i].tokens)
                for (char32_t cp : utf8_decode(tok)) ++counts[cp];
    });

    CharFrequencyTable table;
    for (const auto& counts : partial)
        for (const auto& [cp, c] : counts) table.counts[cp] += c;
    if (table.counts.empty()) throw DataError("build_char_table: no characters observed");

    table.alphabet.reserve(table.counts.size());
    for (const auto& [cp, c] : table.counts) table.alphabet.push_back(cp);
    std::sort(table.alphabet.begin(), table.alphabet.end());
    for (std::size_t i = 0; i < table.alphabet.size(); ++i)
        table.index[table.alphabet[i]] = static_cast<std::uint16_t>(i);
    return table;
}

std::vector<TimeBin> bin_by_period(std::span<const Document> docs, int width, int merge_head) {
    if (width <= 0) throw UsageError("bin width must be positive");
    if (merge_head < 0 || merge_head % width != 0)
        throw UsageError("merge_head (" + std::to_string(merge_head) + ") must be 0 or a multiple of width (" +
                         std::to_string(width) + ")");
    if (docs.empty()) throw DataError("bin_by_period: no documents");

    int min_year = docs[0].death_year, max_year = docs[0].death_year;
    for (const auto& d : docs) {
        min_year = std::min(min_year, d.death_year);
        max_year = std::max(max_year, d.death_year);
    }
    auto floor_div = [](int a, int b) { return a >= 0 ? a / b : -((-a + b - 1) / b); };
    const int range_start = floor_div(min_year, width) * width;
    const int range_end = (floor_div(max_year, width) + 1) * width;

    std::vector<TimeBin> bins;
    int cursor = range_start;
    if (merge_head > 0) {
        TimeBin head;
        head.start_year = range_start;
        head.end_year = std::min(range_start + merge_head, range_end);
        bins.push_back(head);
        cursor = bins.back().end_year;
    }
    while (cursor < range_end) {
        TimeBin b;
        b.start_year = cursor;
        b.end_year = cursor + width;
        bins.push_back(b);
        cursor += width;
    }

    for (std::size_t i = 0; i < docs.size(); ++i) {
        const int y = docs[i].death_year;
        for (auto& b : bins) {
            if (b.contains_year(y)) {
                b.doc_indices.push_back(i);
                break;
            }
        }
    }
    return bins;
}

std::vector<std::span<const std::string>> bin_sentences(std::span<const Document> docs, const TimeBin& bin,
                                                        bool use_lemmas) {
    std::vector<std::span<const std::string>> out;
    out.reserve(bin.doc_indices.size());
    for (std::size_t idx : bin.doc_indices) {
        const Document& d = docs[idx];
        if (use_lemmas && !d.has_lemmas() && !d.tokens.empty())
            throw DataError("document " + d.doc_id + " has no lemmas");
        const auto& seq = use_lemmas && d.has_lemmas() ? d.lemmas : d.tokens;
        out.emplace_back(seq.data(), seq.size());
    }
    return out;
}

namespace {

constexpr char kCorpusMagic[4] = {'D', 'C', 'R', 'P'};
constexpr std::uint32_t kCorpusVersion = 1;

void write_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ostream& out, std::uint64_t v) {
    write_u32(out, static_cast<std::uint32_t>(v));
    write_u32(out, static_cast<std::uint32_t>(v >> 32));
}

void write_i32(std::ostream& out, std::int32_t v) { write_u32(out, static_cast<std::uint32_t>(v)); }

void write_str(std::ostream& out, const std::string& s) {
    write_u32(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint32_t read_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw DataError("corpus file truncated");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint64_t read_u64(std::istream& in) {
    const std::uint64_t lo = read_u32(in);
    const std::uint64_t hi = read_u32(in);
    return lo | (hi << 32);
}

std::int32_t read_i32(std::istream& in) { return static_cast<std::int32_t>(read_u32(in)); }

std::string read_str(std::istream& in) {
    const std::uint32_t n = read_u32(in);
    std::string s(n, '\0');
    in.read(s.data(), n);
    if (!in) throw DataError("corpus file truncated");
    return s;
}

}  // namespace

void save_corpus(std::span<const Document> docs, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write corpus file: " + path.string());
    out.write(kCorpusMagic, 4);
    write_u32(out, kCorpusVersion);
    write_u64(out, docs.size());
    for (const auto& d : docs) {
        write_str(out, d.doc_id);
        write_str(out, d.title);
        write_str(out, d.author);
        write_str(out, d.source);
        write_i32(out, d.death_year);
        write_u64(out, d.tokens.size());
        for (const auto& t : d.tokens) write_str(out, t);
        write_u64(out, d.lemmas.size());
        for (const auto& l : d.lemmas) write_str(out, l);
    }
    if (!out) throw DataError("write failed: " + path.string());
}

std::vector<Document> load_corpus(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open corpus file: " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kCorpusMagic, 4) != 0)
        throw DataError("not a corpus file (bad magic): " + path.string());
    const std::uint32_t version = read_u32(in);
    if (version != kCorpusVersion)
        throw DataError("unsupported corpus version " + std::to_string(version) + " in " + path.string());
    const std::uint64_t count = read_u64(in);
    std::vector<Document> docs;
    docs.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        Document d;
        d.doc_id = read_str(in);
        d.title = read_str(in);
        d.author = read_str(in);
        d.source = read_str(in);
        d.death_year = read_i32(in);
        const std::uint64_t ntok = read_u64(in);
        d.tokens.reserve(ntok);
        for (std::uint64_t k = 0; k < ntok; ++k) d.tokens.push_back(read_str(in));
        const std::uint64_t nlem = read_u64(in);
        d.lemmas.reserve(nlem);
        for (std::uint64_t k = 0; k < nlem; ++k) d.lemmas.push_back(read_str(in));
        docs.push_back(std::move(d));
    }
    return docs;
}

std::uint64_t total_tokens(std::span<const Document> docs) {
    std::uint64_t n = 0;
    for (const auto& d : docs) n += d.tokens.size();
    return n;
}

}  // namespace diachron
