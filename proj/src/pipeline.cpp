#include "diachron/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "diachron/errors.hpp"
#include "diachron/lexstats.hpp"
#include "diachron/periodize.hpp"

namespace diachron {

namespace {
using nlohmann::json;
}

std::string file_hash(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot hash missing file: " + path.string());
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[1 << 16];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        const std::streamsize n = in.gcount();
        for (std::streamsize i = 0; i < n; ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001b3ULL;
        }
        if (!in) break;
    }
    char hex[17];
    std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(h));
    return std::string(hex);
}

std::string format_double(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, end);
}

// ---------------------------------------------------------------------------
// Config file
// ---------------------------------------------------------------------------

namespace {

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    std::size_t e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

int to_int(const std::string& key, const std::string& v) {
    try {
        return std::stoi(v);
    } catch (...) {
        throw UsageError("config: " + key + " expects an integer, got '" + v + "'");
    }
}

double to_double(const std::string& key, const std::string& v) {
    try {
        return std::stod(v);
    } catch (...) {
        throw UsageError("config: " + key + " expects a number, got '" + v + "'");
    }
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw UsageError("config: " + key + " expects a boolean, got '" + v + "'");
}

}  // namespace

PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open config file: " + path.string());
    PipelineConfig c;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        const std::string t = trim(line);
        if (t.empty()) continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw UsageError("config " + path.string() + ":" + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(t.substr(0, eq));
        const std::string val = trim(t.substr(eq + 1));

        if (key == "input") c.input = val;
        else if (key == "input_format") {
            if (val == "jsonl") c.input_format = IngestFormat::jsonl;
            else if (val == "plaintext-with-sidecar") c.input_format = IngestFormat::plaintext_sidecar;
            else throw UsageError("config: unknown input_format '" + val + "'");
        }
        else if (key == "out_dir") c.out_dir = val;
        else if (key == "terms_file") c.terms_file = val;
        else if (key == "phrase_len") c.reuse.phrase_len = static_cast<std::size_t>(to_int(key, val));
        else if (key == "min_count") c.reuse.boiler_min_count = static_cast<std::size_t>(to_int(key, val));
        else if (key == "max_gap") c.reuse.max_gap = static_cast<std::size_t>(to_int(key, val));
        else if (key == "top_k") c.reuse.top_k = static_cast<std::size_t>(to_int(key, val));
        else if (key == "min_phrase_count") c.reuse.min_phrase_count = static_cast<std::uint64_t>(to_int(key, val));
        else if (key == "min_words") c.reuse.min_words = static_cast<std::size_t>(to_int(key, val));
        else if (key == "max_skip") c.reuse.max_skip = static_cast<std::size_t>(to_int(key, val));
        else if (key == "min_gap_years") c.reuse.min_gap_years = to_int(key, val);
        else if (key == "letter_order") {
            if (val == "canonical") c.reuse.letter_order = LetterOrder::canonical;
            else if (val == "word") c.reuse.letter_order = LetterOrder::word;
            else throw UsageError("config: unknown letter_order '" + val + "'");
        }
        else if (key == "bin_width") c.bin_width = to_int(key, val);
        else if (key == "merge_head") c.merge_head = to_int(key, val);
        else if (key == "use_hollowed") c.use_hollowed = to_bool(key, val);
        else if (key == "use_lemmas") c.use_lemmas = to_bool(key, val);
        else if (key == "dim") c.train.dim = to_int(key, val);
        else if (key == "window") c.train.window = to_int(key, val);
        else if (key == "negatives") c.train.negatives = to_int(key, val);
        else if (key == "min_word_count") c.train.min_count = to_int(key, val);
        else if (key == "epochs") c.train.epochs = to_int(key, val);
        else if (key == "learning_rate") c.train.initial_lr = static_cast<float>(to_double(key, val));
        else if (key == "lifespan_window") c.lifespan_window = to_int(key, val);
        else if (key == "lifespan_step") c.lifespan_step = to_int(key, val);
        else if (key == "exclude_tail_years") c.exclude_tail_years = to_int(key, val);
        else if (key == "newlemma_bin_width") c.newlemma_bin_width = to_int(key, val);
        else if (key == "freq_bin_width") c.freq_bin_width = to_int(key, val);
        else if (key == "loess_span") c.loess_span = to_double(key, val);
        else if (key == "lexstats_hollowed") c.lexstats_hollowed = to_bool(key, val);
        else if (key == "seed") c.seed = static_cast<std::uint64_t>(to_int(key, val));
        else if (key == "threads") c.threads = to_int(key, val);
        else throw UsageError("config " + path.string() + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
    return c;
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

namespace {

class Manifest {
public:
    explicit Manifest(std::filesystem::path path) : path_(std::move(path)) {
        if (std::filesystem::exists(path_)) {
            std::ifstream in(path_);
            try {
                in >> data_;
            } catch (const json::exception&) {
                data_ = json::object();  // stale manifest: rebuild everything
            }
        }
        if (!data_.contains("stages")) data_["stages"] = json::object();
    }

    /// Empty when the recorded stage matches its params and every recorded
    /// input/output file still exists with the recorded hash; otherwise the
    /// reason the stage must rerun.
    std::string stale_reason(const std::string& stage, const std::string& params) const {
        const auto& stages = data_["stages"];
        if (!stages.contains(stage)) return "first run";
        const auto& s = stages[stage];
        if (s.value("params", std::string()) != params) return "parameters changed";
        for (const auto& kind : {"inputs", "outputs"}) {
            if (!s.contains(kind)) return "manifest entry incomplete";
            for (const auto& [file, hash] : s[kind].items()) {
                if (!std::filesystem::exists(file)) return std::string(kind) + " missing: " + file;
                if (file_hash(file) != hash.get<std::string>())
                    return std::string(kind) + " changed: " + file;
            }
        }
        return {};
    }

    void record(const std::string& stage, const std::string& params, const std::vector<std::filesystem::path>& inputs,
                const std::vector<std::filesystem::path>& outputs) {
        json s;
        s["params"] = params;
        s["inputs"] = json::object();
        for (const auto& f : inputs) s["inputs"][f.string()] = file_hash(f);
        s["outputs"] = json::object();
        for (const auto& f : outputs) s["outputs"][f.string()] = file_hash(f);
        data_["stages"][stage] = s;
        std::ofstream out(path_, std::ios::trunc);
        if (!out) throw DataError("cannot write manifest: " + path_.string());
        out << data_.dump(2) << '\n';
    }

private:
    std::filesystem::path path_;
    json data_;
};

std::string reuse_params_string(const ReuseParams& r) {
    std::ostringstream s;
    s << "phrase_len=" << r.phrase_len << ";min_count=" << r.boiler_min_count << ";max_gap=" << r.max_gap
      << ";top_k=" << r.top_k << ";min_phrase_count=" << r.min_phrase_count << ";min_words=" << r.min_words
      << ";max_skip=" << r.max_skip << ";letter_order=" << (r.letter_order == LetterOrder::canonical ? "c" : "w")
      << ";group_cap=" << r.hash_group_cap;
    return s.str();
}

std::string train_params_string(const TrainConfig& t, std::uint64_t seed) {
    std::ostringstream s;
    s << "dim=" << t.dim << ";window=" << t.window << ";neg=" << t.negatives << ";min_count=" << t.min_count
      << ";epochs=" << t.epochs << ";lr=" << format_double(t.initial_lr) << ";seed=" << seed;
    if (t.subsample_threshold) s << ";subsample=" << format_double(*t.subsample_threshold);
    return s.str();
}

std::vector<std::set<std::string>> load_term_sets(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open terms file: " + path.string());
    std::vector<std::set<std::string>> sets;
    std::string line;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::set<std::string> s;
        std::string w;
        while (ls >> w) s.insert(w);
        if (!s.empty()) sets.push_back(std::move(s));
    }
    return sets;
}

void write_lifespans_csv(const std::filesystem::path& path, std::span<const LifespanRecord> records) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out << "lemma,first_year,last_year,span,occurrences\n";
    for (const auto& r : records)
        out << r.lemma << ',' << r.first_year << ',' << r.last_year << ',' << r.span() << ',' << r.occurrences
            << '\n';
}

void write_window_csv(const std::filesystem::path& path, std::span<const WindowSummary> windows) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out << "window_start,window_end,records,mean,median,mean_fraction\n";
    for (const auto& w : windows)
        out << w.window_start << ',' << w.window_end << ',' << w.summary.count << ','
            << format_double(w.summary.mean) << ',' << format_double(w.summary.median) << ','
            << format_double(w.summary.mean_fraction_of_span) << '\n';
}

void write_newlemmas_csv(const std::filesystem::path& path, std::span<const NewLemmaPoint> points) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out << "bin_start,bin_end,new_lemmas,denominator,percent,empty_bin\n";
    for (const auto& p : points)
        out << p.bin_start << ',' << p.bin_end << ',' << p.new_lemmas << ',' << p.denominator << ','
            << format_double(p.percent) << ',' << (p.empty_bin ? 1 : 0) << '\n';
}

void write_freq_csv(const std::filesystem::path& path, std::span<const FrequencySeries> series) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out << "bin_start,bin_end";
    for (const auto& s : series) out << ',' << s.label << ',' << s.label << "_loess";
    out << '\n';
    const std::size_t nbins = series.empty() ? 0 : series[0].points.size();
    // Smoothed values align with the non-missing points, in order.
    std::vector<std::size_t> cursor(series.size(), 0);
    for (std::size_t b = 0; b < nbins; ++b) {
        out << series[0].points[b].bin_start << ',' << series[0].points[b].bin_end;
        for (std::size_t si = 0; si < series.size(); ++si) {
            const auto& p = series[si].points[b];
            if (p.missing) {
                out << ",,";
            } else {
                out << ',' << format_double(p.value) << ',';
                if (cursor[si] < series[si].smoothed.size()) out << format_double(series[si].smoothed[cursor[si]]);
                ++cursor[si];
            }
        }
        out << '\n';
    }
}

}  // namespace

void run_pipeline(const PipelineConfig& config, std::ostream& log) {
    namespace fs = std::filesystem;
    if (config.input.empty()) throw UsageError("pipeline: input is required");
    if (!fs::exists(config.input)) throw DataError("pipeline: input does not exist: " + config.input.string());
    fs::create_directories(config.out_dir);
    fs::create_directories(config.out_dir / "models");

    Manifest manifest(config.out_dir / "manifest.json");
    ReuseParams reuse_params = config.reuse;
    reuse_params.threads = config.threads;

    const fs::path corpus_bin = config.out_dir / "corpus.bin";
    const fs::path boiler_file = config.out_dir / "boilerplate.jsonl";
    const fs::path raw_matches_file = config.out_dir / "matches_raw.jsonl";
    const fs::path matches_file = config.out_dir / "matches.jsonl";
    const fs::path hollowed_bin = config.out_dir / "hollowed.bin";
    const fs::path bins_file = config.out_dir / "bins.json";
    const fs::path dendro_file = config.out_dir / "dendro.json";
    const fs::path dendro_svg = config.out_dir / "dendro.svg";
    const fs::path lifespan_csv = config.out_dir / "lifespans.csv";
    const fs::path newlemmas_csv = config.out_dir / "newlemmas.csv";
    const fs::path freq_csv = config.out_dir / "freq.csv";

    auto stage = [&](const std::string& name, const std::string& params, const std::vector<fs::path>& inputs,
                     const std::vector<fs::path>& outputs, auto&& body) {
        const std::string stale = manifest.stale_reason(name, params);
        if (stale.empty()) {
            log << "[" << name << "] up to date\n";
            return;
        }
        log << "[" << name << "] running (" << stale << ")\n";
        try {
            body();
        } catch (const UsageError&) {
            throw;
        } catch (const DataError& e) {
            throw DataError("stage " + name + ": " + e.what());
        } catch (const std::exception& e) {
            throw std::runtime_error("stage " + name + ": " + e.what());
        }
        manifest.record(name, params, inputs, outputs);
    };

    // Loaded lazily; stages that run share the load.
    std::vector<Document> docs;
    auto corpus = [&]() -> std::vector<Document>& {
        if (docs.empty()) docs = load_corpus(corpus_bin);
        return docs;
    };
    std::vector<Document> hollowed_docs;
    auto hollowed = [&]() -> std::vector<Document>& {
        if (hollowed_docs.empty()) hollowed_docs = load_corpus(hollowed_bin);
        return hollowed_docs;
    };

    stage("ingest", "format=" + std::string(config.input_format == IngestFormat::jsonl ? "jsonl" : "sidecar"),
          {config.input}, {corpus_bin}, [&] {
              const auto loaded = ingest(config.input, config.input_format);
              save_corpus(loaded, corpus_bin);
          });

    stage("boilerplate",
          "phrase_len=" + std::to_string(reuse_params.phrase_len) +
              ";min_count=" + std::to_string(reuse_params.boiler_min_count) +
              ";max_gap=" + std::to_string(reuse_params.max_gap),
          {corpus_bin}, {boiler_file}, [&] {
              auto spans = find_boilerplate(corpus(), reuse_params.phrase_len, reuse_params.boiler_min_count,
                                            reuse_params.max_gap, config.threads);
              save_boilerplate_jsonl(boiler_file, spans, corpus());
          });

    stage("reuse", reuse_params_string(reuse_params), {corpus_bin, boiler_file}, {raw_matches_file}, [&] {
        auto& c = corpus();
        const auto boiler = load_boilerplate_jsonl(boiler_file, c);
        const auto phrases =
            find_frequent_phrases(c, boiler, 4, reuse_params.top_k, reuse_params.min_phrase_count, config.threads);
        const InternedCorpus interned = intern_corpus(c, config.threads);
        const CharFrequencyTable chars = build_char_table(c, config.threads);
        const ReuseCodec codec(interned, chars, phrases, reuse_params.top_k, reuse_params.letter_order);
        std::vector<std::span<const BoilerplateSpan>> by_doc(c.size());
        {
            std::size_t i = 0;
            while (i < boiler.size()) {
                std::size_t j = i;
                while (j < boiler.size() && boiler[j].doc == boiler[i].doc) ++j;
                by_doc[boiler[i].doc] = std::span<const BoilerplateSpan>(boiler.data() + i, j - i);
                i = j;
            }
        }
        std::vector<UnitDoc> unit_docs(c.size());
        for (std::size_t i = 0; i < c.size(); ++i) unit_docs[i] = build_unit_doc(interned.docs[i], codec, by_doc[i]);
        const SkipgramIndex index = SkipgramIndex::build(unit_docs, config.threads);
        const auto raw = find_all_matches(index, unit_docs, reuse_params);
        save_matches_jsonl(raw_matches_file, raw, c);
    });

    stage("filter", "min_gap_years=" + std::to_string(reuse_params.min_gap_years), {raw_matches_file},
          {matches_file}, [&] {
              auto raw = load_matches_jsonl(raw_matches_file, corpus());
              const auto kept = filter_by_elapsed_years(std::move(raw), corpus(), reuse_params.min_gap_years);
              save_matches_jsonl(matches_file, kept, corpus());
          });

    stage("hollow", "", {corpus_bin, boiler_file, matches_file}, {hollowed_bin}, [&] {
        auto& c = corpus();
        const auto boiler = load_boilerplate_jsonl(boiler_file, c);
        const auto matches = load_matches_jsonl(matches_file, c);
        const auto out = hollow(c, boiler, matches);
        save_corpus(out, hollowed_bin);
    });

    const fs::path embed_input = config.use_hollowed ? hollowed_bin : corpus_bin;
    const std::string bin_params = "bin_width=" + std::to_string(config.bin_width) +
                                   ";merge_head=" + std::to_string(config.merge_head) +
                                   ";lemmas=" + (config.use_lemmas ? "1" : "0") +
                                   ";hollowed=" + (config.use_hollowed ? "1" : "0");

    // Bin layout is computed inside the embed stage and reread by periodize.
    std::vector<fs::path> model_files;
    {
        auto& base = config.use_hollowed ? hollowed() : corpus();
        const auto bins = bin_by_period(base, config.bin_width, config.merge_head);
        model_files.reserve(bins.size());
        char name[32];
        for (std::size_t i = 0; i < bins.size(); ++i) {
            std::snprintf(name, sizeof(name), "bin_%03zu.emb", i);
            model_files.push_back(config.out_dir / "models" / name);
        }
    }

    std::vector<fs::path> embed_outputs = model_files;
    embed_outputs.push_back(bins_file);
    stage("embed", bin_params + ";" + train_params_string(config.train, config.seed), {embed_input}, embed_outputs,
          [&] {
              auto& base = config.use_hollowed ? hollowed() : corpus();
              const auto bins = bin_by_period(base, config.bin_width, config.merge_head);
              json jbins = json::array();
              for (const auto& b : bins)
                  jbins.push_back({{"start", b.start_year}, {"end", b.end_year}, {"docs", b.doc_indices.size()}});
              {
                  std::ofstream out(bins_file, std::ios::trunc);
                  out << jbins.dump(2) << '\n';
              }
              PeriodizeConfig pc;
              pc.train = config.train;
              pc.seed = config.seed;
              pc.use_lemmas = config.use_lemmas;
              pc.threads = config.threads;
              const auto clusters = initial_clusters(base, bins, pc);
              for (std::size_t i = 0; i < clusters.size(); ++i) clusters[i].model.save(model_files[i]);
          });

    stage("periodize", bin_params + ";" + train_params_string(config.train, config.seed), embed_outputs,
          {dendro_file, dendro_svg}, [&] {
              auto& base = config.use_hollowed ? hollowed() : corpus();
              const auto bins = bin_by_period(base, config.bin_width, config.merge_head);
              std::vector<EmbeddingModel> models;
              models.reserve(model_files.size());
              for (const auto& f : model_files) models.push_back(EmbeddingModel::load(f));
              PeriodizeConfig pc;
              pc.train = config.train;
              pc.seed = config.seed;
              pc.use_lemmas = config.use_lemmas;
              pc.threads = config.threads;
              const Dendrogram d = periodize(base, bins, pc, std::move(models));
              save_dendrogram_json(d, dendro_file);
              save_dendrogram_svg(d, dendro_svg);
          });

    const fs::path lex_input = config.lexstats_hollowed ? hollowed_bin : corpus_bin;
    std::vector<fs::path> lex_outputs = {lifespan_csv, newlemmas_csv};
    if (!config.terms_file.empty()) lex_outputs.push_back(freq_csv);
    std::vector<fs::path> lex_inputs = {lex_input};
    if (!config.terms_file.empty()) lex_inputs.push_back(config.terms_file);
    std::ostringstream lex_params;
    lex_params << "window=" << config.lifespan_window << ";step=" << config.lifespan_step
               << ";tail=" << config.exclude_tail_years << ";newlemma_bin=" << config.newlemma_bin_width
               << ";freq_bin=" << config.freq_bin_width << ";loess=" << format_double(config.loess_span)
               << ";hollowed=" << (config.lexstats_hollowed ? "1" : "0");
    stage("lexstats", lex_params.str(), lex_inputs, lex_outputs, [&] {
        auto& base = config.lexstats_hollowed ? hollowed() : corpus();
        LifespanOptions lopts;
        lopts.exclude_tail_years = config.exclude_tail_years;
        if (config.lifespan_window > 0) {
            const auto windows = windowed_lifespans(base, config.lifespan_window, config.lifespan_step, lopts);
            write_window_csv(lifespan_csv, windows);
        } else {
            const auto records = lifespans(base, lopts);
            write_lifespans_csv(lifespan_csv, records);
        }
        const auto points = new_lemma_rate(base, config.newlemma_bin_width);
        write_newlemmas_csv(newlemmas_csv, points);
        if (!config.terms_file.empty()) {
            const auto term_sets = load_term_sets(config.terms_file);
            std::vector<FrequencySeries> series;
            series.reserve(term_sets.size());
            for (const auto& terms : term_sets) {
                FrequencySeries s = frequency_series(base, terms, config.freq_bin_width);
                std::vector<double> xs, ys;
                for (const auto& p : s.points)
                    if (!p.missing) {
                        xs.push_back(p.bin_start);
                        ys.push_back(p.value);
                    }
                if (xs.size() >= 3) s.smoothed = loess_smooth(xs, ys, config.loess_span, 1);
                series.push_back(std::move(s));
            }
            write_freq_csv(freq_csv, series);
        }
    });
}

}  // namespace diachron
