// diachron: detect text reuse in dated corpora, periodize them via
// embedding-based neighbor clustering, and compute diachronic lexical
// statistics.

#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "diachron/corpus.hpp"
#include "diachron/errors.hpp"
#include "diachron/lexstats.hpp"
#include "diachron/periodize.hpp"
#include "diachron/pipeline.hpp"
#include "diachron/reuse.hpp"
#include "diachron/thread_pool.hpp"

namespace {

using namespace diachron;

IngestFormat parse_format(const std::string& s) {
    if (s == "jsonl") return IngestFormat::jsonl;
    if (s == "plaintext-with-sidecar") return IngestFormat::plaintext_sidecar;
    throw UsageError("unknown format '" + s + "' (expected jsonl or plaintext-with-sidecar)");
}

int cmd_ingest(const std::string& input, const std::string& format, const std::string& out) {
    const auto docs = ingest(input, parse_format(format));
    save_corpus(docs, out);
    std::cout << "ingested " << docs.size() << " documents, " << total_tokens(docs) << " tokens -> " << out << "\n";
    return 0;
}

struct ReuseCli {
    std::string corpus;
    std::string out;
    std::string boilerplate_out;
    std::string raw_out;
    ReuseParams params;
};

int cmd_reuse(const ReuseCli& cli) {
    const auto docs = load_corpus(cli.corpus);
    const ReuseResult r = run_reuse(docs, cli.params);
    save_matches_jsonl(cli.out, r.matches, docs);
    if (!cli.boilerplate_out.empty()) save_boilerplate_jsonl(cli.boilerplate_out, r.boilerplate, docs);
    if (!cli.raw_out.empty()) save_matches_jsonl(cli.raw_out, r.raw_matches, docs);
    std::cout << "boilerplate spans: " << r.boilerplate.size() << "\n"
              << "conflated phrases: " << r.phrases.size() << "\n"
              << "raw matches:       " << r.raw_matches.size() << "\n"
              << "filtered matches:  " << r.matches.size() << " -> " << cli.out << "\n";
    return 0;
}

int cmd_reuse_stats(const std::string& matches_path, const std::string& corpus_path,
                    const std::string& boiler_path) {
    if (corpus_path.empty()) throw UsageError("reuse-stats needs --corpus to resolve document ids");
    const auto docs = load_corpus(corpus_path);
    const auto matches = load_matches_jsonl(matches_path, docs);
    const MatchLengthStats s = match_length_stats(matches);
    std::cout << "matches: " << s.count << "\n";
    std::cout << "length (target-side tokens): mean " << format_double(s.mean) << " +/- " << format_double(s.stdev)
              << "\n";
    std::vector<BoilerplateSpan> boiler;
    if (!boiler_path.empty()) boiler = load_boilerplate_jsonl(boiler_path, docs);
    std::cout << "reused words" << (boiler_path.empty() ? " (matches only)" : "") << ": "
              << count_reused_words(docs, boiler, matches) << "\n";
    return 0;
}

int cmd_hollow(const std::string& corpus_path, const std::string& matches_path, const std::string& boiler_path,
               const std::string& out) {
    const auto docs = load_corpus(corpus_path);
    const auto matches = load_matches_jsonl(matches_path, docs);
    std::vector<BoilerplateSpan> boiler;
    if (!boiler_path.empty()) boiler = load_boilerplate_jsonl(boiler_path, docs);
    const auto out_docs = hollow(docs, boiler, matches);
    save_corpus(out_docs, out);
    std::cout << "hollowed " << (total_tokens(docs) - total_tokens(out_docs)) << " of " << total_tokens(docs)
              << " tokens -> " << out << "\n";
    return 0;
}

struct EmbedCli {
    std::string corpus;
    std::string out;
    std::string text_out;
    int bin_index = -1;
    int bin_width = 100;
    int merge_head = 200;
    bool use_lemmas = false;
    TrainConfig train;
};

int cmd_embed(const EmbedCli& cli) {
    const auto docs = load_corpus(cli.corpus);
    std::vector<TokenSpan> sentences;
    if (cli.bin_index >= 0) {
        const auto bins = bin_by_period(docs, cli.bin_width, cli.merge_head);
        if (static_cast<std::size_t>(cli.bin_index) >= bins.size())
            throw UsageError("bin index " + std::to_string(cli.bin_index) + " out of range (" +
                             std::to_string(bins.size()) + " bins)");
        sentences = bin_sentences(docs, bins[static_cast<std::size_t>(cli.bin_index)], cli.use_lemmas);
    } else {
        sentences.reserve(docs.size());
        for (const auto& d : docs) {
            const auto& seq = cli.use_lemmas ? d.lemmas : d.tokens;
            sentences.emplace_back(seq.data(), seq.size());
        }
    }
    const EmbeddingModel model = train_embeddings(sentences, cli.train);
    model.save(cli.out);
    if (!cli.text_out.empty()) model.export_text(cli.text_out);
    std::cout << "trained " << model.vocab_size() << " x " << model.dim() << " -> " << cli.out << "\n";
    return 0;
}

struct PeriodizeCli {
    std::string corpus;
    std::string out;
    std::string svg;
    std::string input_layer = "plain";
    int bin_width = 100;
    int merge_head = 200;
    bool hollowed = false;
    bool raw_distance = false;
    PeriodizeConfig config;
};

int cmd_periodize(const PeriodizeCli& cli) {
    if (cli.input_layer != "plain" && cli.input_layer != "lemma")
        throw UsageError("--input expects plain or lemma, got '" + cli.input_layer + "'");
    const auto docs = load_corpus(cli.corpus);
    const auto bins = bin_by_period(docs, cli.bin_width, cli.merge_head);
    PeriodizeConfig pc = cli.config;
    pc.use_lemmas = cli.input_layer == "lemma";
    pc.raw_distance = cli.raw_distance;
    const Dendrogram d = periodize(docs, bins, pc);
    save_dendrogram_json(d, cli.out);
    if (!cli.svg.empty()) save_dendrogram_svg(d, cli.svg);
    std::cout << "periodized " << bins.size() << " bins in " << d.merges.size() << " merges"
              << (cli.hollowed ? " (hollowed corpus)" : "") << " -> " << cli.out << "\n";
    return 0;
}

struct LifespanCli {
    std::string corpus;
    std::string out;
    int window = 0;
    int step = 100;
    int exclude_tail_years = 1;
    std::string allowlist_path;
    bool hollowed = false;  // annotation only; pass the hollowed corpus file
};

int cmd_lifespan(const LifespanCli& cli) {
    const auto docs = load_corpus(cli.corpus);
    LifespanOptions opts;
    opts.exclude_tail_years = cli.exclude_tail_years;
    if (!cli.allowlist_path.empty()) {
        std::ifstream in(cli.allowlist_path);
        if (!in) throw DataError("cannot open allowlist: " + cli.allowlist_path);
        std::set<std::string> allow;
        std::string w;
        while (in >> w) allow.insert(w);
        opts.allowlist = std::move(allow);
    }
    std::ofstream out(cli.out, std::ios::trunc);
    if (!out) throw DataError("cannot write " + cli.out);
    if (cli.window > 0) {
        const auto windows = windowed_lifespans(docs, cli.window, cli.step, opts);
        out << "window_start,window_end,records,mean,median,mean_fraction\n";
        for (const auto& w : windows)
            out << w.window_start << ',' << w.window_end << ',' << w.summary.count << ','
                << format_double(w.summary.mean) << ',' << format_double(w.summary.median) << ','
                << format_double(w.summary.mean_fraction_of_span) << '\n';
        std::cout << windows.size() << " windows -> " << cli.out << "\n";
    } else {
        const auto records = lifespans(docs, opts);
        out << "lemma,first_year,last_year,span,occurrences\n";
        for (const auto& r : records)
            out << r.lemma << ',' << r.first_year << ',' << r.last_year << ',' << r.span() << ',' << r.occurrences
                << '\n';
        std::cout << records.size() << " lifespan records -> " << cli.out << "\n";
    }
    return 0;
}

int cmd_newlemmas(const std::string& corpus_path, int bin_width, bool per_bin, const std::string& out_path) {
    const auto docs = load_corpus(corpus_path);
    const auto points = new_lemma_rate(docs, bin_width, per_bin);
    std::ofstream out(out_path, std::ios::trunc);
    if (!out) throw DataError("cannot write " + out_path);
    out << "bin_start,bin_end,new_lemmas,denominator,percent,empty_bin\n";
    for (const auto& p : points)
        out << p.bin_start << ',' << p.bin_end << ',' << p.new_lemmas << ',' << p.denominator << ','
            << format_double(p.percent) << ',' << (p.empty_bin ? 1 : 0) << '\n';
    std::cout << points.size() << " bins -> " << out_path << "\n";
    return 0;
}

struct FreqCli {
    std::string corpus;
    std::string terms;
    std::string out;
    std::string svg;
    int bin_width = 50;
    double loess = 0.3;
    bool use_lemmas = false;
};

int cmd_freq(const FreqCli& cli) {
    const auto docs = load_corpus(cli.corpus);
    std::ifstream in(cli.terms);
    if (!in) throw DataError("cannot open terms file: " + cli.terms);
    std::vector<std::set<std::string>> term_sets;
    std::string line;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::set<std::string> s;
        std::string w;
        while (ls >> w) s.insert(w);
        if (!s.empty()) term_sets.push_back(std::move(s));
    }
    if (term_sets.empty()) throw DataError("terms file is empty: " + cli.terms);

    std::vector<FrequencySeries> series;
    for (const auto& terms : term_sets) {
        FrequencySeries s = frequency_series(docs, terms, cli.bin_width, cli.use_lemmas);
        std::vector<double> xs, ys;
        for (const auto& p : s.points)
            if (!p.missing) {
                xs.push_back(p.bin_start);
                ys.push_back(p.value);
            }
        if (xs.size() >= 3) s.smoothed = loess_smooth(xs, ys, cli.loess, 1);
        series.push_back(std::move(s));
    }

    std::ofstream out(cli.out, std::ios::trunc);
    if (!out) throw DataError("cannot write " + cli.out);
    out << "bin_start,bin_end";
    for (const auto& s : series) out << ',' << s.label << ',' << s.label << "_loess";
    out << '\n';
    std::vector<std::size_t> cursor(series.size(), 0);
    for (std::size_t b = 0; b < series[0].points.size(); ++b) {
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

    if (!cli.svg.empty()) {
        // Minimal line chart: raw points dotted, smoothed line solid.
        std::ofstream svg(cli.svg, std::ios::trunc);
        if (!svg) throw DataError("cannot write " + cli.svg);
        const double w = 640, h = 360, m = 40;
        double maxv = 1e-12;
        for (const auto& s : series)
            for (const auto& p : s.points)
                if (!p.missing) maxv = std::max(maxv, p.value);
        const double x0 = series[0].points.front().bin_start;
        const double x1 = std::max(x0 + 1.0, static_cast<double>(series[0].points.back().bin_start));
        auto tx = [&](double x) { return m + (w - 2 * m) * (x - x0) / (x1 - x0); };
        auto ty = [&](double v) { return h - m - (h - 2 * m) * (v / maxv); };
        svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
        const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b", "#e377c2"};
        for (std::size_t si = 0; si < series.size(); ++si) {
            const char* color = colors[si % 6];
            for (const auto& p : series[si].points)
                if (!p.missing)
                    svg << "  <circle cx=\"" << tx(p.bin_start) << "\" cy=\"" << ty(p.value)
                        << "\" r=\"2\" fill=\"" << color << "\"/>\n";
            if (!series[si].smoothed.empty()) {
                svg << "  <polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
                std::size_t k = 0;
                for (const auto& p : series[si].points)
                    if (!p.missing) {
                        svg << tx(p.bin_start) << ',' << ty(series[si].smoothed[k]) << ' ';
                        ++k;
                    }
                svg << "\"/>\n";
            }
        }
        svg << "</svg>\n";
    }
    std::cout << series.size() << " series x " << series[0].points.size() << " bins -> " << cli.out << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"diachronic corpus toolkit: text reuse, periodization, lexical statistics"};
    app.require_subcommand(1);

    int threads = 0;  // 0 = DIACHRON_THREADS env or hardware concurrency

    std::string in_path, out_path, format = "jsonl";
    auto* ingest_cmd = app.add_subcommand("ingest", "read raw documents into a binary corpus");
    ingest_cmd->add_option("--input", in_path, "input file or directory")->required();
    ingest_cmd->add_option("--format", format, "jsonl | plaintext-with-sidecar");
    ingest_cmd->add_option("--out", out_path, "output corpus file")->required();

    ReuseCli reuse_cli;
    auto* reuse_cmd = app.add_subcommand("reuse", "detect approximate text reuse (boilerplate + skipgram matching)");
    reuse_cmd->add_option("--corpus", reuse_cli.corpus, "corpus file")->required();
    reuse_cmd->add_option("--min-count", reuse_cli.params.boiler_min_count, "boilerplate phrase frequency threshold");
    reuse_cmd->add_option("--phrase-len", reuse_cli.params.phrase_len, "boilerplate phrase length");
    reuse_cmd->add_option("--max-gap", reuse_cli.params.max_gap, "boilerplate conflation gap");
    reuse_cmd->add_option("--top-k", reuse_cli.params.top_k, "frequent 4-gram budget (0 disables conflation)");
    reuse_cmd->add_option("--min-phrase-count", reuse_cli.params.min_phrase_count,
                          "frequency floor for conflated 4-grams");
    reuse_cmd->add_option("--min-words", reuse_cli.params.min_words, "minimum matched words per match");
    reuse_cmd->add_option("--max-skip", reuse_cli.params.max_skip, "non-matching positions tolerated");
    reuse_cmd->add_option("--min-gap-years", reuse_cli.params.min_gap_years, "elapsed-years filter");
    reuse_cmd->add_option("--group-cap", reuse_cli.params.hash_group_cap,
                          "skip collision groups larger than this (0 = unlimited)");
    bool word_order = false;
    reuse_cmd->add_flag("--letters-word-order", word_order, "emit code letters in word order instead of canonical");
    reuse_cmd->add_option("--out", reuse_cli.out, "filtered matches (jsonl)")->required();
    reuse_cmd->add_option("--boilerplate-out", reuse_cli.boilerplate_out, "boilerplate spans (jsonl)");
    reuse_cmd->add_option("--raw-out", reuse_cli.raw_out, "unfiltered matches (jsonl)");

    std::string stats_matches, stats_corpus, stats_boiler;
    auto* stats_cmd = app.add_subcommand("reuse-stats", "summarize a matches file");
    stats_cmd->add_option("--matches", stats_matches, "matches jsonl")->required();
    stats_cmd->add_option("--corpus", stats_corpus, "corpus file")->required();
    stats_cmd->add_option("--boilerplate", stats_boiler, "boilerplate jsonl (adds boilerplate to reused words)");

    std::string hollow_corpus, hollow_matches, hollow_boiler, hollow_out;
    auto* hollow_cmd = app.add_subcommand("hollow", "remove later instances of detected reuse");
    hollow_cmd->add_option("--corpus", hollow_corpus, "corpus file")->required();
    hollow_cmd->add_option("--matches", hollow_matches, "filtered matches jsonl")->required();
    hollow_cmd->add_option("--boilerplate", hollow_boiler, "boilerplate jsonl");
    hollow_cmd->add_option("--out", hollow_out, "output corpus file")->required();

    EmbedCli embed_cli;
    auto* embed_cmd = app.add_subcommand("embed", "train embeddings on a corpus or one time bin");
    embed_cmd->add_option("--corpus", embed_cli.corpus, "corpus file (plain or hollowed)")->required();
    embed_cmd->add_option("--bin-index", embed_cli.bin_index, "train on this bin only (-1 = whole corpus)");
    embed_cmd->add_option("--bin-width", embed_cli.bin_width, "bin width in years");
    embed_cmd->add_option("--merge-head", embed_cli.merge_head, "years fused into the first bin");
    embed_cmd->add_flag("--lemmas", embed_cli.use_lemmas, "train on lemmas");
    embed_cmd->add_option("--dim", embed_cli.train.dim, "embedding dimensionality");
    embed_cmd->add_option("--window", embed_cli.train.window, "context window");
    embed_cmd->add_option("--neg", embed_cli.train.negatives, "negative samples");
    embed_cmd->add_option("--min-word-count", embed_cli.train.min_count, "vocabulary frequency floor");
    embed_cmd->add_option("--epochs", embed_cli.train.epochs, "training epochs");
    embed_cmd->add_option("--lr", embed_cli.train.initial_lr, "initial learning rate");
    embed_cmd->add_option("--seed", embed_cli.train.seed, "random seed");
    embed_cmd->add_option("--out", embed_cli.out, "binary model file")->required();
    embed_cmd->add_option("--text-out", embed_cli.text_out, "plain-text vector export");

    PeriodizeCli per_cli;
    auto* per_cmd = app.add_subcommand("periodize", "cluster time bins by embedding distance");
    per_cmd->add_option("--corpus", per_cli.corpus, "corpus file (plain or hollowed)")->required();
    per_cmd->add_option("--bin-width", per_cli.bin_width, "bin width in years");
    per_cmd->add_option("--merge-head", per_cli.merge_head, "years fused into the first bin");
    per_cmd->add_option("--input", per_cli.input_layer, "plain | lemma");
    per_cmd->add_option("--hollowed", per_cli.hollowed, "annotation: corpus is hollowed");
    per_cmd->add_flag("--raw-distance", per_cli.raw_distance, "skip sqrt(|V|) normalization");
    per_cmd->add_option("--dim", per_cli.config.train.dim, "embedding dimensionality");
    per_cmd->add_option("--window", per_cli.config.train.window, "context window");
    per_cmd->add_option("--neg", per_cli.config.train.negatives, "negative samples");
    per_cmd->add_option("--min-word-count", per_cli.config.train.min_count, "vocabulary frequency floor");
    per_cmd->add_option("--epochs", per_cli.config.train.epochs, "training epochs");
    per_cmd->add_option("--seed", per_cli.config.seed, "random seed");
    per_cmd->add_option("--out", per_cli.out, "dendrogram json")->required();
    per_cmd->add_option("--svg", per_cli.svg, "dendrogram svg");

    LifespanCli life_cli;
    auto* life_cmd = app.add_subcommand("lifespan", "first/last attestation spans per lemma");
    life_cmd->add_option("--corpus", life_cli.corpus, "corpus file")->required();
    life_cmd->add_flag("--hollowed", life_cli.hollowed, "annotation: corpus is hollowed");
    life_cmd->add_option("--window", life_cli.window, "rolling window size in years (0 = whole corpus)");
    life_cmd->add_option("--step", life_cli.step, "rolling window step in years");
    life_cmd->add_option("--exclude-tail-years", life_cli.exclude_tail_years,
                         "drop lemmas first attested in the last N years");
    life_cmd->add_option("--allowlist", life_cli.allowlist_path, "keep only lemmas listed in this file");
    life_cmd->add_option("--out", life_cli.out, "output csv")->required();

    std::string nl_corpus, nl_out;
    int nl_width = 100;
    bool nl_per_bin = false;
    auto* nl_cmd = app.add_subcommand("newlemmas", "new lemmas as a percentage of total lemmas per bin");
    nl_cmd->add_option("--corpus", nl_corpus, "corpus file")->required();
    nl_cmd->add_option("--bin-width", nl_width, "bin width in years");
    nl_cmd->add_flag("--per-bin-total", nl_per_bin, "divide by the bin's own lemma count instead of cumulative");
    nl_cmd->add_option("--out", nl_out, "output csv")->required();

    FreqCli freq_cli;
    auto* freq_cmd = app.add_subcommand("freq", "relative frequency series with LOESS smoothing");
    freq_cmd->add_option("--corpus", freq_cli.corpus, "corpus file")->required();
    freq_cmd->add_option("--terms", freq_cli.terms, "terms file: one series per line")->required();
    freq_cmd->add_option("--bin-width", freq_cli.bin_width, "bin width in years");
    freq_cmd->add_option("--loess", freq_cli.loess, "LOESS span fraction");
    freq_cmd->add_flag("--lemmas", freq_cli.use_lemmas, "count lemmas instead of tokens");
    freq_cmd->add_option("--out", freq_cli.out, "output csv")->required();
    freq_cmd->add_option("--svg", freq_cli.svg, "output chart");

    std::string pipe_config;
    auto* pipe_cmd = app.add_subcommand("pipeline", "run all stages from a config file");
    pipe_cmd->add_option("--config", pipe_config, "key = value config file")->required();
    std::string pipe_input, pipe_out_dir, pipe_terms;
    int pipe_seed = -1;
    pipe_cmd->add_option("--input", pipe_input, "override config input");
    pipe_cmd->add_option("--out-dir", pipe_out_dir, "override config out_dir");
    pipe_cmd->add_option("--terms-file", pipe_terms, "override config terms_file");
    pipe_cmd->add_option("--seed", pipe_seed, "override config seed");

    app.add_option("--threads", threads, "worker threads (0 = DIACHRON_THREADS env or all cores)");
    for (auto* sub : app.get_subcommands({})) sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : static_cast<int>(ExitCode::usage);
    }

    try {
        const int nthreads = resolve_threads(threads);
        if (*ingest_cmd) return cmd_ingest(in_path, format, out_path);
        if (*reuse_cmd) {
            reuse_cli.params.threads = nthreads;
            reuse_cli.params.letter_order = word_order ? LetterOrder::word : LetterOrder::canonical;
            return cmd_reuse(reuse_cli);
        }
        if (*stats_cmd) return cmd_reuse_stats(stats_matches, stats_corpus, stats_boiler);
        if (*hollow_cmd) return cmd_hollow(hollow_corpus, hollow_matches, hollow_boiler, hollow_out);
        if (*embed_cmd) {
            // threads > 1 here selects asynchronous SGD, which is documented
            // as non-deterministic.
            embed_cli.train.threads = nthreads;
            return cmd_embed(embed_cli);
        }
        if (*per_cmd) {
            per_cli.config.threads = nthreads;
            per_cli.config.train.threads = 1;
            return cmd_periodize(per_cli);
        }
        if (*life_cmd) return cmd_lifespan(life_cli);
        if (*nl_cmd) return cmd_newlemmas(nl_corpus, nl_width, nl_per_bin, nl_out);
        if (*freq_cmd) return cmd_freq(freq_cli);
        if (*pipe_cmd) {
            PipelineConfig pc = load_pipeline_config(pipe_config);
            if (!pipe_input.empty()) pc.input = pipe_input;
            if (!pipe_out_dir.empty()) pc.out_dir = pipe_out_dir;
            if (!pipe_terms.empty()) pc.terms_file = pipe_terms;
            if (pipe_seed >= 0) pc.seed = static_cast<std::uint64_t>(pipe_seed);
            pc.threads = nthreads;
            pc.train.threads = 1;
            run_pipeline(pc, std::cout);
            return 0;
        }
        throw UsageError("no subcommand selected");
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return static_cast<int>(ExitCode::usage);
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return static_cast<int>(ExitCode::data);
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return static_cast<int>(ExitCode::internal);
    }
    return 0;
}
