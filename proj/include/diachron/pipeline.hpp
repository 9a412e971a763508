#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>

#include "diachron/corpus.hpp"
#include "diachron/embedding.hpp"
#include "diachron/reuse.hpp"

namespace diachron {

/// Every knob of the eight-stage pipeline. Values come from a key=value
/// config file with CLI flags overriding.
struct PipelineConfig {
    // Paths
    std::filesystem::path input;
    IngestFormat input_format = IngestFormat::jsonl;
    std::filesystem::path out_dir = "out";
    std::filesystem::path terms_file;  // optional; enables the frequency stage output

    // Reuse parameters
    ReuseParams reuse;

    // Binning
    int bin_width = 100;
    int merge_head = 200;
    bool use_hollowed = true;  // embed/periodize on the hollowed corpus
    bool use_lemmas = false;

    // Embedding
    TrainConfig train;

    // Lexical statistics
    int lifespan_window = 0;  // 0 = whole corpus, otherwise rolling windows
    int lifespan_step = 100;
    int exclude_tail_years = 1;
    int newlemma_bin_width = 100;
    int freq_bin_width = 50;
    double loess_span = 0.3;
    bool lexstats_hollowed = false;

    std::uint64_t seed = 42;
    int threads = 1;
};

/// Parses "key = value" lines ('#' comments allowed). Unknown keys raise
/// UsageError so typos never silently change an experiment.
PipelineConfig load_pipeline_config(const std::filesystem::path& path);

/// Runs the stages in dependency order:
/// ingest, boilerplate, reuse, filter, hollow, embed, periodize, lexstats.
/// Stages whose parameters, inputs, and outputs all match the manifest are
/// skipped. The manifest (manifest.json in out_dir) records every artifact
/// with a content hash.
void run_pipeline(const PipelineConfig& config, std::ostream& log);

/// FNV-1a over the file bytes, as a fixed-width hex string.
std::string file_hash(const std::filesystem::path& path);

/// Shortest round-trip decimal form, identical across runs.
std::string format_double(double v);

}  // namespace diachron
