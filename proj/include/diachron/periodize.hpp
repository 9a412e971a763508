#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "diachron/corpus.hpp"
#include "diachron/embedding.hpp"
#include "diachron/procrustes.hpp"

namespace diachron {

/// Contiguous run of original time bins with the model trained on exactly
/// its concatenated text. node_id follows the usual dendrogram convention:
/// leaves are 0..T-1, the node created by merge step k is T+k.
struct Cluster {
    int first_bin = 0;
    int last_bin = 0;
    int node_id = 0;
    std::vector<TokenSpan> sentences;
    EmbeddingModel model;
};

struct MergeStep {
    int left = 0;   // node id of the chronologically earlier cluster
    int right = 0;  // node id of the adjacent later cluster
    double distance = 0.0;
    int step_index = 0;
};

struct Dendrogram {
    std::vector<TimeBin> leaves;  // chronological order
    std::vector<MergeStep> merges;
    std::vector<double> cumulative;  // running totals of merge distances
};

struct PeriodizeConfig {
    TrainConfig train;
    std::uint64_t seed = 42;  // per-cluster training seeds derive from this
    bool use_lemmas = false;
    bool raw_distance = false;
    int threads = 1;
};

/// Builds the initial clusters: one per bin, each with a model trained on the
/// bin's documents. Every bin must be non-empty.
std::vector<Cluster> initial_clusters(std::span<const Document> docs, std::span<const TimeBin> bins,
                                      const PeriodizeConfig& config);

/// One merge step: evaluates the Procrustes distance for every adjacent pair,
/// picks the argmin (leftmost pair on ties), retrains a model on the
/// concatenated text, and replaces the pair. Returns the pair's position and
/// its distance.
std::pair<std::size_t, double> find_best_merge(std::vector<Cluster>& clusters, const PeriodizeConfig& config);

/// Chronologically-constrained agglomerative clustering over the bins:
/// T-1 adjacent merges recorded with their distances and cumulative heights.
Dendrogram periodize(std::span<const Document> docs, std::span<const TimeBin> bins, const PeriodizeConfig& config);

/// Same, but seeded with pre-trained leaf models (one per bin, in order)
/// instead of training them here.
Dendrogram periodize(std::span<const Document> docs, std::span<const TimeBin> bins, const PeriodizeConfig& config,
                     std::vector<EmbeddingModel> leaf_models);

void save_dendrogram_json(const Dendrogram& d, const std::filesystem::path& path);
Dendrogram load_dendrogram_json(const std::filesystem::path& path);

/// Leaves on the x-axis in chronological order, one join per merge at its
/// cumulative height on the y-axis.
void save_dendrogram_svg(const Dendrogram& d, const std::filesystem::path& path);

}  // namespace diachron
