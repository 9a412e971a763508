#include "diachron/periodize.hpp"

#include <algorithm>
#include <fstream>
#include <limits>

#include <nlohmann/json.hpp>

#include "diachron/errors.hpp"
#include "diachron/thread_pool.hpp"

namespace diachron {

namespace {

TrainConfig cluster_train_config(const PeriodizeConfig& config, int first_bin, int last_bin) {
    TrainConfig tc = config.train;
    tc.seed = mix_seed(config.seed, static_cast<std::uint64_t>(first_bin) + 1,
                       static_cast<std::uint64_t>(last_bin) + 1);
    tc.threads = 1;  // determinism inside each training; parallelism is across clusters
    return tc;
}

EmbeddingModel train_cluster_model(const Cluster& c, const PeriodizeConfig& config) {
    const TrainConfig tc = cluster_train_config(config, c.first_bin, c.last_bin);
    return train_embeddings(std::span<const TokenSpan>(c.sentences), tc);
}

}  // namespace

std::vector<Cluster> initial_clusters(std::span<const Document> docs, std::span<const TimeBin> bins,
                                      const PeriodizeConfig& config) {
    if (bins.empty()) throw DataError("periodize: no bins");
    for (std::size_t i = 0; i < bins.size(); ++i)
        if (bins[i].empty())
            throw DataError("periodize: bin " + std::to_string(i) + " [" + std::to_string(bins[i].start_year) + "," +
                            std::to_string(bins[i].end_year) +
                            ") is empty; widen bins or raise merge_head so every bin has text");

    std::vector<Cluster> clusters(bins.size());
    for (std::size_t i = 0; i < bins.size(); ++i) {
        clusters[i].first_bin = static_cast<int>(i);
        clusters[i].last_bin = static_cast<int>(i);
        clusters[i].node_id = static_cast<int>(i);
        clusters[i].sentences = bin_sentences(docs, bins[i], config.use_lemmas);
    }
    parallel_for(clusters.size(), config.threads, [&](std::size_t i) {
        try {
            clusters[i].model = train_cluster_model(clusters[i], config);
        } catch (const std::exception& e) {
            throw DataError("periodize: bin " + std::to_string(i) + ": " + e.what());
        }
    });
    return clusters;
}

std::pair<std::size_t, double> find_best_merge(std::vector<Cluster>& clusters, const PeriodizeConfig& config) {
    if (clusters.size() < 2) throw UsageError("find_best_merge: need at least 2 clusters");

    ProcrustesOptions popts;
    popts.raw = config.raw_distance;
    std::vector<double> dist(clusters.size() - 1);
    parallel_for(dist.size(), config.threads,
                 [&](std::size_t i) { dist[i] = procrustes_distance(clusters[i].model, clusters[i + 1].model, popts); });

    // Argmin with leftmost tie-breaking.
    std::size_t best = 0;
    for (std::size_t i = 1; i < dist.size(); ++i)
        if (dist[i] < dist[best]) best = i;

    int max_node = 0;
    for (const auto& c : clusters) max_node = std::max(max_node, c.node_id);

    Cluster merged;
    merged.first_bin = clusters[best].first_bin;
    merged.last_bin = clusters[best + 1].last_bin;
    merged.node_id = max_node + 1;
    merged.sentences = clusters[best].sentences;
    merged.sentences.insert(merged.sentences.end(), clusters[best + 1].sentences.begin(),
                            clusters[best + 1].sentences.end());
    merged.model = train_cluster_model(merged, config);

    const double d = dist[best];
    clusters[best] = std::move(merged);
    clusters.erase(clusters.begin() + static_cast<std::ptrdiff_t>(best) + 1);
    return {best, d};
}

Dendrogram periodize(std::span<const Document> docs, std::span<const TimeBin> bins, const PeriodizeConfig& config) {
    return periodize(docs, bins, config, {});
}

Dendrogram periodize(std::span<const Document> docs, std::span<const TimeBin> bins, const PeriodizeConfig& config,
                     std::vector<EmbeddingModel> leaf_models) {
    std::vector<Cluster> clusters = leaf_models.empty() ? initial_clusters(docs, bins, config)
                                                        : std::vector<Cluster>(bins.size());
    if (!leaf_models.empty()) {
        if (leaf_models.size() != bins.size())
            throw DataError("periodize: " + std::to_string(leaf_models.size()) + " models for " +
                            std::to_string(bins.size()) + " bins");
        for (std::size_t i = 0; i < bins.size(); ++i) {
            if (bins[i].empty())
                throw DataError("periodize: bin " + std::to_string(i) + " is empty; widen bins or raise merge_head");
            clusters[i].first_bin = static_cast<int>(i);
            clusters[i].last_bin = static_cast<int>(i);
            clusters[i].node_id = static_cast<int>(i);
            clusters[i].sentences = bin_sentences(docs, bins[i], config.use_lemmas);
            clusters[i].model = std::move(leaf_models[i]);
        }
    }

    Dendrogram out;
    out.leaves.assign(bins.begin(), bins.end());
    double running = 0.0;
    int step = 0;
    while (clusters.size() > 1) {
        // Node ids of the pair about to merge must be captured before the
        // merge replaces them.
        std::vector<int> ids;
        ids.reserve(clusters.size());
        for (const auto& c : clusters) ids.push_back(c.node_id);

        auto [pos, d] = find_best_merge(clusters, config);
        MergeStep m;
        m.left = ids[pos];
        m.right = ids[pos + 1];
        m.distance = d;
        m.step_index = step++;
        running += d;
        out.merges.push_back(m);
        out.cumulative.push_back(running);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

namespace {
using nlohmann::json;
}

void save_dendrogram_json(const Dendrogram& d, const std::filesystem::path& path) {
    json j;
    j["leaves"] = json::array();
    for (const auto& leaf : d.leaves) j["leaves"].push_back({{"start", leaf.start_year}, {"end", leaf.end_year}});
    j["merges"] = json::array();
    for (const auto& m : d.merges)
        j["merges"].push_back({{"left", m.left}, {"right", m.right}, {"distance", m.distance}});
    j["cumulative"] = d.cumulative;
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write dendrogram file: " + path.string());
    out << j.dump(2) << '\n';
    if (!out) throw DataError("write failed: " + path.string());
}

Dendrogram load_dendrogram_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open dendrogram file: " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw DataError(path.string() + ": invalid JSON (" + e.what() + ")");
    }
    Dendrogram d;
    for (const auto& leaf : j.at("leaves")) {
        TimeBin b;
        b.start_year = leaf.at("start").get<int>();
        b.end_year = leaf.at("end").get<int>();
        d.leaves.push_back(b);
    }
    int step = 0;
    for (const auto& m : j.at("merges")) {
        MergeStep s;
        s.left = m.at("left").get<int>();
        s.right = m.at("right").get<int>();
        s.distance = m.at("distance").get<double>();
        s.step_index = step++;
        d.merges.push_back(s);
    }
    d.cumulative = j.at("cumulative").get<std::vector<double>>();
    return d;
}

void save_dendrogram_svg(const Dendrogram& d, const std::filesystem::path& path) {
    const std::size_t t = d.leaves.size();
    const double margin = 50.0, spacing = 80.0, plot_h = 360.0;
    const double width = margin * 2 + spacing * (t > 0 ? static_cast<double>(t - 1) : 0.0);
    const double height = margin * 2 + plot_h + 20.0;
    const double base_y = margin + plot_h;
    const double max_h = d.cumulative.empty() ? 1.0 : std::max(d.cumulative.back(), 1e-12);

    struct Node {
        double x;
        double y;
    };
    std::vector<Node> nodes(t + d.merges.size());
    for (std::size_t i = 0; i < t; ++i) nodes[i] = {margin + spacing * static_cast<double>(i), base_y};

    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write SVG file: " + path.string());
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
    out << "  <g stroke=\"#333\" fill=\"none\" stroke-width=\"1.5\">\n";
    for (std::size_t k = 0; k < d.merges.size(); ++k) {
        const auto& m = d.merges[k];
        if (m.left < 0 || m.right < 0 || static_cast<std::size_t>(m.left) >= t + k ||
            static_cast<std::size_t>(m.right) >= t + k)
            throw DataError("dendrogram merge " + std::to_string(k) + " references unknown node");
        const Node l = nodes[static_cast<std::size_t>(m.left)];
        const Node r = nodes[static_cast<std::size_t>(m.right)];
        const double y = base_y - plot_h * (d.cumulative[k] / max_h);
        out << "    <polyline points=\"" << l.x << ',' << l.y << ' ' << l.x << ',' << y << ' ' << r.x << ',' << y
            << ' ' << r.x << ',' << r.y << "\"/>\n";
        nodes[t + k] = {(l.x + r.x) / 2.0, y};
    }
    out << "  </g>\n";
    out << "  <g font-family=\"sans-serif\" font-size=\"11\" fill=\"#000\" text-anchor=\"middle\">\n";
    for (std::size_t i = 0; i < t; ++i) {
        out << "    <text x=\"" << nodes[i].x << "\" y=\"" << base_y + 16.0 << "\">" << d.leaves[i].start_year << "-"
            << d.leaves[i].end_year << "</text>\n";
    }
    out << "  </g>\n</svg>\n";
    if (!out) throw DataError("write failed: " + path.string());
}

}  // namespace diachron
