#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "diachron/rng.hpp"

namespace diachron {

using TokenSpan = std::span<const std::string>;

struct TrainConfig {
    int dim = 100;
    int window = 5;
    int negatives = 5;
    int min_count = 5;
    int epochs = 5;
    float initial_lr = 0.025f;
    std::uint64_t seed = 1;
    std::optional<float> subsample_threshold;  // no subsampling by default
    int threads = 1;                           // >1 is asynchronous SGD, not deterministic
};

struct TrainStats {
    std::vector<double> epoch_loss;  // mean negative-sampling loss per epoch
};

/// Vocabulary-indexed embedding matrix for one text collection. Rows are the
/// input-side vectors of CBOW training.
class EmbeddingModel {
public:
    EmbeddingModel() = default;
    EmbeddingModel(std::vector<std::string> vocab, std::vector<float> matrix, int dim, TrainConfig meta);

    int dim() const { return dim_; }
    std::size_t vocab_size() const { return vocab_.size(); }
    const std::vector<std::string>& vocab() const { return vocab_; }
    const TrainConfig& meta() const { return meta_; }

    std::span<const float> row(std::size_t i) const { return {matrix_.data() + i * dim_, static_cast<std::size_t>(dim_)}; }
    std::optional<std::uint32_t> index_of(std::string_view token) const;
    const std::vector<float>& matrix() const { return matrix_; }

    void save(const std::filesystem::path& path) const;
    static EmbeddingModel load(const std::filesystem::path& path);
    void export_text(const std::filesystem::path& path) const;

private:
    std::vector<std::string> vocab_;
    std::unordered_map<std::string, std::uint32_t> index_;
    std::vector<float> matrix_;  // |V| x dim row-major
    int dim_ = 0;
    TrainConfig meta_;
};

/// Draws vocabulary indices from the unigram distribution raised to the 3/4
/// power, via an alias table (exact, O(1) per draw).
class NegativeSampler {
public:
    explicit NegativeSampler(std::span<const std::uint64_t> counts, double power = 0.75);
    std::uint32_t sample(Rng& rng) const;

private:
    std::vector<double> prob_;
    std::vector<std::uint32_t> alias_;
};

/// Trains CBOW with negative sampling over sentences (windows never cross
/// sentence boundaries). Deterministic for a fixed seed when threads == 1.
/// Raises DataError when fewer than two tokens reach min_count.
EmbeddingModel train_embeddings(std::span<const TokenSpan> sentences, const TrainConfig& config,
                                TrainStats* stats = nullptr);

/// Lexicographically sorted intersection of the two vocabularies.
/// Raises DataError when the intersection is empty.
std::vector<std::string> shared_vocab(const EmbeddingModel& a, const EmbeddingModel& b);

}  // namespace diachron
