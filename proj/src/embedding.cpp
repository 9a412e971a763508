#include "diachron/embedding.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <thread>

#include "diachron/errors.hpp"

namespace diachron {

namespace {

constexpr int kExpTableSize = 1000;
constexpr float kMaxExp = 6.0f;

/// Precomputed logistic values over [-kMaxExp, kMaxExp), the classic
/// word2vec table. Dot products outside the range saturate.
const float* exp_table() {
    static const std::vector<float> table = [] {
        std::vector<float> t(kExpTableSize);
        for (int i = 0; i < kExpTableSize; ++i) {
            const float x = (static_cast<float>(i) / kExpTableSize * 2 - 1) * kMaxExp;
            const float e = std::exp(x);
            t[i] = e / (e + 1.0f);
        }
        return t;
    }();
    return table.data();
}

float sigmoid_fast(float x) {
    if (x >= kMaxExp) return 1.0f;
    if (x <= -kMaxExp) return 0.0f;
    const int i = static_cast<int>((x + kMaxExp) * (kExpTableSize / kMaxExp / 2.0f));
    return exp_table()[std::clamp(i, 0, kExpTableSize - 1)];
}

struct VocabEntry {
    std::string token;
    std::uint64_t count;
};

}  // namespace

EmbeddingModel::EmbeddingModel(std::vector<std::string> vocab, std::vector<float> matrix, int dim, TrainConfig meta)
    : vocab_(std::move(vocab)), matrix_(std::move(matrix)), dim_(dim), meta_(meta) {
    index_.reserve(vocab_.size() * 2);
    for (std::uint32_t i = 0; i < vocab_.size(); ++i) index_.emplace(vocab_[i], i);
}

std::optional<std::uint32_t> EmbeddingModel::index_of(std::string_view token) const {
    auto it = index_.find(std::string(token));
    return it == index_.end() ? std::nullopt : std::optional<std::uint32_t>(it->second);
}

NegativeSampler::NegativeSampler(std::span<const std::uint64_t> counts, double power) {
    const std::size_t n = counts.size();
    if (n == 0) throw DataError("negative sampler: empty vocabulary");
    std::vector<double> w(n);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        w[i] = std::pow(static_cast<double>(counts[i]), power);
        total += w[i];
    }
    // Vose alias construction with index stacks filled in vocabulary order.
    prob_.assign(n, 0.0);
    alias_.assign(n, 0);
    std::vector<std::uint32_t> small, large;
    std::vector<double> scaled(n);
    for (std::size_t i = 0; i < n; ++i) {
        scaled[i] = w[i] * static_cast<double>(n) / total;
        (scaled[i] < 1.0 ? small : large).push_back(static_cast<std::uint32_t>(i));
    }
    while (!small.empty() && !large.empty()) {
        const std::uint32_t s = small.back();
        small.pop_back();
        const std::uint32_t l = large.back();
        large.pop_back();
        prob_[s] = scaled[s];
        alias_[s] = l;
        scaled[l] = scaled[l] + scaled[s] - 1.0;
        (scaled[l] < 1.0 ? small : large).push_back(l);
    }
    for (std::uint32_t s : small) prob_[s] = 1.0;
    for (std::uint32_t l : large) prob_[l] = 1.0;
}

std::uint32_t NegativeSampler::sample(Rng& rng) const {
    const std::uint32_t col = static_cast<std::uint32_t>(rng.next_below(prob_.size()));
    return rng.next_double() < prob_[col] ? col : alias_[col];
}

namespace {

struct TrainPlan {
    std::vector<VocabEntry> vocab;                     // count desc, token asc
    std::vector<std::vector<std::uint32_t>> id_sents;  // OOV dropped
    std::uint64_t total_words = 0;
};

TrainPlan prepare(std::span<const TokenSpan> sentences, const TrainConfig& config) {
    TrainPlan plan;
    std::unordered_map<std::string_view, std::uint64_t> counts;
    for (const auto& sent : sentences)
        for (const auto& tok : sent) ++counts[tok];

    for (const auto& [tok, c] : counts)
        if (c >= static_cast<std::uint64_t>(config.min_count)) plan.vocab.push_back({std::string(tok), c});
    std::sort(plan.vocab.begin(), plan.vocab.end(), [](const VocabEntry& a, const VocabEntry& b) {
        if (a.count != b.count) return a.count > b.count;
        return a.token < b.token;
    });
    if (plan.vocab.size() < 2) throw DataError("degenerate vocabulary: fewer than 2 tokens reach min_count");

    std::unordered_map<std::string_view, std::uint32_t> ids;
    ids.reserve(plan.vocab.size() * 2);
    for (std::uint32_t i = 0; i < plan.vocab.size(); ++i) ids.emplace(plan.vocab[i].token, i);

    plan.id_sents.reserve(sentences.size());
    for (const auto& sent : sentences) {
        std::vector<std::uint32_t> s;
        s.reserve(sent.size());
        for (const auto& tok : sent) {
            auto it = ids.find(tok);
            if (it != ids.end()) s.push_back(it->second);
        }
        plan.total_words += s.size();
        if (!s.empty()) plan.id_sents.push_back(std::move(s));
    }
    return plan;
}

class CbowTrainer {
public:
    CbowTrainer(const TrainPlan& plan, const TrainConfig& config)
        : plan_(plan), cfg_(config), dim_(config.dim), sampler_(make_counts(plan), 0.75) {
        const std::size_t v = plan.vocab.size();
        syn0_.resize(v * dim_);
        syn1_.assign(v * dim_, 0.0f);
        Rng init(cfg_.seed);
        for (auto& x : syn0_) x = (init.next_float() - 0.5f) / static_cast<float>(dim_);
        total_train_words_ = plan.total_words * static_cast<std::uint64_t>(std::max(1, cfg_.epochs));
    }

    void run(TrainStats* stats) {
        if (stats) stats->epoch_loss.assign(cfg_.epochs, 0.0);
        const int threads = std::max(1, cfg_.threads);
        for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
            double loss_sum = 0.0;
            std::uint64_t loss_n = 0;
            if (threads == 1) {
                Rng rng(mix_seed(cfg_.seed, 0x5eed, static_cast<std::uint64_t>(epoch)));
                for (std::size_t s = 0; s < plan_.id_sents.size(); ++s)
                    train_sentence(plan_.id_sents[s], rng, stats ? &loss_sum : nullptr, &loss_n);
            } else {
                // Asynchronous SGD over sentence shards; documented as
                // non-deterministic and unused by tests.
                std::vector<std::thread> pool;
                for (int w = 0; w < threads; ++w) {
                    pool.emplace_back([&, w]() {
                        Rng rng(mix_seed(cfg_.seed, static_cast<std::uint64_t>(w + 1),
                                         static_cast<std::uint64_t>(epoch)));
                        for (std::size_t s = w; s < plan_.id_sents.size(); s += threads)
                            train_sentence(plan_.id_sents[s], rng, nullptr, nullptr);
                    });
                }
                for (auto& t : pool) t.join();
            }
            if (stats) stats->epoch_loss[epoch] = loss_n ? loss_sum / static_cast<double>(loss_n) : 0.0;
        }
    }

    std::vector<float> take_vectors() { return std::move(syn0_); }

private:
    static std::vector<std::uint64_t> make_counts(const TrainPlan& plan) {
        std::vector<std::uint64_t> c;
        c.reserve(plan.vocab.size());
        for (const auto& e : plan.vocab) c.push_back(e.count);
        return c;
    }

    float current_lr() const {
        const double progress = static_cast<double>(processed_.load(std::memory_order_relaxed)) /
                                static_cast<double>(std::max<std::uint64_t>(1, total_train_words_));
        const float lr = cfg_.initial_lr * static_cast<float>(1.0 - progress);
        return std::max(lr, cfg_.initial_lr * 1e-4f);
    }

    void train_sentence(const std::vector<std::uint32_t>& sent, Rng& rng, double* loss_sum, std::uint64_t* loss_n) {
        std::vector<std::uint32_t> kept;
        const std::vector<std::uint32_t>* words = &sent;
        if (cfg_.subsample_threshold) {
            kept.reserve(sent.size());
            const double t = *cfg_.subsample_threshold;
            for (std::uint32_t id : sent) {
                const double f =
                    static_cast<double>(plan_.vocab[id].count) / static_cast<double>(plan_.total_words);
                const double keep = (std::sqrt(f / t) + 1.0) * t / f;
                if (keep >= 1.0 || rng.next_double() < keep) kept.push_back(id);
            }
            words = &kept;
        }
        const auto& w = *words;
        std::vector<float> h(dim_), grad(dim_);
        for (std::size_t t = 0; t < w.size(); ++t) {
            const float lr = current_lr();
            const int half = 1 + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(cfg_.window)));
            const std::size_t lo = t >= static_cast<std::size_t>(half) ? t - half : 0;
            const std::size_t hi = std::min(w.size() - 1, t + static_cast<std::size_t>(half));
            int ctx = 0;
            std::fill(h.begin(), h.end(), 0.0f);
            for (std::size_t c = lo; c <= hi; ++c) {
                if (c == t) continue;
                const float* v = syn0_.data() + static_cast<std::size_t>(w[c]) * dim_;
                for (int k = 0; k < dim_; ++k) h[k] += v[k];
                ++ctx;
            }
            processed_.fetch_add(1, std::memory_order_relaxed);
            if (ctx == 0) continue;
            const float inv = 1.0f / static_cast<float>(ctx);
            for (int k = 0; k < dim_; ++k) h[k] *= inv;

            std::fill(grad.begin(), grad.end(), 0.0f);
            for (int n = 0; n <= cfg_.negatives; ++n) {
                std::uint32_t target;
                float label;
                if (n == 0) {
                    target = w[t];
                    label = 1.0f;
                } else {
                    target = sampler_.sample(rng);
                    if (target == w[t]) continue;
                    label = 0.0f;
                }
                float* out = syn1_.data() + static_cast<std::size_t>(target) * dim_;
                float dot = 0.0f;
                for (int k = 0; k < dim_; ++k) dot += h[k] * out[k];
                const float p = sigmoid_fast(dot);
                const float g = (label - p) * lr;
                if (loss_sum) {
                    const double pd = std::clamp(static_cast<double>(p), 1e-10, 1.0 - 1e-10);
                    *loss_sum += label > 0.5f ? -std::log(pd) : -std::log(1.0 - pd);
                    ++*loss_n;
                }
                for (int k = 0; k < dim_; ++k) grad[k] += g * out[k];
                for (int k = 0; k < dim_; ++k) out[k] += g * h[k];
            }
            for (std::size_t c = lo; c <= hi; ++c) {
                if (c == t) continue;
                float* v = syn0_.data() + static_cast<std::size_t>(w[c]) * dim_;
                for (int k = 0; k < dim_; ++k) v[k] += grad[k];
            }
        }
    }

    const TrainPlan& plan_;
    TrainConfig cfg_;
    int dim_;
    NegativeSampler sampler_;
    std::vector<float> syn0_, syn1_;
    std::atomic<std::uint64_t> processed_{0};
    std::uint64_t total_train_words_ = 0;
};

}  // namespace

EmbeddingModel train_embeddings(std::span<const TokenSpan> sentences, const TrainConfig& config, TrainStats* stats) {
    if (config.dim < 1 || config.window < 1 || config.negatives < 0 || config.epochs < 1 || config.min_count < 1 ||
        config.initial_lr <= 0.0f)
        throw UsageError("invalid training configuration");

    const TrainPlan plan = prepare(sentences, config);
    CbowTrainer trainer(plan, config);
    trainer.run(stats);

    std::vector<std::string> vocab;
    vocab.reserve(plan.vocab.size());
    for (const auto& e : plan.vocab) vocab.push_back(e.token);
    return EmbeddingModel(std::move(vocab), trainer.take_vectors(), config.dim, config);
}

std::vector<std::string> shared_vocab(const EmbeddingModel& a, const EmbeddingModel& b) {
    std::vector<std::string> va = a.vocab(), vb = b.vocab();
    std::sort(va.begin(), va.end());
    std::sort(vb.begin(), vb.end());
    std::vector<std::string> out;
    std::set_intersection(va.begin(), va.end(), vb.begin(), vb.end(), std::back_inserter(out));
    if (out.empty()) throw DataError("shared_vocab: vocabularies are disjoint");
    return out;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

namespace {
constexpr char kModelMagic[4] = {'D', 'E', 'M', 'B'};
constexpr std::uint32_t kModelVersion = 1;
}  // namespace

void EmbeddingModel::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write model file: " + path.string());
    out.write(kModelMagic, 4);
    const std::uint32_t ver = kModelVersion;
    const std::uint32_t d = static_cast<std::uint32_t>(dim_);
    const std::uint64_t v = vocab_.size();
    const std::uint64_t seed = meta_.seed;
    const std::uint32_t epochs = static_cast<std::uint32_t>(meta_.epochs);
    const std::uint32_t window = static_cast<std::uint32_t>(meta_.window);
    const std::uint32_t negatives = static_cast<std::uint32_t>(meta_.negatives);
    out.write(reinterpret_cast<const char*>(&ver), 4);
    out.write(reinterpret_cast<const char*>(&d), 4);
    out.write(reinterpret_cast<const char*>(&v), 8);
    out.write(reinterpret_cast<const char*>(&seed), 8);
    out.write(reinterpret_cast<const char*>(&epochs), 4);
    out.write(reinterpret_cast<const char*>(&window), 4);
    out.write(reinterpret_cast<const char*>(&negatives), 4);
    for (const auto& tok : vocab_) {
        const std::uint32_t n = static_cast<std::uint32_t>(tok.size());
        out.write(reinterpret_cast<const char*>(&n), 4);
        out.write(tok.data(), n);
    }
    out.write(reinterpret_cast<const char*>(matrix_.data()),
              static_cast<std::streamsize>(matrix_.size() * sizeof(float)));
    if (!out) throw DataError("write failed: " + path.string());
}

EmbeddingModel EmbeddingModel::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open model file: " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kModelMagic, 4) != 0) throw DataError("not a model file: " + path.string());
    std::uint32_t ver = 0, d = 0, epochs = 0, window = 0, negatives = 0;
    std::uint64_t v = 0, seed = 0;
    in.read(reinterpret_cast<char*>(&ver), 4);
    if (ver != kModelVersion) throw DataError("unsupported model version in " + path.string());
    in.read(reinterpret_cast<char*>(&d), 4);
    in.read(reinterpret_cast<char*>(&v), 8);
    in.read(reinterpret_cast<char*>(&seed), 8);
    in.read(reinterpret_cast<char*>(&epochs), 4);
    in.read(reinterpret_cast<char*>(&window), 4);
    in.read(reinterpret_cast<char*>(&negatives), 4);
    std::vector<std::string> vocab;
    vocab.reserve(v);
    for (std::uint64_t i = 0; i < v; ++i) {
        std::uint32_t n = 0;
        in.read(reinterpret_cast<char*>(&n), 4);
        std::string tok(n, '\0');
        in.read(tok.data(), n);
        vocab.push_back(std::move(tok));
    }
    std::vector<float> matrix(v * d);
    in.read(reinterpret_cast<char*>(matrix.data()), static_cast<std::streamsize>(matrix.size() * sizeof(float)));
    if (!in) throw DataError("model file truncated: " + path.string());
    TrainConfig meta;
    meta.dim = static_cast<int>(d);
    meta.seed = seed;
    meta.epochs = static_cast<int>(epochs);
    meta.window = static_cast<int>(window);
    meta.negatives = static_cast<int>(negatives);
    return EmbeddingModel(std::move(vocab), std::move(matrix), static_cast<int>(d), meta);
}

void EmbeddingModel::export_text(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write text export: " + path.string());
    char buf[64];
    for (std::size_t i = 0; i < vocab_.size(); ++i) {
        out << vocab_[i];
        for (float x : row(i)) {
            auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), x);
            out << ' ';
            out.write(buf, end - buf);
        }
        out << '\n';
    }
    if (!out) throw DataError("write failed: " + path.string());
}

}  // namespace diachron
