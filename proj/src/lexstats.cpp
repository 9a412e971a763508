#include "diachron/lexstats.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <map>
#include <numeric>

#include "diachron/errors.hpp"

namespace diachron {

namespace {

/// Chooses the lemma layer for the whole corpus: lemmas only when every
/// document carries them, tokens otherwise.
bool resolve_use_lemmas(std::span<const Document> docs, bool want_lemmas) {
    if (!want_lemmas) return false;
    for (const auto& d : docs)
        if (!d.has_lemmas() && !d.tokens.empty()) {  // fully hollowed docs are vacuously fine
            std::cerr << "warning: document " << d.doc_id << " has no lemmas; falling back to tokens\n";
            return false;
        }
    return true;
}

const std::vector<std::string>& doc_layer(const Document& d, bool use_lemmas) {
    return use_lemmas ? d.lemmas : d.tokens;
}

}  // namespace

std::vector<LifespanRecord> lifespans(std::span<const Document> docs, const LifespanOptions& opts) {
    if (docs.empty()) return {};
    const bool use_lemmas = resolve_use_lemmas(docs, opts.use_lemmas);

    int max_year = docs[0].death_year;
    for (const auto& d : docs) max_year = std::max(max_year, d.death_year);

    // Stream documents in year order so distinct-year counting needs only
    // the previous year per lemma.
    std::vector<std::size_t> order(docs.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (docs[a].death_year != docs[b].death_year) return docs[a].death_year < docs[b].death_year;
        return docs[a].doc_id < docs[b].doc_id;
    });

    struct Acc {
        int first = 0, last = 0, last_seen = -1, distinct = 0;
        std::uint64_t occ = 0;
    };
    std::map<std::string, Acc> acc;
    for (std::size_t idx : order) {
        const Document& d = docs[idx];
        const int y = d.death_year;
        for (const auto& w : doc_layer(d, use_lemmas)) {
            auto [it, fresh] = acc.try_emplace(w);
            Acc& a = it->second;
            if (fresh) a.first = y;
            a.last = y;
            a.occ += 1;
            if (a.last_seen != y) {
                a.last_seen = y;
                a.distinct += 1;
            }
        }
    }

    std::vector<LifespanRecord> out;
    for (const auto& [lemma, a] : acc) {
        if (a.occ < 2 || a.distinct < 2) continue;
        if (opts.exclude_tail_years > 0 && a.first > max_year - opts.exclude_tail_years) continue;
        if (opts.allowlist && !opts.allowlist->count(lemma)) continue;
        LifespanRecord r;
        r.lemma = lemma;
        r.first_year = a.first;
        r.last_year = a.last;
        r.occurrences = a.occ;
        r.distinct_years = a.distinct;
        out.push_back(std::move(r));
    }
    return out;  // std::map iteration is already lemma-sorted
}

LifespanSummary lifespan_summary(std::span<const LifespanRecord> records, int corpus_span, int hist_bin_width) {
    if (records.empty()) throw DataError("lifespan_summary: no records");
    if (hist_bin_width <= 0) throw UsageError("histogram bin width must be positive");

    LifespanSummary s;
    s.count = records.size();
    std::vector<int> spans;
    spans.reserve(records.size());
    double sum = 0.0;
    int max_span = 0;
    for (const auto& r : records) {
        spans.push_back(r.span());
        sum += r.span();
        max_span = std::max(max_span, r.span());
    }
    s.mean = sum / static_cast<double>(records.size());
    std::sort(spans.begin(), spans.end());
    const std::size_t n = spans.size();
    s.median = n % 2 == 1 ? spans[n / 2] : (spans[n / 2 - 1] + spans[n / 2]) / 2.0;
    s.mean_fraction_of_span = corpus_span > 0 ? s.mean / static_cast<double>(corpus_span) : 0.0;

    const int nbins = max_span / hist_bin_width + 1;
    s.histogram.resize(static_cast<std::size_t>(nbins));
    for (int b = 0; b < nbins; ++b) {
        s.histogram[static_cast<std::size_t>(b)].lo = b * hist_bin_width;
        s.histogram[static_cast<std::size_t>(b)].hi = (b + 1) * hist_bin_width;
    }
    for (int sp : spans) ++s.histogram[static_cast<std::size_t>(sp / hist_bin_width)].count;
    return s;
}

std::vector<WindowSummary> windowed_lifespans(std::span<const Document> docs, int window_years, int step_years,
                                              const LifespanOptions& opts) {
    if (window_years <= 0 || step_years <= 0) throw UsageError("window and step must be positive");
    if (docs.empty()) return {};
    int min_year = docs[0].death_year, max_year = docs[0].death_year;
    for (const auto& d : docs) {
        min_year = std::min(min_year, d.death_year);
        max_year = std::max(max_year, d.death_year);
    }
    if (max_year - min_year + 1 < window_years)
        throw DataError("corpus span " + std::to_string(max_year - min_year + 1) + " is shorter than the window (" +
                        std::to_string(window_years) + ")");

    std::vector<std::pair<int, int>> windows;  // [start, end] inclusive
    for (int start = min_year; start + window_years <= max_year + 1; start += step_years)
        windows.emplace_back(start, start + window_years - 1);
    if (!windows.empty() && windows.back().second < max_year) windows.back().second = max_year;

    std::vector<WindowSummary> out;
    for (auto [ws, we] : windows) {
        std::vector<Document> inside;
        for (const auto& d : docs)
            if (d.death_year >= ws && d.death_year <= we) inside.push_back(d);
        WindowSummary w;
        w.window_start = ws;
        w.window_end = we;
        const auto records = lifespans(inside, opts);
        if (!records.empty()) w.summary = lifespan_summary(records, we - ws);
        out.push_back(std::move(w));
    }
    return out;
}

std::vector<NewLemmaPoint> new_lemma_rate(std::span<const Document> docs, int bin_width, bool per_bin_denominator,
                                          bool use_lemmas) {
    const bool lemmas = resolve_use_lemmas(docs, use_lemmas);
    const std::vector<TimeBin> bins = bin_by_period(docs, bin_width, 0);

    // First attestation year per lemma.
    std::map<std::string, int> first_year;
    for (const auto& d : docs)
        for (const auto& w : doc_layer(d, lemmas)) {
            auto [it, fresh] = first_year.try_emplace(w, d.death_year);
            if (!fresh && d.death_year < it->second) it->second = d.death_year;
        }

    std::vector<NewLemmaPoint> out;
    out.reserve(bins.size());
    std::uint64_t cumulative = 0;
    for (const auto& b : bins) {
        NewLemmaPoint p;
        p.bin_start = b.start_year;
        p.bin_end = b.end_year;
        p.empty_bin = b.empty();

        std::uint64_t fresh = 0;
        for (const auto& [lemma, y] : first_year)
            if (y >= b.start_year && y < b.end_year) ++fresh;
        p.new_lemmas = fresh;
        cumulative += fresh;

        if (per_bin_denominator) {
            std::set<std::string> in_bin;
            for (std::size_t idx : b.doc_indices)
                for (const auto& w : doc_layer(docs[idx], lemmas)) in_bin.insert(w);
            p.denominator = in_bin.size();
        } else {
            p.denominator = cumulative;
        }
        p.percent = p.denominator ? 100.0 * static_cast<double>(p.new_lemmas) / static_cast<double>(p.denominator)
                                  : 0.0;
        out.push_back(std::move(p));
    }
    return out;
}

FrequencySeries frequency_series(std::span<const Document> docs, const std::set<std::string>& terms, int bin_width,
                                 bool use_lemmas) {
    const bool lemmas = use_lemmas && resolve_use_lemmas(docs, use_lemmas);
    const std::vector<TimeBin> bins = bin_by_period(docs, bin_width, 0);

    FrequencySeries series;
    {
        std::string label;
        for (const auto& t : terms) {
            if (!label.empty()) label += '+';
            label += t;
        }
        series.label = std::move(label);
    }
    for (const auto& b : bins) {
        std::uint64_t total = 0, hits = 0;
        for (std::size_t idx : b.doc_indices) {
            for (const auto& w : doc_layer(docs[idx], lemmas)) {
                ++total;
                if (terms.count(w)) ++hits;
            }
        }
        FrequencyPoint p;
        p.bin_start = b.start_year;
        p.bin_end = b.end_year;
        if (total == 0) {
            p.missing = true;
        } else {
            p.value = static_cast<double>(hits) / static_cast<double>(total);
        }
        series.points.push_back(p);
    }
    return series;
}

std::vector<double> loess_smooth(std::span<const double> x, std::span<const double> y, double span_fraction,
                                 int degree) {
    const std::size_t n = x.size();
    if (n != y.size()) throw UsageError("loess: x and y lengths differ");
    if (n < 3) throw DataError("loess: need at least 3 points");
    if (!(span_fraction > 0.0 && span_fraction <= 1.0)) throw UsageError("loess: span must be in (0, 1]");
    if (degree < 0 || degree > 8) throw UsageError("loess: degree must be in [0, 8]");

    const std::size_t q = std::min(n, static_cast<std::size_t>(std::ceil(span_fraction * static_cast<double>(n))));
    bool warned = false;
    std::vector<double> out(n);

    std::vector<std::size_t> idx(n);
    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i) {
        // q nearest points by |x - x_i|, ties broken by index.
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
            const double da = std::abs(x[a] - x[i]), db = std::abs(x[b] - x[i]);
            if (da != db) return da < db;
            return a < b;
        });
        const std::size_t use = std::max<std::size_t>(q, static_cast<std::size_t>(degree) + 1);
        const std::size_t m = std::min(n, use);
        const double h = std::abs(x[idx[m - 1]] - x[i]);

        double wsum = 0.0;
        for (std::size_t k = 0; k < m; ++k) {
            const double u = h > 0 ? std::abs(x[idx[k]] - x[i]) / h : 0.0;
            const double t1 = 1.0 - u * u * u;
            w[k] = h > 0 ? (u < 1.0 ? t1 * t1 * t1 : 0.0) : 1.0;
            wsum += w[k];
        }

        auto weighted_mean = [&]() {
            double num = 0.0;
            for (std::size_t k = 0; k < m; ++k) num += w[k] * y[idx[k]];
            return wsum > 0 ? num / wsum : y[i];
        };

        if (h == 0.0 || degree == 0) {
            if (h == 0.0 && !warned) {
                std::cerr << "warning: loess neighborhood degenerate at x=" << x[i] << "; using weighted mean\n";
                warned = true;
            }
            out[i] = weighted_mean();
            continue;
        }

        // Weighted least squares in the shifted basis (x - x_i)^p; the fit
        // at x_i is the intercept. Normal equations, Gaussian elimination.
        const int p = degree + 1;
        std::vector<double> a(static_cast<std::size_t>(p) * p, 0.0), rhs(static_cast<std::size_t>(p), 0.0);
        for (std::size_t k = 0; k < m; ++k) {
            if (w[k] == 0.0) continue;
            const double dx = x[idx[k]] - x[i];
            double xp[16];
            xp[0] = 1.0;
            for (int r = 1; r < p; ++r) xp[r] = xp[r - 1] * dx;
            for (int r = 0; r < p; ++r) {
                for (int c = 0; c < p; ++c) a[static_cast<std::size_t>(r) * p + c] += w[k] * xp[r] * xp[c];
                rhs[static_cast<std::size_t>(r)] += w[k] * xp[r] * y[idx[k]];
            }
        }
        bool singular = false;
        for (int col = 0; col < p && !singular; ++col) {
            int piv = col;
            for (int r = col + 1; r < p; ++r)
                if (std::abs(a[static_cast<std::size_t>(r) * p + col]) >
                    std::abs(a[static_cast<std::size_t>(piv) * p + col]))
                    piv = r;
            if (std::abs(a[static_cast<std::size_t>(piv) * p + col]) < 1e-12) {
                singular = true;
                break;
            }
            if (piv != col) {
                for (int c = 0; c < p; ++c)
                    std::swap(a[static_cast<std::size_t>(piv) * p + c], a[static_cast<std::size_t>(col) * p + c]);
                std::swap(rhs[static_cast<std::size_t>(piv)], rhs[static_cast<std::size_t>(col)]);
            }
            for (int r = col + 1; r < p; ++r) {
                const double f = a[static_cast<std::size_t>(r) * p + col] / a[static_cast<std::size_t>(col) * p + col];
                for (int c = col; c < p; ++c)
                    a[static_cast<std::size_t>(r) * p + c] -= f * a[static_cast<std::size_t>(col) * p + c];
                rhs[static_cast<std::size_t>(r)] -= f * rhs[static_cast<std::size_t>(col)];
            }
        }
        if (singular) {
            if (!warned) {
                std::cerr << "warning: loess local fit singular at x=" << x[i] << "; using weighted mean\n";
                warned = true;
            }
            out[i] = weighted_mean();
            continue;
        }
        std::vector<double> beta(static_cast<std::size_t>(p), 0.0);
        for (int r = p - 1; r >= 0; --r) {
            double v = rhs[static_cast<std::size_t>(r)];
            for (int c = r + 1; c < p; ++c) v -= a[static_cast<std::size_t>(r) * p + c] * beta[static_cast<std::size_t>(c)];
            beta[static_cast<std::size_t>(r)] = v / a[static_cast<std::size_t>(r) * p + r];
        }
        out[i] = beta[0];
    }
    return out;
}

}  // namespace diachron
