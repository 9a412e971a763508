#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "diachron/corpus.hpp"

namespace diachron {

/// First/last attestation years and occurrence counts for one lemma.
struct LifespanRecord {
    std::string lemma;
    int first_year = 0;
    int last_year = 0;
    std::uint64_t occurrences = 0;
    int distinct_years = 0;

    int span() const { return last_year - first_year; }
};

struct LifespanOptions {
    bool use_lemmas = true;      // falls back to tokens (with a warning) when lemmas are absent
    int exclude_tail_years = 1;  // drop lemmas first attested within the last N years; 0 keeps all
    std::optional<std::set<std::string>> allowlist;  // keep only these lemmas when present
};

/// Per-lemma lifespans with the discard rules applied: single occurrence,
/// single attestation year, and first attestation inside the corpus tail.
/// Output sorted by lemma.
std::vector<LifespanRecord> lifespans(std::span<const Document> docs, const LifespanOptions& opts = {});

struct HistogramBin {
    int lo = 0;
    int hi = 0;  // half-open
    std::uint64_t count = 0;
};

struct LifespanSummary {
    std::size_t count = 0;
    double mean = 0.0;
    double median = 0.0;
    double mean_fraction_of_span = 0.0;
    std::vector<HistogramBin> histogram;
};

LifespanSummary lifespan_summary(std::span<const LifespanRecord> records, int corpus_span, int hist_bin_width = 100);

struct WindowSummary {
    int window_start = 0;
    int window_end = 0;  // inclusive of the final extended remainder
    LifespanSummary summary;
};

/// Rolling windows of window_years stepped by step_years; the final window is
/// extended to the corpus end when the leftover is shorter than a step.
/// Lifespans are recomputed on the documents inside each window.
std::vector<WindowSummary> windowed_lifespans(std::span<const Document> docs, int window_years = 200,
                                              int step_years = 100, const LifespanOptions& opts = {});

struct NewLemmaPoint {
    int bin_start = 0;
    int bin_end = 0;
    std::uint64_t new_lemmas = 0;
    std::uint64_t denominator = 0;
    double percent = 0.0;
    bool empty_bin = false;
};

/// Percentage of lemmas first attested per bin. The denominator is the
/// cumulative distinct-lemma count through the bin, or the bin's own
/// distinct count when per_bin_denominator is set.
std::vector<NewLemmaPoint> new_lemma_rate(std::span<const Document> docs, int bin_width = 100,
                                          bool per_bin_denominator = false, bool use_lemmas = true);

struct FrequencyPoint {
    int bin_start = 0;
    int bin_end = 0;
    double value = 0.0;
    bool missing = false;  // zero-token bin
};

struct FrequencySeries {
    std::string label;
    std::vector<FrequencyPoint> points;
    std::vector<double> smoothed;  // aligned with non-missing points when filled
};

/// Relative frequency of any term in the set per time bin.
FrequencySeries frequency_series(std::span<const Document> docs, const std::set<std::string>& terms, int bin_width,
                                 bool use_lemmas = false);

/// Classic LOESS: tricube-weighted local polynomial regression of y on x.
/// Returns the fit at every input x (output length equals input length).
/// Degenerate neighborhoods fall back to the weighted mean with a warning.
std::vector<double> loess_smooth(std::span<const double> x, std::span<const double> y, double span_fraction = 0.3,
                                 int degree = 1);

}  // namespace diachron
