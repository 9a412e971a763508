#pragma once

#include "diachron/embedding.hpp"

namespace diachron {

struct ProcrustesOptions {
    bool raw = false;        // skip the 1/sqrt(|V_shared|) normalization
    bool normalize_vectors = true;
    bool warn_small_vocab = true;
};

/// Orthogonal-Procrustes distance between two embedding models.
///
/// Both matrices are restricted to the shared vocabulary in identical
/// (lexicographic) column order, word vectors are unit-normalized, and the
/// best rotation R = U V^T is taken from the SVD of W2 W1^T. Returns
/// ||R W1 - W2||_F / sqrt(|V_shared|) (or the raw norm). Accumulation is in
/// double precision regardless of the models' float storage.
double procrustes_distance(const EmbeddingModel& a, const EmbeddingModel& b, const ProcrustesOptions& opts = {});

}  // namespace diachron
