#include "diachron/procrustes.hpp"

#include <cmath>
#include <iostream>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "diachron/errors.hpp"

namespace diachron {

double procrustes_distance(const EmbeddingModel& a, const EmbeddingModel& b, const ProcrustesOptions& opts) {
    if (a.dim() != b.dim())
        throw DataError("procrustes_distance: dimensionality mismatch (" + std::to_string(a.dim()) + " vs " +
                        std::to_string(b.dim()) + ")");
    const std::vector<std::string> shared = shared_vocab(a, b);  // raises on empty intersection
    const int d = a.dim();
    const std::size_t n = shared.size();
    if (opts.warn_small_vocab && n < static_cast<std::size_t>(d))
        std::cerr << "warning: shared vocabulary (" << n << ") smaller than embedding dimension (" << d
                  << "); distance may be unstable\n";

    // d x |V_shared| matrices, one word vector per column.
    Eigen::MatrixXd w1(d, static_cast<Eigen::Index>(n)), w2(d, static_cast<Eigen::Index>(n));
    for (std::size_t j = 0; j < n; ++j) {
        const auto ra = a.row(*a.index_of(shared[j]));
        const auto rb = b.row(*b.index_of(shared[j]));
        for (int k = 0; k < d; ++k) {
            w1(k, static_cast<Eigen::Index>(j)) = static_cast<double>(ra[k]);
            w2(k, static_cast<Eigen::Index>(j)) = static_cast<double>(rb[k]);
        }
    }
    if (opts.normalize_vectors) {
        for (Eigen::Index j = 0; j < w1.cols(); ++j) {
            const double n1 = w1.col(j).norm();
            const double n2 = w2.col(j).norm();
            if (n1 > 0) w1.col(j) /= n1;
            if (n2 > 0) w2.col(j) /= n2;
        }
    }

    const Eigen::MatrixXd m = w2 * w1.transpose();  // d x d
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Eigen::MatrixXd r = svd.matrixU() * svd.matrixV().transpose();
    if (!r.allFinite()) {
        throw DataError("procrustes_distance: SVD produced non-finite rotation (|V_shared|=" + std::to_string(n) +
                        ", ||M||_F=" + std::to_string(m.norm()) + ")");
    }
    const double dist = (r * w1 - w2).norm();
    return opts.raw ? dist : dist / std::sqrt(static_cast<double>(n));
}

}  // namespace diachron
