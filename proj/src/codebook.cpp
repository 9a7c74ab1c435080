#include "dkvb/codebook.hpp"

#include <cmath>
#include <limits>
#include <vector>

#include "dkvb/common.hpp"

namespace dkvb {

double expiry_threshold(const EmaConfig& cfg, int K) {
    if (K <= 0) {
        throw ConfigError("expiry_threshold: K must be positive");
    }
    return cfg.expiry_fraction * cfg.batch_size * cfg.spatial_h *
           cfg.spatial_w / static_cast<double>(K);
}

Codebook make_codebook(int K, int d_key, int d_value) {
    if (K <= 0 || d_key <= 0 || d_value <= 0) {
        throw ConfigError("make_codebook: K, d_key, d_value must be positive");
    }
    Codebook cb;
    cb.keys = Eigen::MatrixXf::Zero(d_key, K);
    cb.values = Eigen::MatrixXf::Zero(d_value, K);
    cb.ema_count = Eigen::VectorXf::Zero(K);
    cb.ema_sum = Eigen::MatrixXf::Zero(d_key, K);
    return cb;
}

namespace {

// Install a head as key i with fresh accumulators. The sum is copied from
// the stored f32 key (not the double source) so sum/count reproduces the key
// bit-exactly.
void install_key(Codebook& cb, int i, const Eigen::VectorXd& head) {
    cb.keys.col(i) = head.cast<float>();
    cb.ema_sum.col(i) = cb.keys.col(i);
    cb.ema_count[i] = 1.0f;
}

void check_finite(const Eigen::VectorXd& v, const char* what) {
    if (!v.allFinite()) {
        throw DataError(std::string(what) + ": non-finite input");
    }
}

}  // namespace

void seed_keys_from_batch(Codebook& cb, const Eigen::MatrixXd& heads,
                          std::uint64_t rng_seed) {
    if (cb.initialized) {
        throw StateError("seed_keys_from_batch: codebook already initialized");
    }
    if (cb.frozen) {
        throw StateError("seed_keys_from_batch: codebook is frozen");
    }
    const int B = static_cast<int>(heads.cols());
    if (B == 0) {
        throw DataError("seed_keys_from_batch: empty batch");
    }
    if (heads.rows() != cb.d_key()) {
        throw ShapeError("seed_keys_from_batch: head dimension mismatch");
    }
    const int K = cb.K();
    Rng rng(rng_seed);
    if (B >= K) {
        // Enough candidates: draw distinct positions.
        std::vector<int> idx(static_cast<std::size_t>(B));
        for (int i = 0; i < B; ++i) idx[static_cast<std::size_t>(i)] = i;
        rng.shuffle(idx);
        for (int i = 0; i < K; ++i) {
            install_key(cb, i, heads.col(idx[static_cast<std::size_t>(i)]));
        }
    } else {
        for (int i = 0; i < K; ++i) {
            install_key(cb, i,
                        heads.col(static_cast<int>(rng.below(
                            static_cast<std::uint64_t>(B)))));
        }
    }
    cb.initialized = true;
}

QuantizeResult quantize(const Codebook& cb, const Eigen::VectorXd& head) {
    if (!cb.initialized) {
        throw StateError("quantize: codebook keys not initialized");
    }
    if (head.size() != cb.d_key()) {
        throw ShapeError("quantize: head dimension mismatch");
    }
    check_finite(head, "quantize");
    const int K = cb.K();
    const int d = cb.d_key();
    int best = 0;
    double best_sq = std::numeric_limits<double>::infinity();
    for (int i = 0; i < K; ++i) {
        // Abandoning a key once its partial sum reaches the incumbent can
        // never change the winner (sums of squares only grow) and keeps the
        // lowest-index tie-break intact, since only strictly smaller
        // distances ever displace the incumbent.
        double sq = 0.0;
        for (int j = 0; j < d; ++j) {
            const double diff = head[j] - static_cast<double>(cb.keys(j, i));
            sq += diff * diff;
            if (sq >= best_sq) break;
        }
        if (sq < best_sq) {  // strict: ties keep the lowest index
            best_sq = sq;
            best = i;
        }
    }
    return {best, std::sqrt(best_sq)};
}

void ema_update(Codebook& cb, const Eigen::MatrixXd& heads,
                const EmaConfig& cfg) {
    if (!cb.initialized) {
        throw StateError("ema_update: codebook keys not initialized");
    }
    if (cb.frozen) {
        throw StateError("ema_update: codebook is frozen");
    }
    if (heads.rows() != cb.d_key()) {
        throw ShapeError("ema_update: head dimension mismatch");
    }
    const int K = cb.K();
    const int d = cb.d_key();
    const int B = static_cast<int>(heads.cols());

    // Assignments against the pre-update keys.
    Eigen::VectorXd n = Eigen::VectorXd::Zero(K);
    Eigen::MatrixXd s = Eigen::MatrixXd::Zero(d, K);
    for (int b = 0; b < B; ++b) {
        const int i = quantize(cb, heads.col(b)).index;
        n[i] += 1.0;
        s.col(i) += heads.col(b);
    }

    const double g = cfg.gamma;
    for (int i = 0; i < K; ++i) {
        const double count =
            g * static_cast<double>(cb.ema_count[i]) + (1.0 - g) * n[i];
        cb.ema_count[i] = static_cast<float>(count);
        for (int j = 0; j < d; ++j) {
            const double sum =
                g * static_cast<double>(cb.ema_sum(j, i)) + (1.0 - g) * s(j, i);
            cb.ema_sum(j, i) = static_cast<float>(sum);
        }
        // Recompute the key from the stored accumulators so the identity
        // key == sum / count holds bit-exactly in f32. Keys with no heads
        // this batch are left untouched: scaling numerator and denominator
        // by the same gamma cannot move the ratio, and skipping the write
        // keeps them bit-identical rather than re-rounded.
        if (n[i] > 0.0 && cb.ema_count[i] > 0.0f) {
            for (int j = 0; j < d; ++j) {
                cb.keys(j, i) = static_cast<float>(
                    static_cast<double>(cb.ema_sum(j, i)) /
                    static_cast<double>(cb.ema_count[i]));
            }
        }
    }
}

void expire_and_reinit(Codebook& cb, const Eigen::MatrixXd& heads,
                       const EmaConfig& cfg, std::uint64_t rng_seed) {
    if (!cb.initialized) {
        throw StateError("expire_and_reinit: codebook keys not initialized");
    }
    if (cb.frozen) {
        throw StateError("expire_and_reinit: codebook is frozen");
    }
    if (heads.rows() != cb.d_key()) {
        throw ShapeError("expire_and_reinit: head dimension mismatch");
    }
    const int B = static_cast<int>(heads.cols());
    if (B == 0) {
        throw DataError("expire_and_reinit: empty batch");
    }
    const double threshold = expiry_threshold(cfg, cb.K());
    Rng rng(rng_seed);
    for (int i = 0; i < cb.K(); ++i) {
        if (static_cast<double>(cb.ema_count[i]) < threshold) {
            install_key(
                cb, i,
                heads.col(static_cast<int>(rng.below(
                    static_cast<std::uint64_t>(B)))));
        }
    }
}

void freeze(Codebook& cb) {
    if (!cb.initialized) {
        throw StateError("freeze: codebook keys not initialized");
    }
    cb.frozen = true;
}

}  // namespace dkvb
