#include "dkvb/bottleneck.hpp"

#include <string>
#include <unordered_map>

#include "dkvb/common.hpp"
#include "dkvb/math.hpp"

namespace dkvb {

void BottleneckConfig::validate() const {
    if (C < 1 || K < 1 || d_key < 1 || d_value < 1 || num_classes < 1 ||
        m_z < 1 || batch_size < 1 || key_init_epochs < 1) {
        throw ConfigError("bottleneck config: all counts must be >= 1");
    }
    if (d_value != num_classes) {
        throw ConfigError(
            "bottleneck config: the weight-free decoder requires d_value == "
            "num_classes (got " +
            std::to_string(d_value) + " vs " + std::to_string(num_classes) +
            ")");
    }
    if (!(gamma > 0.0 && gamma < 1.0)) {
        throw ConfigError("bottleneck config: gamma must lie in (0, 1)");
    }
    if (expiry_fraction < 0.0) {
        throw ConfigError("bottleneck config: expiry_fraction must be >= 0");
    }
    if (!(lr_values > 0.0)) {
        throw ConfigError("bottleneck config: lr_values must be positive");
    }
    if (label_smoothing < 0.0 || label_smoothing >= 1.0) {
        throw ConfigError("bottleneck config: label_smoothing must be in [0, 1)");
    }
    if (identity_projection && d_key != m_z) {
        throw ConfigError(
            "bottleneck config: identity projection requires d_key == m_z");
    }
}

EmaConfig BottleneckConfig::ema() const {
    EmaConfig cfg;
    cfg.gamma = gamma;
    cfg.expiry_fraction = expiry_fraction;
    cfg.batch_size = batch_size;
    return cfg;
}

bool BottleneckModel::keys_frozen() const {
    for (const auto& cb : codebooks) {
        if (!cb.frozen) return false;
    }
    return !codebooks.empty();
}

bool BottleneckModel::keys_initialized() const {
    for (const auto& cb : codebooks) {
        if (!cb.initialized) return false;
    }
    return !codebooks.empty();
}

BottleneckModel make_model(const BottleneckConfig& cfg) {
    cfg.validate();
    BottleneckModel model;
    model.config = cfg;
    model.bank = cfg.identity_projection
                     ? identity_projection_bank(cfg.C, cfg.m_z)
                     : build_projection_bank(
                           cfg.C, cfg.d_key, cfg.m_z,
                           derive_seed(cfg.seed, "projection-bank"));
    model.codebooks.reserve(static_cast<std::size_t>(cfg.C));
    model.utilization.reserve(static_cast<std::size_t>(cfg.C));
    for (int c = 0; c < cfg.C; ++c) {
        model.codebooks.push_back(make_codebook(cfg.K, cfg.d_key, cfg.d_value));
        model.utilization.emplace_back(static_cast<std::size_t>(cfg.K), 0);
    }
    return model;
}

FetchResult forward(const BottleneckModel& model, const Eigen::VectorXd& z) {
    if (!model.keys_initialized()) {
        throw StateError("forward: model keys not initialized");
    }
    const int C = model.config.C;
    const int d_value = model.config.d_value;
    const Eigen::MatrixXd heads = project(model.bank, z);

    FetchResult result;
    result.indices.resize(static_cast<std::size_t>(C));
    result.values.resize(d_value, C);
    result.logits = Eigen::VectorXd::Zero(d_value);
    for (int c = 0; c < C; ++c) {
        const Codebook& cb = model.codebooks[static_cast<std::size_t>(c)];
        const int idx = quantize(cb, heads.col(c)).index;
        result.indices[static_cast<std::size_t>(c)] = idx;
        result.values.col(c) = cb.values.col(idx).cast<double>();
        result.logits += result.values.col(c);
    }
    result.logits /= static_cast<double>(C);
    result.probs = softmax(result.logits);
    return result;
}

FetchResult forward(BottleneckModel& model, const Eigen::VectorXd& z,
                    bool track_utilization) {
    FetchResult result = forward(static_cast<const BottleneckModel&>(model), z);
    if (track_utilization) {
        for (int c = 0; c < model.config.C; ++c) {
            ++model.utilization[static_cast<std::size_t>(c)]
                               [static_cast<std::size_t>(
                                   result.indices[static_cast<std::size_t>(c)])];
        }
    }
    return result;
}

Eigen::VectorXd value_gradients(const FetchResult& result, int label,
                                double eps) {
    const int num_classes = static_cast<int>(result.probs.size());
    if (label < 0 || label >= num_classes) {
        throw DataError("value_gradients: label out of range");
    }
    if (eps < 0.0 || eps >= 1.0) {
        throw ConfigError("value_gradients: eps must be in [0, 1)");
    }
    const int C = static_cast<int>(result.indices.size());
    return (result.probs - smoothed_target(label, num_classes, eps)) /
           static_cast<double>(C);
}

double train_step_values(BottleneckModel& model, const EmbeddingDataset& batch,
                         double lr, double eps) {
    if (!model.keys_frozen()) {
        throw StateError(
            "train_step_values: keys must be frozen before value training");
    }
    validate_dataset(batch);
    if (batch.dim() != model.config.m_z) {
        throw ShapeError("train_step_values: embedding dimension mismatch");
    }
    if (batch.num_classes != model.config.num_classes) {
        throw DataError("train_step_values: class count mismatch");
    }
    const int B = batch.n();
    const int C = model.config.C;

    // Per-(codebook, pair) gradient accumulators; only touched pairs appear.
    std::vector<std::unordered_map<int, Eigen::VectorXd>> accum(
        static_cast<std::size_t>(C));
    double loss_sum = 0.0;
    for (int b = 0; b < B; ++b) {
        const FetchResult result =
            forward(model, batch.embeddings.col(b).cast<double>(), true);
        const int label = static_cast<int>(batch.labels[static_cast<std::size_t>(b)]);
        loss_sum += ce_loss_smoothed(result.probs, label, eps);
        const Eigen::VectorXd grad = value_gradients(result, label, eps);
        for (int c = 0; c < C; ++c) {
            auto& slot = accum[static_cast<std::size_t>(c)]
                              [result.indices[static_cast<std::size_t>(c)]];
            if (slot.size() == 0) {
                slot = grad;
            } else {
                slot += grad;
            }
        }
    }

    // One update per batch: averaged gradient, applied in double, stored f32.
    const double scale = lr / static_cast<double>(B);
    for (int c = 0; c < C; ++c) {
        Codebook& cb = model.codebooks[static_cast<std::size_t>(c)];
        for (const auto& [idx, g] : accum[static_cast<std::size_t>(c)]) {
            for (int j = 0; j < model.config.d_value; ++j) {
                cb.values(j, idx) = static_cast<float>(
                    static_cast<double>(cb.values(j, idx)) - scale * g[j]);
            }
        }
    }
    return loss_sum / static_cast<double>(B);
}

void init_keys_phase(BottleneckModel& model, const Eigen::MatrixXf& stream,
                     int epochs, int batch_size) {
    if (model.keys_frozen()) {
        throw StateError("init_keys_phase: keys already frozen");
    }
    const int N = static_cast<int>(stream.cols());
    if (N == 0) {
        throw DataError("init_keys_phase: empty stream");
    }
    if (stream.rows() != model.config.m_z) {
        throw ShapeError("init_keys_phase: stream dimension mismatch");
    }
    if (epochs < 1) {
        throw ConfigError("init_keys_phase: epochs must be >= 1");
    }
    const int B = batch_size > 0 ? batch_size : model.config.batch_size;
    const int C = model.config.C;
    EmaConfig ema = model.config.ema();
    ema.batch_size = B;
    const std::uint64_t seed = model.config.seed;

    bool seeded = model.keys_initialized();
    for (int e = 0; e < epochs; ++e) {
        const std::vector<int> order = shuffled_indices(
            N, derive_seed(seed, "key-init:epoch:" + std::to_string(e)));
        for (int start = 0; start < N; start += B) {
            const int count = std::min(B, N - start);
            Eigen::MatrixXd Z(model.config.m_z, count);
            for (int i = 0; i < count; ++i) {
                Z.col(i) = stream.col(order[static_cast<std::size_t>(start + i)])
                               .cast<double>();
            }
            for (int c = 0; c < C; ++c) {
                Codebook& cb = model.codebooks[static_cast<std::size_t>(c)];
                const Eigen::MatrixXd H = project_head(model.bank, c, Z);
                if (!seeded) {
                    seed_keys_from_batch(
                        cb, H,
                        derive_seed(seed, "key-seed:" + std::to_string(c)));
                } else {
                    ema_update(cb, H, ema);
                    expire_and_reinit(
                        cb, H, ema,
                        derive_seed(seed, "expire:" + std::to_string(c) + ":" +
                                              std::to_string(e) + ":" +
                                              std::to_string(start)));
                }
            }
            seeded = true;
        }
    }
    for (auto& cb : model.codebooks) freeze(cb);
}

void prune_dormant(BottleneckModel& model) {
    for (int c = 0; c < model.config.C; ++c) {
        Codebook& cb = model.codebooks[static_cast<std::size_t>(c)];
        const auto& used = model.utilization[static_cast<std::size_t>(c)];
        std::vector<int> survivors;
        for (int i = 0; i < cb.K(); ++i) {
            if (used[static_cast<std::size_t>(i)] > 0) survivors.push_back(i);
        }
        if (survivors.empty()) {
            throw StateError("prune_dormant: codebook " + std::to_string(c) +
                             " has no utilized pairs; pruning would empty it");
        }
        const int k = static_cast<int>(survivors.size());
        Eigen::MatrixXf keys(cb.d_key(), k), values(cb.d_value(), k),
            ema_sum(cb.d_key(), k);
        Eigen::VectorXf ema_count(k);
        for (int i = 0; i < k; ++i) {
            keys.col(i) = cb.keys.col(survivors[static_cast<std::size_t>(i)]);
            values.col(i) = cb.values.col(survivors[static_cast<std::size_t>(i)]);
            ema_sum.col(i) = cb.ema_sum.col(survivors[static_cast<std::size_t>(i)]);
            ema_count[i] = cb.ema_count[survivors[static_cast<std::size_t>(i)]];
        }
        cb.keys = std::move(keys);
        cb.values = std::move(values);
        cb.ema_sum = std::move(ema_sum);
        cb.ema_count = std::move(ema_count);
        model.utilization[static_cast<std::size_t>(c)].assign(
            static_cast<std::size_t>(k), 0);
    }
}

}  // namespace dkvb
