#include "dkvb/baselines.hpp"

#include <cmath>

#include "dkvb/common.hpp"
#include "dkvb/math.hpp"

namespace dkvb {

LinearProbe make_linear_probe(int m_z, int num_classes, bool has_bias,
                              double lr, double weight_decay) {
    if (m_z < 1 || num_classes < 1) {
        throw ConfigError("make_linear_probe: dimensions must be >= 1");
    }
    if (!(lr >= 0.0) || weight_decay < 0.0) {
        throw ConfigError("make_linear_probe: negative lr or weight_decay");
    }
    LinearProbe probe;
    probe.weight = Eigen::MatrixXf::Zero(num_classes, m_z);
    probe.has_bias = has_bias;
    if (has_bias) probe.bias = Eigen::VectorXf::Zero(num_classes);
    probe.lr = lr;
    probe.weight_decay = weight_decay;
    return probe;
}

MlpProbe make_mlp_probe(int m_z, int hidden_dim, int num_classes,
                        std::uint64_t seed, double lr, double weight_decay) {
    if (m_z < 1 || hidden_dim < 1 || num_classes < 1) {
        throw ConfigError("make_mlp_probe: dimensions must be >= 1");
    }
    if (!(lr >= 0.0) || weight_decay < 0.0) {
        throw ConfigError("make_mlp_probe: negative lr or weight_decay");
    }
    MlpProbe probe;
    probe.lr = lr;
    probe.weight_decay = weight_decay;
    Rng rng(derive_seed(seed, "mlp-init"));
    const auto fill = [&rng](Eigen::MatrixXf& m, int fan_in) {
        const double std_dev = 1.0 / std::sqrt(static_cast<double>(fan_in));
        float* p = m.data();
        for (Eigen::Index i = 0; i < m.size(); ++i) {
            p[i] = static_cast<float>(rng.gaussian() * std_dev);
        }
    };
    probe.w1.resize(hidden_dim, m_z);
    fill(probe.w1, m_z);
    probe.b1 = Eigen::VectorXf::Zero(hidden_dim);
    probe.w2.resize(num_classes, hidden_dim);
    fill(probe.w2, hidden_dim);
    probe.b2 = Eigen::VectorXf::Zero(num_classes);
    return probe;
}

namespace {

Eigen::VectorXd linear_logits(const LinearProbe& probe,
                              const Eigen::VectorXd& z) {
    if (z.size() != probe.m_z()) {
        throw ShapeError("probe_forward: embedding dimension mismatch");
    }
    Eigen::VectorXd logits = probe.weight.cast<double>() * z;
    if (probe.has_bias) logits += probe.bias.cast<double>();
    return logits;
}

struct MlpActivations {
    Eigen::VectorXd pre;     // hidden pre-activations
    Eigen::VectorXd hidden;  // rectified
    Eigen::VectorXd logits;
};

MlpActivations mlp_logits(const MlpProbe& probe, const Eigen::VectorXd& z) {
    if (z.size() != probe.m_z()) {
        throw ShapeError("probe_forward: embedding dimension mismatch");
    }
    MlpActivations act;
    act.pre = probe.w1.cast<double>() * z + probe.b1.cast<double>();
    act.hidden = act.pre.cwiseMax(0.0);
    act.logits = probe.w2.cast<double>() * act.hidden + probe.b2.cast<double>();
    return act;
}

}  // namespace

Eigen::VectorXd probe_forward(const LinearProbe& probe,
                              const Eigen::VectorXd& z) {
    return softmax(linear_logits(probe, z));
}

Eigen::VectorXd probe_forward(const MlpProbe& probe, const Eigen::VectorXd& z) {
    return softmax(mlp_logits(probe, z).logits);
}

LinearGrads probe_gradients(const LinearProbe& probe, const Eigen::VectorXd& z,
                            int label, double eps) {
    const Eigen::VectorXd probs = probe_forward(probe, z);
    const Eigen::VectorXd dlogits =
        probs - smoothed_target(label, probe.num_classes(), eps);
    LinearGrads g;
    g.weight = dlogits * z.transpose();
    if (probe.has_bias) g.bias = dlogits;
    return g;
}

MlpGrads probe_gradients(const MlpProbe& probe, const Eigen::VectorXd& z,
                         int label, double eps) {
    const MlpActivations act = mlp_logits(probe, z);
    const Eigen::VectorXd probs = softmax(act.logits);
    const Eigen::VectorXd dlogits =
        probs - smoothed_target(label, probe.num_classes(), eps);
    MlpGrads g;
    g.w2 = dlogits * act.hidden.transpose();
    g.b2 = dlogits;
    Eigen::VectorXd dhidden = probe.w2.cast<double>().transpose() * dlogits;
    // Rectifier gate: gradient passes only where the pre-activation was
    // strictly positive.
    for (Eigen::Index i = 0; i < dhidden.size(); ++i) {
        if (act.pre[i] <= 0.0) dhidden[i] = 0.0;
    }
    g.w1 = dhidden * z.transpose();
    g.b1 = dhidden;
    return g;
}

namespace {

// Apply one averaged-gradient SGD step to an f32 parameter block, with
// additive weight decay, computing in double and rounding once at the end.
void sgd_apply(Eigen::Ref<Eigen::MatrixXf> param, const Eigen::MatrixXd& grad,
               double lr, double weight_decay) {
    for (Eigen::Index j = 0; j < param.cols(); ++j) {
        for (Eigen::Index i = 0; i < param.rows(); ++i) {
            const double w = static_cast<double>(param(i, j));
            param(i, j) =
                static_cast<float>(w - lr * (grad(i, j) + weight_decay * w));
        }
    }
}

void check_batch(const EmbeddingDataset& batch, int m_z, int num_classes) {
    validate_dataset(batch);
    if (batch.dim() != m_z) {
        throw ShapeError("probe_train_step: embedding dimension mismatch");
    }
    if (batch.num_classes != num_classes) {
        throw DataError("probe_train_step: class count mismatch");
    }
}

}  // namespace

double probe_train_step(LinearProbe& probe, const EmbeddingDataset& batch,
                        double eps) {
    check_batch(batch, probe.m_z(), probe.num_classes());
    const int B = batch.n();
    Eigen::MatrixXd gw =
        Eigen::MatrixXd::Zero(probe.num_classes(), probe.m_z());
    Eigen::VectorXd gb = Eigen::VectorXd::Zero(probe.num_classes());
    double loss_sum = 0.0;
    for (int b = 0; b < B; ++b) {
        const Eigen::VectorXd z = batch.embeddings.col(b).cast<double>();
        const int label = static_cast<int>(batch.labels[static_cast<std::size_t>(b)]);
        const Eigen::VectorXd probs = probe_forward(probe, z);
        loss_sum += ce_loss_smoothed(probs, label, eps);
        const LinearGrads g = probe_gradients(probe, z, label, eps);
        gw += g.weight;
        if (probe.has_bias) gb += g.bias;
    }
    gw /= static_cast<double>(B);
    sgd_apply(probe.weight, gw, probe.lr, probe.weight_decay);
    if (probe.has_bias) {
        gb /= static_cast<double>(B);
        sgd_apply(probe.bias, gb, probe.lr, probe.weight_decay);
    }
    return loss_sum / static_cast<double>(B);
}

double probe_train_step(MlpProbe& probe, const EmbeddingDataset& batch,
                        double eps) {
    check_batch(batch, probe.m_z(), probe.num_classes());
    const int B = batch.n();
    Eigen::MatrixXd gw1 = Eigen::MatrixXd::Zero(probe.hidden_dim(), probe.m_z());
    Eigen::VectorXd gb1 = Eigen::VectorXd::Zero(probe.hidden_dim());
    Eigen::MatrixXd gw2 =
        Eigen::MatrixXd::Zero(probe.num_classes(), probe.hidden_dim());
    Eigen::VectorXd gb2 = Eigen::VectorXd::Zero(probe.num_classes());
    double loss_sum = 0.0;
    for (int b = 0; b < B; ++b) {
        const Eigen::VectorXd z = batch.embeddings.col(b).cast<double>();
        const int label = static_cast<int>(batch.labels[static_cast<std::size_t>(b)]);
        loss_sum += ce_loss_smoothed(probe_forward(probe, z), label, eps);
        const MlpGrads g = probe_gradients(probe, z, label, eps);
        gw1 += g.w1;
        gb1 += g.b1;
        gw2 += g.w2;
        gb2 += g.b2;
    }
    const double inv_b = 1.0 / static_cast<double>(B);
    sgd_apply(probe.w1, gw1 * inv_b, probe.lr, probe.weight_decay);
    sgd_apply(probe.b1, gb1 * inv_b, probe.lr, probe.weight_decay);
    sgd_apply(probe.w2, gw2 * inv_b, probe.lr, probe.weight_decay);
    sgd_apply(probe.b2, gb2 * inv_b, probe.lr, probe.weight_decay);
    return loss_sum / static_cast<double>(B);
}

}  // namespace dkvb
