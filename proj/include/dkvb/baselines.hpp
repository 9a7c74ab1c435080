#ifndef DKVB_BASELINES_HPP
#define DKVB_BASELINES_HPP

#include <cstdint>

#include <Eigen/Core>

#include "dkvb/datastream.hpp"

namespace dkvb {

/// Softmax classifier on raw embeddings, the forgetting-prone comparison
/// point. Parameters are f32 for checkpoint bit-exactness; math runs in
/// double.
struct LinearProbe {
    Eigen::MatrixXf weight;  // num_classes x m_z, zero-initialized
    Eigen::VectorXf bias;    // num_classes; empty when has_bias == false
    bool has_bias = true;
    double lr = 0.001;
    double weight_decay = 0.0;

    int num_classes() const { return static_cast<int>(weight.rows()); }
    int m_z() const { return static_cast<int>(weight.cols()); }
};

LinearProbe make_linear_probe(int m_z, int num_classes, bool has_bias,
                              double lr, double weight_decay = 0.0);

/// Two dense layers with a rectifier between, trained end-to-end by SGD.
struct MlpProbe {
    Eigen::MatrixXf w1;  // hidden x m_z
    Eigen::VectorXf b1;  // hidden
    Eigen::MatrixXf w2;  // num_classes x hidden
    Eigen::VectorXf b2;  // num_classes
    double lr = 0.001;
    double weight_decay = 0.0;

    int hidden_dim() const { return static_cast<int>(w1.rows()); }
    int num_classes() const { return static_cast<int>(w2.rows()); }
    int m_z() const { return static_cast<int>(w1.cols()); }
};

/// Weights drawn N(0, 1/fan_in) from the seed, biases zero.
MlpProbe make_mlp_probe(int m_z, int hidden_dim, int num_classes,
                        std::uint64_t seed, double lr,
                        double weight_decay = 0.0);

/// Class probabilities for one embedding; pure.
Eigen::VectorXd probe_forward(const LinearProbe& probe,
                              const Eigen::VectorXd& z);
Eigen::VectorXd probe_forward(const MlpProbe& probe, const Eigen::VectorXd& z);

/// Analytic gradients of the smoothed cross-entropy for one sample, without
/// weight decay; exposed so tests can compare them against finite
/// differences directly in double precision.
struct LinearGrads {
    Eigen::MatrixXd weight;
    Eigen::VectorXd bias;  // empty when the probe has no bias
};
LinearGrads probe_gradients(const LinearProbe& probe, const Eigen::VectorXd& z,
                            int label, double eps);

struct MlpGrads {
    Eigen::MatrixXd w1;
    Eigen::VectorXd b1;
    Eigen::MatrixXd w2;
    Eigen::VectorXd b2;
};
MlpGrads probe_gradients(const MlpProbe& probe, const Eigen::VectorXd& z,
                         int label, double eps);

/// One SGD step on the batch-mean smoothed cross-entropy. Weight decay
/// enters the gradient additively as lambda * parameter (every parameter,
/// bias included). Returns the pre-update mean loss.
double probe_train_step(LinearProbe& probe, const EmbeddingDataset& batch,
                        double eps);
double probe_train_step(MlpProbe& probe, const EmbeddingDataset& batch,
                        double eps);

}  // namespace dkvb

#endif  // DKVB_BASELINES_HPP
