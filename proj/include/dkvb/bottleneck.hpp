#ifndef DKVB_BOTTLENECK_HPP
#define DKVB_BOTTLENECK_HPP

#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "dkvb/codebook.hpp"
#include "dkvb/datastream.hpp"
#include "dkvb/projection.hpp"

namespace dkvb {

/// Every architecture and training knob of the key-value bottleneck model.
struct BottleneckConfig {
    int C = 256;          // number of heads / codebooks
    int K = 4096;         // key-value pairs per codebook
    int d_key = 14;       // key dimension
    int d_value = 10;     // value dimension (tied to num_classes)
    int num_classes = 10;
    int m_z = 2048;       // input embedding dimension
    double gamma = 0.95;  // EMA decay during key initialization
    double expiry_fraction = 0.1;
    double lr_values = 0.3;
    double label_smoothing = 0.1;
    int batch_size = 256;
    int key_init_epochs = 10;
    std::uint64_t seed = 0;
    bool identity_projection = false;  // low-dim bypass: requires d_key == m_z

    void validate() const;
    EmaConfig ema() const;
};

/// Projection bank + C codebooks + the weight-free decoder (mean of the
/// fetched values followed by softmax). Keys freeze after the init phase;
/// values are the only trainable state afterwards.
struct BottleneckModel {
    BottleneckConfig config;
    ProjectionBank bank;
    std::vector<Codebook> codebooks;
    // utilization[c][i]: how often codebook c returned pair i in a
    // training-time forward pass (evaluation never counts).
    std::vector<std::vector<std::uint64_t>> utilization;

    bool keys_frozen() const;
    bool keys_initialized() const;
};

/// Fresh model: projection bank built from the config seed (or the identity
/// bypass), zero-valued codebooks awaiting key seeding, zero counters.
BottleneckModel make_model(const BottleneckConfig& cfg);

/// Everything one forward pass produces for a single input.
struct FetchResult {
    std::vector<int> indices;  // selected pair per codebook, C entries
    Eigen::MatrixXd values;    // fetched value columns, d_value x C
    Eigen::VectorXd logits;    // mean of the fetched values
    Eigen::VectorXd probs;     // softmax(logits)
};

/// Pure forward pass: project, quantize per codebook, fetch values, decode.
FetchResult forward(const BottleneckModel& model, const Eigen::VectorXd& z);

/// Forward pass that optionally bumps the utilization counters (used by
/// training; evaluation calls the const overload).
FetchResult forward(BottleneckModel& model, const Eigen::VectorXd& z,
                    bool track_utilization);

/// Gradient of the smoothed cross-entropy with respect to EACH fetched
/// value: (probs - smoothed_target) / C, identical across codebooks because
/// the decoder is a plain mean. No other value receives gradient.
Eigen::VectorXd value_gradients(const FetchResult& result, int label,
                                double eps);

/// One mini-batch SGD step on the values: per-(codebook, pair) gradients are
/// accumulated over the batch, divided by the batch size, and applied once.
/// Values never fetched by the batch are bit-identical afterwards. Returns
/// the pre-update mean loss. Keys must be frozen (training before the key
/// phase is a protocol violation).
double train_step_values(BottleneckModel& model, const EmbeddingDataset& batch,
                         double lr, double eps);

/// Unsupervised key placement: the first batch seeds the keys at sampled
/// stream positions, each subsequent batch runs an EMA update plus expiry,
/// and after `epochs` passes every codebook is frozen. `batch_size` == 0
/// uses the config batch size. Labels are never consumed.
void init_keys_phase(BottleneckModel& model, const Eigen::MatrixXf& stream,
                     int epochs, int batch_size = 0);

/// Drop every pair whose utilization counter is zero; survivors keep their
/// relative order and counters reset. A codebook losing all pairs is an
/// error (nothing left to quantize against).
void prune_dormant(BottleneckModel& model);

}  // namespace dkvb

#endif  // DKVB_BOTTLENECK_HPP
