#ifndef DKVB_CODEBOOK_HPP
#define DKVB_CODEBOOK_HPP

#include <cstdint>

#include <Eigen/Core>

namespace dkvb {

/// Settings for the EMA clustering that places keys during initialization.
struct EmaConfig {
    double gamma = 0.95;          // decay factor of the count/sum accumulators
    double expiry_fraction = 0.1; // scales the under-utilization threshold
    int batch_size = 256;
    int spatial_h = 1;            // spatial extent of the feature map; inputs
    int spatial_w = 1;            // here are pooled, so 1 x 1 by default
};

/// Keys with EMA count below this are expired and re-seeded from the batch.
double expiry_threshold(const EmaConfig& cfg, int K);

/// One head's key-value store. Keys are placed by EMA clustering over a
/// stream of heads and then frozen forever; values stay trainable. After
/// seeding, and after every update that assigns heads to key i, the stored
/// accumulators satisfy keys[i] == ema_sum[i] / ema_count[i] exactly (in
/// stored f32 precision).
///
/// Storage is f32 so checkpoints round-trip bit-exactly; all transient
/// arithmetic runs in double.
struct Codebook {
    Eigen::MatrixXf keys;       // d_key x K, one column per key
    Eigen::MatrixXf values;     // d_value x K
    Eigen::VectorXf ema_count;  // K
    Eigen::MatrixXf ema_sum;    // d_key x K
    bool initialized = false;
    bool frozen = false;

    int K() const { return static_cast<int>(keys.cols()); }
    int d_key() const { return static_cast<int>(keys.rows()); }
    int d_value() const { return static_cast<int>(values.rows()); }
};

/// Fresh codebook: zero keys (awaiting seeding), zero values. Zero values
/// make the decoder start at exactly uniform class probabilities and keep
/// early gradients purely local.
Codebook make_codebook(int K, int d_key, int d_value);

/// Seed every key from a batch of heads (d_key x B): a uniform draw without
/// replacement when the batch is large enough, with replacement otherwise.
/// Accumulators start at (count 1, sum = key) so the key identity holds from
/// the first step.
void seed_keys_from_batch(Codebook& cb, const Eigen::MatrixXd& heads,
                          std::uint64_t rng_seed);

struct QuantizeResult {
    int index = 0;
    double distance = 0.0;  // attained L2 distance (not squared)
};

/// Nearest key by L2 distance; ties go to the lowest index. The scan
/// compares squared distances accumulated sequentially in double, so the
/// result is exactly reproducible by an independent scan in the same order.
QuantizeResult quantize(const Codebook& cb, const Eigen::VectorXd& head);

/// One EMA step over a batch of heads (d_key x B): counts and sums decay by
/// gamma and absorb the batch assignments (computed against the pre-update
/// keys), then every key that received heads is recomputed as sum/count.
/// Keys with no assignments stay bit-identical: scaling numerator and
/// denominator by the same gamma leaves their ratio where it was.
void ema_update(Codebook& cb, const Eigen::MatrixXd& heads,
                const EmaConfig& cfg);

/// Re-seed every key whose EMA count fell below the expiry threshold from a
/// uniformly sampled batch head; well-utilized keys are untouched.
void expire_and_reinit(Codebook& cb, const Eigen::MatrixXd& heads,
                       const EmaConfig& cfg, std::uint64_t rng_seed);

/// Freeze the keys permanently. Quantization and value access stay allowed;
/// any further EMA or expiry call is rejected.
void freeze(Codebook& cb);

}  // namespace dkvb

#endif  // DKVB_CODEBOOK_HPP
