#ifndef DKVB_DATASTREAM_HPP
#define DKVB_DATASTREAM_HPP

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace dkvb {

/// A labelled set of fixed-dimension embedding vectors. Samples are stored
/// one per column so the raw f32 buffer is laid out sample-major, matching
/// the on-disk format.
struct EmbeddingDataset {
    Eigen::MatrixXf embeddings;         // dim x n
    std::vector<std::uint32_t> labels;  // n entries, each < num_classes
    int num_classes = 0;

    int n() const { return static_cast<int>(embeddings.cols()); }
    int dim() const { return static_cast<int>(embeddings.rows()); }
};

/// Throws unless the dataset is internally consistent (n >= 1, finite
/// embeddings, labels within range, label count == sample count).
void validate_dataset(const EmbeddingDataset& ds);

enum class CurriculumMode { iid, class_incremental };

struct CurriculumPhase {
    std::vector<int> classes;  // ascending class indices trained this phase
    int budget = 1;            // steps or epochs; the trainer picks the unit
};

/// An ordered list of phases. In class-incremental mode the phase class
/// sets are pairwise disjoint and jointly cover the trained classes; iid
/// mode is a single phase over everything.
struct Curriculum {
    std::vector<CurriculumPhase> phases;
    CurriculumMode mode = CurriculumMode::class_incremental;
};

/// Seeded curriculum construction. Class-incremental: a seeded random
/// partition of the classes into num_phases equal disjoint subsets (class
/// count must divide evenly). iid: one phase holding every class.
Curriculum make_curriculum(int num_classes, int num_phases,
                           CurriculumMode mode, std::uint64_t seed,
                           int budget = 1);

/// Settings for the synthetic 2D task: one Gaussian blob per class on a
/// grid inside the unit square, streamed two classes at a time.
struct ToySpec {
    int num_classes = 8;
    int dim = 2;
    std::vector<Eigen::Vector2d> means;  // one per class; see default_toy_spec
    double std_dev = 0.03;
    int samples_per_class_per_phase = 100;
    int num_phases = 4;
    int steps_per_phase = 1000;
    std::uint64_t seed = 0;
};

/// The standard spec: 8 class means on the 3x3 grid {0.2, 0.5, 0.8}^2 with
/// the center point excluded, std 0.03. Grid spacing 0.3 keeps every pair
/// of means at least 6 standard deviations apart.
ToySpec default_toy_spec(std::uint64_t seed);

/// Throws ConfigError if the settings are inconsistent or any two class
/// means are closer than 6 * std_dev.
void validate_toy_spec(const ToySpec& spec);

struct ToyData {
    std::vector<EmbeddingDataset> phase_train;  // one dataset per phase
    EmbeddingDataset train_all;                 // phases concatenated in order
    EmbeddingDataset test;                      // balanced, all classes
    Curriculum curriculum;                      // phase class pairs + budgets
};

/// Generate the synthetic task: a seeded class partition into phases,
/// samples_per_class_per_phase draws per class per phase, and a balanced
/// test set drawn from an independent seed stream. Deterministic in the
/// spec seed.
ToyData gen_toy(const ToySpec& spec);

/// Binary dataset file ("DKVBEMB1"): magic, u32 n, u32 dim, u32 num_classes,
/// n*dim f32 embeddings sample-major, n u32 labels; all little-endian.
void write_embeddings(const EmbeddingDataset& ds, const std::string& path);
EmbeddingDataset read_embeddings(const std::string& path);

/// Plain-text importer for small hand-made fixtures: one sample per line,
/// `embedding_0,...,embedding_{dim-1},label`, optional header. The class
/// count is inferred as max label + 1 unless a larger count is given.
EmbeddingDataset read_embeddings_csv(const std::string& path,
                                     int num_classes = 0);

/// Return a copy with i.i.d. N(0, alpha^2) noise added to every embedding
/// coordinate; labels untouched. alpha = 0 returns the input unchanged.
EmbeddingDataset add_gaussian_noise(const EmbeddingDataset& ds, double alpha,
                                    std::uint64_t seed);

/// Samples whose label is in `classes`, in their original order.
EmbeddingDataset filter_classes(const EmbeddingDataset& ds,
                                const std::vector<int>& classes);

/// Concatenate datasets (equal dim and num_classes) in order.
EmbeddingDataset concat_datasets(const std::vector<EmbeddingDataset>& parts);

/// n unlabeled samples (labels all 0) uniform in [lo, hi]^dim; used as a
/// label-free key-initialization stream.
EmbeddingDataset gen_uniform_embeddings(int n, int dim, std::uint64_t seed,
                                        double lo = 0.0, double hi = 1.0);

}  // namespace dkvb

#endif  // DKVB_DATASTREAM_HPP
