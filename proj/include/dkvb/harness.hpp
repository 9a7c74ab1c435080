#ifndef DKVB_HARNESS_HPP
#define DKVB_HARNESS_HPP

#include <cstdint>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dkvb/baselines.hpp"
#include "dkvb/bottleneck.hpp"
#include "dkvb/datastream.hpp"

namespace dkvb {

/// Accuracy and loss of one pass over a labelled dataset.
struct EvalResult {
    double accuracy = 0.0;
    double mean_loss = 0.0;
    std::vector<double> per_class_accuracy;  // num_classes entries; 0 for
                                             // classes absent from the data
};

/// Argmax classification over the full dataset; ties go to the lowest class
/// index. Pure: utilization counters and parameters are untouched, and two
/// consecutive calls return identical results.
EvalResult evaluate(const BottleneckModel& model, const EmbeddingDataset& test,
                    double eps);
EvalResult evaluate(const LinearProbe& probe, const EmbeddingDataset& test,
                    double eps);
EvalResult evaluate(const MlpProbe& probe, const EmbeddingDataset& test,
                    double eps);

/// One evaluation snapshot during a run. `epoch` counts whatever unit the
/// phase budget uses (optimizer steps or full epochs).
struct MetricsRecord {
    int phase = 0;
    int epoch = 0;
    std::string split;  // "train" (current phase data) or "test" (held out)
    double mean_loss = 0.0;
    double accuracy = 0.0;
    std::vector<double> per_class_accuracy;
    double wall_clock_s = 0.0;
};

/// Streams records to `<dir>/metrics.ndjson` (one JSON object per line) and
/// `<dir>/summary.csv` (phase,epoch,split,loss,accuracy), flushing after
/// every record so a killed run leaves all completed records parseable.
class MetricsWriter {
public:
    explicit MetricsWriter(const std::string& dir);
    void append(const MetricsRecord& rec);
    const std::string& dir() const { return dir_; }

private:
    std::string dir_;
    std::ofstream ndjson_;
    std::ofstream csv_;
};

/// Parse a metrics.ndjson file. A trailing partial line (crash artifact) is
/// ignored; a malformed complete line is a format error.
std::vector<MetricsRecord> read_metrics(const std::string& path);

enum class BudgetUnit { steps, epochs };

/// Knobs of the phase-training loop. The bottleneck takes lr and label
/// smoothing from its own config; probes use the values here.
struct TrainOptions {
    BudgetUnit unit = BudgetUnit::steps;
    int batch_size = 0;  // per-step mini-batch; 0 = full phase dataset
    double lr = 0.001;           // probes only
    double label_smoothing = 0.1;  // probes only
    int eval_every = 0;  // snapshot cadence in budget units; 0 = phase end only
    std::uint64_t seed = 0;  // drives the per-phase shuffle streams
};

/// Train through the curriculum: each phase trains on its class subset for
/// its budget, evaluating on the phase data and the full held-out test set
/// at the cadence and at every phase end. `on_phase_end(p)` fires after
/// phase p's final snapshot, with the model in its end-of-phase state.
std::vector<MetricsRecord> run_phases(
    BottleneckModel& model, const EmbeddingDataset& train_all,
    const Curriculum& curriculum, const EmbeddingDataset& test,
    const TrainOptions& opts, MetricsWriter* writer = nullptr,
    const std::function<void(int)>& on_phase_end = {});
std::vector<MetricsRecord> run_phases(
    LinearProbe& probe, const EmbeddingDataset& train_all,
    const Curriculum& curriculum, const EmbeddingDataset& test,
    const TrainOptions& opts, MetricsWriter* writer = nullptr,
    const std::function<void(int)>& on_phase_end = {});
std::vector<MetricsRecord> run_phases(
    MlpProbe& probe, const EmbeddingDataset& train_all,
    const Curriculum& curriculum, const EmbeddingDataset& test,
    const TrainOptions& opts, MetricsWriter* writer = nullptr,
    const std::function<void(int)>& on_phase_end = {});

/// Exact copy of the per-pair training-forward counters plus the fraction
/// of pairs never selected.
struct UtilizationReport {
    std::vector<std::vector<std::uint64_t>> counts;  // [codebook][pair]
    std::uint64_t total_pairs = 0;
    std::uint64_t unused_pairs = 0;
    double fraction_unused = 0.0;
};
UtilizationReport key_utilization_report(const BottleneckModel& model);

/// Relative mean absolute difference between two models' value tables,
/// sum|a - b| / sum|a|, over every value entry. Requires identical
/// architecture and bit-identical keys (the comparison is meaningless
/// otherwise). Returns 0 when both sums are zero.
double value_similarity(const BottleneckModel& a, const BottleneckModel& b);

/// Evaluate under additive input noise of each magnitude; alpha = 0 is the
/// clean evaluation.
std::vector<std::pair<double, EvalResult>> noise_sweep(
    const BottleneckModel& model, const EmbeddingDataset& test,
    const std::vector<double>& alphas, double eps, std::uint64_t seed);

/// CSV of key coordinates (and projected data heads, when a dataset is
/// given) for external plotting: codebook,kind,dim0..dim{d_key-1}.
void write_coords_csv(const BottleneckModel& model,
                      const EmbeddingDataset* data, const std::string& path);

/// One fully-specified run: model or probe, curriculum, key-init source.
struct ExperimentConfig {
    enum class Kind { bottleneck, linear_probe, mlp_probe };
    enum class InitSource { uniform, dataset };

    Kind kind = Kind::bottleneck;
    BottleneckConfig model;  // bottleneck runs

    int hidden_dim = 32;  // probe runs
    bool probe_bias = true;
    double probe_lr = 0.001;
    double probe_weight_decay = 0.0;

    // Curriculum: explicit, or built from (num_phases, mode, budget).
    std::optional<Curriculum> curriculum;
    int num_phases = 4;
    CurriculumMode mode = CurriculumMode::class_incremental;
    int budget = 1000;
    BudgetUnit unit = BudgetUnit::steps;
    int batch_size = 0;
    int eval_every = 0;

    // Key initialization (bottleneck only). `uniform` draws init_samples
    // points uniform in [init_lo, init_hi]^m_z; `dataset` streams the
    // provided init data (or the training embeddings when none is given).
    // Labels are never read.
    InitSource init_source = InitSource::dataset;
    int init_samples = 2048;
    int init_batch_size = 0;  // 0 = model batch_size
    int init_epochs = 0;      // 0 = model key_init_epochs
    double init_lo = 0.0;
    double init_hi = 1.0;

    std::uint64_t seed = 0;
};

struct ExperimentResult {
    std::vector<MetricsRecord> records;
    std::optional<BottleneckModel> model;
    std::optional<LinearProbe> linear;
    std::optional<MlpProbe> mlp;
};

/// Build the model or probe, run key initialization (bottleneck), then the
/// curriculum via run_phases. Deterministic in cfg.seed.
ExperimentResult run_experiment(const ExperimentConfig& cfg,
                                const EmbeddingDataset& train_all,
                                const EmbeddingDataset& test,
                                const EmbeddingDataset* init_data = nullptr,
                                MetricsWriter* writer = nullptr,
                                const std::function<void(int)>& on_phase_end = {});

}  // namespace dkvb

#endif  // DKVB_HARNESS_HPP
