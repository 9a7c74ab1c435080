#include "dkvb/harness.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <limits>

#include <json.hpp>

#include "dkvb/common.hpp"
#include "dkvb/math.hpp"

namespace dkvb {

namespace {

using nlohmann::json;

template <typename ProbsFn>
EvalResult evaluate_impl(ProbsFn&& probs_of, const EmbeddingDataset& test,
                         double eps) {
    validate_dataset(test);
    const int n = test.n();
    const int num_classes = test.num_classes;
    std::vector<std::int64_t> per_class_total(
        static_cast<std::size_t>(num_classes), 0);
    std::vector<std::int64_t> per_class_hit(
        static_cast<std::size_t>(num_classes), 0);
    std::int64_t hits = 0;
    double loss_sum = 0.0;
    for (int i = 0; i < n; ++i) {
        const Eigen::VectorXd probs =
            probs_of(test.embeddings.col(i).cast<double>());
        const int label = static_cast<int>(test.labels[static_cast<std::size_t>(i)]);
        loss_sum += ce_loss_smoothed(probs, label, eps);
        const int pred = argmax_lowest(probs);
        ++per_class_total[static_cast<std::size_t>(label)];
        if (pred == label) {
            ++hits;
            ++per_class_hit[static_cast<std::size_t>(label)];
        }
    }
    EvalResult result;
    result.accuracy = static_cast<double>(hits) / static_cast<double>(n);
    result.mean_loss = loss_sum / static_cast<double>(n);
    result.per_class_accuracy.resize(static_cast<std::size_t>(num_classes), 0.0);
    for (int c = 0; c < num_classes; ++c) {
        if (per_class_total[static_cast<std::size_t>(c)] > 0) {
            result.per_class_accuracy[static_cast<std::size_t>(c)] =
                static_cast<double>(per_class_hit[static_cast<std::size_t>(c)]) /
                static_cast<double>(per_class_total[static_cast<std::size_t>(c)]);
        }
    }
    return result;
}

}  // namespace

EvalResult evaluate(const BottleneckModel& model, const EmbeddingDataset& test,
                    double eps) {
    if (test.num_classes != model.config.num_classes) {
        throw DataError("evaluate: class count mismatch");
    }
    return evaluate_impl(
        [&model](const Eigen::VectorXd& z) { return forward(model, z).probs; },
        test, eps);
}

EvalResult evaluate(const LinearProbe& probe, const EmbeddingDataset& test,
                    double eps) {
    if (test.num_classes != probe.num_classes()) {
        throw DataError("evaluate: class count mismatch");
    }
    return evaluate_impl(
        [&probe](const Eigen::VectorXd& z) { return probe_forward(probe, z); },
        test, eps);
}

EvalResult evaluate(const MlpProbe& probe, const EmbeddingDataset& test,
                    double eps) {
    if (test.num_classes != probe.num_classes()) {
        throw DataError("evaluate: class count mismatch");
    }
    return evaluate_impl(
        [&probe](const Eigen::VectorXd& z) { return probe_forward(probe, z); },
        test, eps);
}

namespace {

json record_to_json(const MetricsRecord& rec) {
    return json{{"phase", rec.phase},
                {"epoch", rec.epoch},
                {"split", rec.split},
                {"mean_loss", rec.mean_loss},
                {"accuracy", rec.accuracy},
                {"per_class_accuracy", rec.per_class_accuracy},
                {"wall_clock_s", rec.wall_clock_s}};
}

MetricsRecord record_from_json(const json& j, const std::string& where) {
    try {
        MetricsRecord rec;
        rec.phase = j.at("phase").get<int>();
        rec.epoch = j.at("epoch").get<int>();
        rec.split = j.at("split").get<std::string>();
        rec.mean_loss = j.at("mean_loss").get<double>();
        rec.accuracy = j.at("accuracy").get<double>();
        rec.per_class_accuracy =
            j.at("per_class_accuracy").get<std::vector<double>>();
        rec.wall_clock_s = j.at("wall_clock_s").get<double>();
        return rec;
    } catch (const json::exception& e) {
        throw FormatError(where + ": bad metrics record (" + e.what() + ")");
    }
}

}  // namespace

MetricsWriter::MetricsWriter(const std::string& dir) : dir_(dir) {
    std::filesystem::create_directories(dir);
    ndjson_.open(dir + "/metrics.ndjson", std::ios::trunc);
    csv_.open(dir + "/summary.csv", std::ios::trunc);
    if (!ndjson_ || !csv_) {
        throw DataError("MetricsWriter: cannot open metric files under " + dir);
    }
    csv_ << "phase,epoch,split,loss,accuracy\n";
    csv_.flush();
}

void MetricsWriter::append(const MetricsRecord& rec) {
    ndjson_ << record_to_json(rec).dump() << "\n";
    ndjson_.flush();
    csv_ << rec.phase << ',' << rec.epoch << ',' << rec.split << ','
         << rec.mean_loss << ',' << rec.accuracy << "\n";
    csv_.flush();
    if (!ndjson_ || !csv_) {
        throw DataError("MetricsWriter: metric write failed under " + dir_);
    }
}

std::vector<MetricsRecord> read_metrics(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("read_metrics: cannot open " + path);
    }
    std::vector<MetricsRecord> records;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception&) {
            // A partial final line is a crash artifact, not corruption.
            if (in.eof()) break;
            throw FormatError(path + ":" + std::to_string(line_no) +
                              ": unparseable metrics line");
        }
        records.push_back(
            record_from_json(j, path + ":" + std::to_string(line_no)));
    }
    return records;
}

namespace {

// run_phases customization points: the bottleneck trains with its own
// hyperparameters, probes with the options'.
double train_batch(BottleneckModel& m, const EmbeddingDataset& b,
                   const TrainOptions&) {
    return train_step_values(m, b, m.config.lr_values,
                             m.config.label_smoothing);
}
double train_batch(LinearProbe& p, const EmbeddingDataset& b,
                   const TrainOptions& o) {
    return probe_train_step(p, b, o.label_smoothing);
}
double train_batch(MlpProbe& p, const EmbeddingDataset& b,
                   const TrainOptions& o) {
    return probe_train_step(p, b, o.label_smoothing);
}

double eval_eps(const BottleneckModel& m, const TrainOptions&) {
    return m.config.label_smoothing;
}
double eval_eps(const LinearProbe&, const TrainOptions& o) {
    return o.label_smoothing;
}
double eval_eps(const MlpProbe&, const TrainOptions& o) {
    return o.label_smoothing;
}

EmbeddingDataset gather(const EmbeddingDataset& ds, const std::vector<int>& order,
                        int start, int count) {
    EmbeddingDataset out;
    out.num_classes = ds.num_classes;
    out.embeddings.resize(ds.dim(), count);
    out.labels.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        const int src = order[static_cast<std::size_t>(start + i)];
        out.embeddings.col(i) = ds.embeddings.col(src);
        out.labels.push_back(ds.labels[static_cast<std::size_t>(src)]);
    }
    return out;
}

template <typename Model>
std::vector<MetricsRecord> run_phases_impl(
    Model& model, const EmbeddingDataset& train_all,
    const Curriculum& curriculum, const EmbeddingDataset& test,
    const TrainOptions& opts, MetricsWriter* writer,
    const std::function<void(int)>& on_phase_end) {
    validate_dataset(train_all);
    validate_dataset(test);
    if (curriculum.phases.empty()) {
        throw ConfigError("run_phases: curriculum has no phases");
    }

    const auto t0 = std::chrono::steady_clock::now();
    std::vector<MetricsRecord> records;
    const auto emit = [&](int phase, int tick, const std::string& split,
                          const EvalResult& r) {
        MetricsRecord rec;
        rec.phase = phase;
        rec.epoch = tick;
        rec.split = split;
        rec.mean_loss = r.mean_loss;
        rec.accuracy = r.accuracy;
        rec.per_class_accuracy = r.per_class_accuracy;
        rec.wall_clock_s =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                .count();
        if (writer) writer->append(rec);
        records.push_back(std::move(rec));
    };

    const double eps = eval_eps(model, opts);
    for (int p = 0; p < static_cast<int>(curriculum.phases.size()); ++p) {
        const CurriculumPhase& phase =
            curriculum.phases[static_cast<std::size_t>(p)];
        const EmbeddingDataset phase_data =
            filter_classes(train_all, phase.classes);
        const int n = phase_data.n();
        const int B = opts.batch_size > 0 ? std::min(opts.batch_size, n) : n;

        const auto snapshot = [&](int tick) {
            emit(p, tick, "train", evaluate(model, phase_data, eps));
            emit(p, tick, "test", evaluate(model, test, eps));
        };

        if (opts.unit == BudgetUnit::steps) {
            int steps = 0;
            int pass = 0;
            while (steps < phase.budget) {
                const std::vector<int> order = shuffled_indices(
                    n, derive_seed(opts.seed,
                                   "train:phase:" + std::to_string(p) +
                                       ":pass:" + std::to_string(pass)));
                for (int start = 0; start < n && steps < phase.budget;
                     start += B) {
                    const int count = std::min(B, n - start);
                    train_batch(model, gather(phase_data, order, start, count),
                                opts);
                    ++steps;
                    if (opts.eval_every > 0 && steps % opts.eval_every == 0 &&
                        steps < phase.budget) {
                        snapshot(steps);
                    }
                }
                ++pass;
            }
            snapshot(phase.budget);
        } else {
            for (int e = 0; e < phase.budget; ++e) {
                const std::vector<int> order = shuffled_indices(
                    n, derive_seed(opts.seed,
                                   "train:phase:" + std::to_string(p) +
                                       ":epoch:" + std::to_string(e)));
                for (int start = 0; start < n; start += B) {
                    const int count = std::min(B, n - start);
                    train_batch(model, gather(phase_data, order, start, count),
                                opts);
                }
                if (opts.eval_every > 0 && (e + 1) % opts.eval_every == 0 &&
                    e + 1 < phase.budget) {
                    snapshot(e + 1);
                }
            }
            snapshot(phase.budget);
        }
        if (on_phase_end) on_phase_end(p);
    }
    return records;
}

}  // namespace

std::vector<MetricsRecord> run_phases(
    BottleneckModel& model, const EmbeddingDataset& train_all,
    const Curriculum& curriculum, const EmbeddingDataset& test,
    const TrainOptions& opts, MetricsWriter* writer,
    const std::function<void(int)>& on_phase_end) {
    return run_phases_impl(model, train_all, curriculum, test, opts, writer,
                           on_phase_end);
}

std::vector<MetricsRecord> run_phases(
    LinearProbe& probe, const EmbeddingDataset& train_all,
    const Curriculum& curriculum, const EmbeddingDataset& test,
    const TrainOptions& opts, MetricsWriter* writer,
    const std::function<void(int)>& on_phase_end) {
    return run_phases_impl(probe, train_all, curriculum, test, opts, writer,
                           on_phase_end);
}

std::vector<MetricsRecord> run_phases(
    MlpProbe& probe, const EmbeddingDataset& train_all,
    const Curriculum& curriculum, const EmbeddingDataset& test,
    const TrainOptions& opts, MetricsWriter* writer,
    const std::function<void(int)>& on_phase_end) {
    return run_phases_impl(probe, train_all, curriculum, test, opts, writer,
                           on_phase_end);
}

UtilizationReport key_utilization_report(const BottleneckModel& model) {
    UtilizationReport report;
    report.counts = model.utilization;
    for (const auto& counts : report.counts) {
        report.total_pairs += counts.size();
        for (std::uint64_t c : counts) {
            if (c == 0) ++report.unused_pairs;
        }
    }
    report.fraction_unused =
        report.total_pairs == 0
            ? 0.0
            : static_cast<double>(report.unused_pairs) /
                  static_cast<double>(report.total_pairs);
    return report;
}

double value_similarity(const BottleneckModel& a, const BottleneckModel& b) {
    if (a.config.C != b.config.C || a.config.d_key != b.config.d_key ||
        a.config.d_value != b.config.d_value) {
        throw ComparabilityError(
            "value_similarity: models have different architectures");
    }
    double num = 0.0;
    double den = 0.0;
    for (int c = 0; c < a.config.C; ++c) {
        const Codebook& ca = a.codebooks[static_cast<std::size_t>(c)];
        const Codebook& cb = b.codebooks[static_cast<std::size_t>(c)];
        if (ca.K() != cb.K()) {
            throw ComparabilityError("value_similarity: codebook " +
                                     std::to_string(c) + " sizes differ");
        }
        if (!(ca.keys.array() == cb.keys.array()).all()) {
            throw ComparabilityError(
                "value_similarity: codebook " + std::to_string(c) +
                " keys differ; values are not index-aligned");
        }
        for (int i = 0; i < ca.K(); ++i) {
            for (int j = 0; j < ca.d_value(); ++j) {
                const double va = static_cast<double>(ca.values(j, i));
                const double vb = static_cast<double>(cb.values(j, i));
                num += std::abs(va - vb);
                den += std::abs(va);
            }
        }
    }
    if (den == 0.0) {
        return num == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    }
    return num / den;
}

std::vector<std::pair<double, EvalResult>> noise_sweep(
    const BottleneckModel& model, const EmbeddingDataset& test,
    const std::vector<double>& alphas, double eps, std::uint64_t seed) {
    std::vector<std::pair<double, EvalResult>> out;
    out.reserve(alphas.size());
    for (std::size_t i = 0; i < alphas.size(); ++i) {
        const EmbeddingDataset noisy = add_gaussian_noise(
            test, alphas[i],
            derive_seed(seed, "noise:" + std::to_string(i)));
        out.emplace_back(alphas[i], evaluate(model, noisy, eps));
    }
    return out;
}

void write_coords_csv(const BottleneckModel& model,
                      const EmbeddingDataset* data, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw DataError("write_coords_csv: cannot open " + path);
    }
    const int d = model.config.d_key;
    out << "codebook,kind";
    for (int j = 0; j < d; ++j) out << ",dim" << j;
    out << "\n";
    for (int c = 0; c < model.config.C; ++c) {
        const Codebook& cb = model.codebooks[static_cast<std::size_t>(c)];
        for (int i = 0; i < cb.K(); ++i) {
            out << c << ",key";
            for (int j = 0; j < d; ++j) out << ',' << cb.keys(j, i);
            out << "\n";
        }
    }
    if (data != nullptr) {
        for (int i = 0; i < data->n(); ++i) {
            const Eigen::MatrixXd heads =
                project(model.bank, data->embeddings.col(i).cast<double>());
            for (int c = 0; c < model.config.C; ++c) {
                out << c << ",head";
                for (int j = 0; j < d; ++j) out << ',' << heads(j, c);
                out << "\n";
            }
        }
    }
    if (!out) {
        throw DataError("write_coords_csv: write to " + path + " failed");
    }
}

ExperimentResult run_experiment(const ExperimentConfig& cfg,
                                const EmbeddingDataset& train_all,
                                const EmbeddingDataset& test,
                                const EmbeddingDataset* init_data,
                                MetricsWriter* writer,
                                const std::function<void(int)>& on_phase_end) {
    validate_dataset(train_all);
    validate_dataset(test);

    const Curriculum curriculum =
        cfg.curriculum.has_value()
            ? *cfg.curriculum
            : make_curriculum(train_all.num_classes, cfg.num_phases, cfg.mode,
                              derive_seed(cfg.seed, "curriculum"), cfg.budget);

    TrainOptions opts;
    opts.unit = cfg.unit;
    opts.batch_size = cfg.batch_size;
    opts.lr = cfg.probe_lr;
    opts.label_smoothing = cfg.kind == ExperimentConfig::Kind::bottleneck
                               ? cfg.model.label_smoothing
                               : 0.1;
    opts.eval_every = cfg.eval_every;
    opts.seed = derive_seed(cfg.seed, "train-stream");

    ExperimentResult result;
    switch (cfg.kind) {
        case ExperimentConfig::Kind::bottleneck: {
            BottleneckConfig mc = cfg.model;
            mc.seed = cfg.seed;
            BottleneckModel model = make_model(mc);
            const int epochs =
                cfg.init_epochs > 0 ? cfg.init_epochs : mc.key_init_epochs;
            if (cfg.init_source == ExperimentConfig::InitSource::uniform) {
                const EmbeddingDataset stream = gen_uniform_embeddings(
                    cfg.init_samples, mc.m_z,
                    derive_seed(cfg.seed, "init-stream"), cfg.init_lo,
                    cfg.init_hi);
                init_keys_phase(model, stream.embeddings, epochs,
                                cfg.init_batch_size);
            } else {
                const EmbeddingDataset& stream =
                    init_data != nullptr ? *init_data : train_all;
                init_keys_phase(model, stream.embeddings, epochs,
                                cfg.init_batch_size);
            }
            result.records = run_phases(model, train_all, curriculum, test,
                                        opts, writer, on_phase_end);
            result.model = std::move(model);
            break;
        }
        case ExperimentConfig::Kind::linear_probe: {
            LinearProbe probe =
                make_linear_probe(train_all.dim(), train_all.num_classes,
                                  cfg.probe_bias, cfg.probe_lr,
                                  cfg.probe_weight_decay);
            result.records = run_phases(probe, train_all, curriculum, test,
                                        opts, writer, on_phase_end);
            result.linear = std::move(probe);
            break;
        }
        case ExperimentConfig::Kind::mlp_probe: {
            MlpProbe probe = make_mlp_probe(
                train_all.dim(), cfg.hidden_dim, train_all.num_classes,
                derive_seed(cfg.seed, "mlp-probe"), cfg.probe_lr,
                cfg.probe_weight_decay);
            result.records = run_phases(probe, train_all, curriculum, test,
                                        opts, writer, on_phase_end);
            result.mlp = std::move(probe);
            break;
        }
    }
    return result;
}

}  // namespace dkvb
