#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dkvb/checkpoint.hpp"
#include "dkvb/common.hpp"
#include "dkvb/harness.hpp"
#include "helpers.hpp"

using namespace dkvb;
using testutil::read_bytes;
using testutil::TempDir;

namespace {

ToyData small_toy(std::uint64_t seed) {
    ToySpec spec = default_toy_spec(seed);
    spec.samples_per_class_per_phase = 10;
    spec.steps_per_phase = 5;
    return gen_toy(spec);
}

BottleneckModel small_toy_model(std::uint64_t seed) {
    BottleneckConfig cfg;
    cfg.C = 2;
    cfg.K = 16;
    cfg.d_key = 2;
    cfg.num_classes = 8;
    cfg.d_value = 8;
    cfg.m_z = 2;
    cfg.key_init_epochs = 2;
    cfg.seed = seed;
    BottleneckModel model = make_model(cfg);
    const EmbeddingDataset stream =
        gen_uniform_embeddings(128, 2, derive_seed(seed, "init-stream"));
    init_keys_phase(model, stream.embeddings, cfg.key_init_epochs, 64);
    return model;
}

MetricsRecord sample_record(int phase, int epoch, const std::string& split) {
    MetricsRecord rec;
    rec.phase = phase;
    rec.epoch = epoch;
    rec.split = split;
    rec.mean_loss = 0.125 * (phase + 1);
    rec.accuracy = 0.5 + 0.1 * epoch;
    rec.per_class_accuracy = {0.25, 0.75, 1.0};
    rec.wall_clock_s = 3.5 + phase;
    return rec;
}

int count_lines(const std::string& path) {
    std::ifstream in(path);
    int n = 0;
    std::string line;
    while (std::getline(in, line)) ++n;
    return n;
}

bool records_equal_ignoring_clock(const std::vector<MetricsRecord>& a,
                                  const std::vector<MetricsRecord>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].phase != b[i].phase || a[i].epoch != b[i].epoch ||
            a[i].split != b[i].split || a[i].mean_loss != b[i].mean_loss ||
            a[i].accuracy != b[i].accuracy ||
            a[i].per_class_accuracy != b[i].per_class_accuracy) {
            return false;
        }
    }
    return true;
}

}  // namespace

TEST_CASE("evaluate is pure: repeated calls agree and touch nothing") {
    const ToyData toy = small_toy(11);
    BottleneckModel model = small_toy_model(11);
    for (int step = 0; step < 5; ++step) {
        train_step_values(model, toy.phase_train[0], 0.3, 0.1);
    }
    const auto counts_before = model.utilization;

    const EvalResult a = evaluate(model, toy.test, 0.1);
    const EvalResult b = evaluate(model, toy.test, 0.1);
    CHECK(a.accuracy == b.accuracy);
    CHECK(a.mean_loss == b.mean_loss);
    CHECK(a.per_class_accuracy == b.per_class_accuracy);
    CHECK(model.utilization == counts_before);

    CHECK(a.per_class_accuracy.size() == 8);
    CHECK(a.mean_loss > 0.0);
    CHECK(a.accuracy >= 0.0);
    CHECK(a.accuracy <= 1.0);

    EmbeddingDataset wrong = toy.test;
    wrong.num_classes = 9;
    CHECK_THROWS_AS(evaluate(model, wrong, 0.1), DataError);
}

TEST_CASE("per-class accuracy is computed per label and zero when absent") {
    // Probe wired so the prediction is the argmax coordinate of the input.
    LinearProbe probe = make_linear_probe(2, 2, false, 0.1);
    probe.weight.setZero();
    probe.weight(0, 0) = 10.0f;
    probe.weight(1, 1) = 10.0f;

    EmbeddingDataset data;
    data.num_classes = 4;  // classes 2 and 3 never appear
    data.embeddings.resize(2, 4);
    data.embeddings.col(0) << 1.0f, 0.0f;  // pred 0
    data.embeddings.col(1) << 1.0f, 0.0f;  // pred 0
    data.embeddings.col(2) << 0.0f, 1.0f;  // pred 1, labelled 0: miss
    data.embeddings.col(3) << 0.0f, 1.0f;  // pred 1
    data.labels = {0, 0, 0, 1};

    // The probe only scores 2 classes; widen it to match the label space.
    LinearProbe wide = make_linear_probe(2, 4, false, 0.1);
    wide.weight.setZero();
    wide.weight(0, 0) = 10.0f;
    wide.weight(1, 1) = 10.0f;

    const EvalResult r = evaluate(wide, data, 0.0);
    CHECK(r.accuracy == doctest::Approx(0.75));
    REQUIRE(r.per_class_accuracy.size() == 4);
    CHECK(r.per_class_accuracy[0] == doctest::Approx(2.0 / 3.0));
    CHECK(r.per_class_accuracy[1] == doctest::Approx(1.0));
    CHECK(r.per_class_accuracy[2] == 0.0);
    CHECK(r.per_class_accuracy[3] == 0.0);
}

TEST_CASE("metrics files round-trip and keep a readable summary") {
    TempDir dir("metrics");
    const std::string run_dir = dir.file("run");
    std::vector<MetricsRecord> written;
    {
        MetricsWriter writer(run_dir);
        for (int p = 0; p < 2; ++p) {
            for (const char* split : {"train", "test"}) {
                written.push_back(sample_record(p, 5, split));
                writer.append(written.back());
            }
        }
    }

    const auto back = read_metrics(run_dir + "/metrics.ndjson");
    REQUIRE(back.size() == written.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
        CHECK(back[i].phase == written[i].phase);
        CHECK(back[i].epoch == written[i].epoch);
        CHECK(back[i].split == written[i].split);
        CHECK(back[i].mean_loss == written[i].mean_loss);
        CHECK(back[i].accuracy == written[i].accuracy);
        CHECK(back[i].per_class_accuracy == written[i].per_class_accuracy);
        CHECK(back[i].wall_clock_s == written[i].wall_clock_s);
    }

    std::ifstream csv(run_dir + "/summary.csv");
    std::string header;
    REQUIRE(std::getline(csv, header));
    CHECK(header == "phase,epoch,split,loss,accuracy");
    CHECK(count_lines(run_dir + "/summary.csv") == 5);
}

TEST_CASE("a torn final metrics line is skipped; real corruption is not") {
    TempDir dir("torn");
    const std::string run_dir = dir.file("run");
    {
        MetricsWriter writer(run_dir);
        writer.append(sample_record(0, 1, "train"));
        writer.append(sample_record(0, 1, "test"));
    }
    const std::string ndjson = run_dir + "/metrics.ndjson";

    SUBCASE("partial trailing line from an interrupted run") {
        std::ofstream out(ndjson, std::ios::app);
        out << "{\"phase\": 1, \"epo";  // no newline: torn mid-write
        out.close();
        const auto recs = read_metrics(ndjson);
        CHECK(recs.size() == 2);
    }
    SUBCASE("garbage before valid records") {
        std::ofstream out(ndjson, std::ios::trunc);
        out << "not json at all\n";
        out << "{\"phase\": 0}\n";
        out.close();
        CHECK_THROWS_WITH_AS(read_metrics(ndjson),
                             doctest::Contains("unparseable"), FormatError);
    }
    SUBCASE("complete line with missing fields") {
        std::ofstream out(ndjson, std::ios::app);
        out << "{\"phase\": 1}\n";
        out.close();
        CHECK_THROWS_WITH_AS(read_metrics(ndjson),
                             doctest::Contains("bad metrics record"),
                             FormatError);
    }
    SUBCASE("missing file") {
        CHECK_THROWS_AS(read_metrics(dir.file("nope.ndjson")), DataError);
    }
}

TEST_CASE("run_phases snapshots at the configured cadence") {
    const ToyData toy = small_toy(21);

    TrainOptions opts;
    opts.unit = BudgetUnit::steps;
    opts.batch_size = 16;
    opts.label_smoothing = 0.1;
    opts.seed = 99;

    SUBCASE("steps with interior evals") {
        const Curriculum cur = make_curriculum(8, 2, CurriculumMode::class_incremental,
                                               7, /*budget=*/10);
        opts.eval_every = 3;
        LinearProbe probe = make_linear_probe(2, 8, true, 0.1);
        const auto recs =
            run_phases(probe, toy.train_all, cur, toy.test, opts);
        // Per phase: snapshots at steps 3, 6, 9, then the phase-end one at 10,
        // each snapshot a train+test pair.
        REQUIRE(recs.size() == 2 * 8);
        const std::vector<int> want_ticks = {3, 3, 6, 6, 9, 9, 10, 10};
        for (int p = 0; p < 2; ++p) {
            for (int i = 0; i < 8; ++i) {
                const MetricsRecord& r = recs[static_cast<std::size_t>(p * 8 + i)];
                CHECK(r.phase == p);
                CHECK(r.epoch == want_ticks[static_cast<std::size_t>(i)]);
                CHECK(r.split == (i % 2 == 0 ? "train" : "test"));
            }
        }
    }
    SUBCASE("the interior cadence never duplicates the phase-end snapshot") {
        const Curriculum cur = make_curriculum(8, 2, CurriculumMode::class_incremental,
                                               7, /*budget=*/10);
        opts.eval_every = 5;
        LinearProbe probe = make_linear_probe(2, 8, true, 0.1);
        const auto recs =
            run_phases(probe, toy.train_all, cur, toy.test, opts);
        REQUIRE(recs.size() == 2 * 4);
        CHECK(recs[0].epoch == 5);
        CHECK(recs[2].epoch == 10);
        CHECK(recs[4].epoch == 5);
        CHECK(recs[6].epoch == 10);
    }
    SUBCASE("epoch budgets") {
        const Curriculum cur = make_curriculum(8, 2, CurriculumMode::class_incremental,
                                               7, /*budget=*/4);
        opts.unit = BudgetUnit::epochs;
        opts.eval_every = 2;
        LinearProbe probe = make_linear_probe(2, 8, true, 0.1);
        const auto recs =
            run_phases(probe, toy.train_all, cur, toy.test, opts);
        REQUIRE(recs.size() == 2 * 4);
        CHECK(recs[0].epoch == 2);
        CHECK(recs[2].epoch == 4);
        CHECK(recs[4].epoch == 2);
        CHECK(recs[6].epoch == 4);
    }
    SUBCASE("no interior evals by default") {
        const Curriculum cur = make_curriculum(8, 4, CurriculumMode::class_incremental,
                                               7, /*budget=*/5);
        opts.eval_every = 0;
        LinearProbe probe = make_linear_probe(2, 8, true, 0.1);
        const auto recs =
            run_phases(probe, toy.train_all, cur, toy.test, opts);
        REQUIRE(recs.size() == 4 * 2);
        for (int p = 0; p < 4; ++p) {
            CHECK(recs[static_cast<std::size_t>(2 * p)].phase == p);
            CHECK(recs[static_cast<std::size_t>(2 * p)].epoch == 5);
            CHECK(recs[static_cast<std::size_t>(2 * p)].split == "train");
            CHECK(recs[static_cast<std::size_t>(2 * p + 1)].split == "test");
        }
    }
    SUBCASE("empty curriculum is rejected") {
        Curriculum empty;
        LinearProbe probe = make_linear_probe(2, 8, true, 0.1);
        CHECK_THROWS_AS(
            run_phases(probe, toy.train_all, empty, toy.test, opts),
            ConfigError);
    }
}

TEST_CASE("phase-end callbacks fire in order, after the phase snapshot") {
    TempDir dir("callback");
    const ToyData toy = small_toy(31);
    const Curriculum cur =
        make_curriculum(8, 4, CurriculumMode::class_incremental, 7, 5);

    TrainOptions opts;
    opts.unit = BudgetUnit::steps;
    opts.batch_size = 16;
    opts.seed = 99;

    MetricsWriter writer(dir.file("run"));
    std::vector<int> fired;
    std::vector<int> lines_at_fire;
    LinearProbe probe = make_linear_probe(2, 8, true, 0.1);
    run_phases(probe, toy.train_all, cur, toy.test, opts, &writer,
               [&](int p) {
                   fired.push_back(p);
                   lines_at_fire.push_back(
                       count_lines(dir.file("run") + "/metrics.ndjson"));
               });
    CHECK(fired == std::vector<int>{0, 1, 2, 3});
    // Each phase flushes its train+test snapshot before the callback runs.
    CHECK(lines_at_fire == std::vector<int>{2, 4, 6, 8});

    // Wall clock on the emitted records never runs backwards.
    const auto recs = read_metrics(dir.file("run") + "/metrics.ndjson");
    for (std::size_t i = 1; i < recs.size(); ++i) {
        CHECK(recs[i].wall_clock_s >= recs[i - 1].wall_clock_s);
    }
}

TEST_CASE("value_similarity compares values and only values") {
    const ToyData toy = small_toy(41);
    BottleneckModel a = small_toy_model(41);
    BottleneckModel b = small_toy_model(41);

    SUBCASE("identical models score zero") {
        for (int step = 0; step < 5; ++step) {
            train_step_values(a, toy.phase_train[0], 0.3, 0.1);
            train_step_values(b, toy.phase_train[0], 0.3, 0.1);
        }
        CHECK(value_similarity(a, b) == 0.0);
    }
    SUBCASE("freshly initialized models have all-zero values") {
        CHECK(value_similarity(a, b) == 0.0);
    }
    SUBCASE("diverged values score positive and finite") {
        for (int step = 0; step < 5; ++step) {
            train_step_values(a, toy.phase_train[0], 0.3, 0.1);
            train_step_values(b, toy.phase_train[0], 0.3, 0.1);
        }
        train_step_values(b, toy.phase_train[1], 0.3, 0.1);
        const double d = value_similarity(a, b);
        CHECK(d > 0.0);
        CHECK(std::isfinite(d));
        // Symmetry is not promised (the denominator is a's magnitudes), but
        // both directions must agree on "the values differ".
        CHECK(value_similarity(b, a) > 0.0);
    }
    SUBCASE("architecture mismatch is not comparable") {
        BottleneckConfig other = a.config;
        other.C = 3;
        other.K = 4;
        BottleneckModel c = make_model(other);
        CHECK_THROWS_AS(value_similarity(a, c), ComparabilityError);
    }
    SUBCASE("different keys are not comparable") {
        BottleneckModel c = small_toy_model(42);
        CHECK_THROWS_AS(value_similarity(a, c), ComparabilityError);
    }
    SUBCASE("pruned sizes are not comparable") {
        train_step_values(a, toy.phase_train[0], 0.3, 0.1);
        BottleneckModel c = a;
        prune_dormant(c);
        if (c.codebooks[0].K() < a.codebooks[0].K()) {
            CHECK_THROWS_AS(value_similarity(a, c), ComparabilityError);
        }
    }
}

TEST_CASE("noise sweep: alpha zero reproduces the clean evaluation") {
    const ToyData toy = small_toy(51);
    BottleneckModel model = small_toy_model(51);
    for (int step = 0; step < 10; ++step) {
        train_step_values(model, toy.train_all, 0.3, 0.1);
    }

    const std::vector<double> alphas = {0.0, 0.05, 0.5};
    const auto sweep = noise_sweep(model, toy.test, alphas, 0.1, 1234);
    REQUIRE(sweep.size() == 3);
    for (std::size_t i = 0; i < alphas.size(); ++i) {
        CHECK(sweep[i].first == alphas[i]);
    }

    const EvalResult clean = evaluate(model, toy.test, 0.1);
    CHECK(sweep[0].second.accuracy == clean.accuracy);
    CHECK(sweep[0].second.mean_loss == clean.mean_loss);

    const auto again = noise_sweep(model, toy.test, alphas, 0.1, 1234);
    for (std::size_t i = 0; i < sweep.size(); ++i) {
        CHECK(again[i].second.accuracy == sweep[i].second.accuracy);
        CHECK(again[i].second.mean_loss == sweep[i].second.mean_loss);
    }
}

TEST_CASE("utilization report tallies dormant pairs") {
    const ToyData toy = small_toy(61);
    BottleneckModel model = small_toy_model(61);

    const UtilizationReport fresh = key_utilization_report(model);
    CHECK(fresh.total_pairs == 2 * 16);
    CHECK(fresh.unused_pairs == 2 * 16);
    CHECK(fresh.fraction_unused == 1.0);

    for (int step = 0; step < 5; ++step) {
        train_step_values(model, toy.train_all, 0.3, 0.1);
    }
    const UtilizationReport used = key_utilization_report(model);
    CHECK(used.total_pairs == 2 * 16);
    CHECK(used.unused_pairs < used.total_pairs);
    CHECK(used.counts == model.utilization);
    std::size_t zeros = 0;
    for (const auto& row : used.counts) {
        for (std::uint64_t c : row) {
            if (c == 0) ++zeros;
        }
    }
    CHECK(used.unused_pairs == zeros);
    CHECK(used.fraction_unused ==
          doctest::Approx(static_cast<double>(zeros) / 32.0));
}

TEST_CASE("coordinate dumps list keys, then projected heads") {
    TempDir dir("coords");
    const ToyData toy = small_toy(71);
    const BottleneckModel model = small_toy_model(71);

    SUBCASE("keys only") {
        const std::string path = dir.file("keys.csv");
        write_coords_csv(model, nullptr, path);
        std::ifstream in(path);
        std::string header;
        REQUIRE(std::getline(in, header));
        CHECK(header == "codebook,kind,dim0,dim1");
        int keys = 0;
        std::string line;
        while (std::getline(in, line)) {
            CHECK(line.find(",key,") != std::string::npos);
            ++keys;
        }
        CHECK(keys == 2 * 16);
    }
    SUBCASE("keys plus heads") {
        EmbeddingDataset few;
        few.num_classes = toy.test.num_classes;
        few.embeddings = toy.test.embeddings.leftCols(3);
        few.labels = {toy.test.labels[0], toy.test.labels[1],
                      toy.test.labels[2]};
        const std::string path = dir.file("both.csv");
        write_coords_csv(model, &few, path);
        int keys = 0;
        int heads = 0;
        std::ifstream in(path);
        std::string line;
        std::getline(in, line);  // header
        while (std::getline(in, line)) {
            if (line.find(",key,") != std::string::npos) ++keys;
            if (line.find(",head,") != std::string::npos) ++heads;
        }
        CHECK(keys == 2 * 16);
        CHECK(heads == 3 * 2);
    }
    SUBCASE("unwritable path") {
        CHECK_THROWS_AS(
            write_coords_csv(model, nullptr, dir.file("no/such/dir.csv")),
            DataError);
    }
}

TEST_CASE("experiments replay bit-identically from their seed") {
    TempDir dir("replay");
    const ToyData toy = small_toy(81);

    ExperimentConfig cfg;
    cfg.kind = ExperimentConfig::Kind::bottleneck;
    cfg.model.C = 2;
    cfg.model.K = 16;
    cfg.model.d_key = 2;
    cfg.model.num_classes = 8;
    cfg.model.d_value = 8;
    cfg.model.m_z = 2;
    cfg.num_phases = 4;
    cfg.budget = 5;
    cfg.unit = BudgetUnit::steps;
    cfg.batch_size = 16;
    cfg.init_source = ExperimentConfig::InitSource::uniform;
    cfg.init_samples = 128;
    cfg.init_batch_size = 64;
    cfg.init_epochs = 2;
    cfg.seed = 4242;

    SUBCASE("bottleneck") {
        const ExperimentResult r1 = run_experiment(cfg, toy.train_all, toy.test);
        const ExperimentResult r2 = run_experiment(cfg, toy.train_all, toy.test);
        REQUIRE(r1.model.has_value());
        REQUIRE(r2.model.has_value());
        save_checkpoint(*r1.model, dir.file("a.ckpt"));
        save_checkpoint(*r2.model, dir.file("b.ckpt"));
        CHECK(read_bytes(dir.file("a.ckpt")) == read_bytes(dir.file("b.ckpt")));
        CHECK(records_equal_ignoring_clock(r1.records, r2.records));
        // 4 phases, train+test snapshot each.
        CHECK(r1.records.size() == 8);
    }
    SUBCASE("linear probe") {
        cfg.kind = ExperimentConfig::Kind::linear_probe;
        cfg.probe_lr = 0.1;
        const ExperimentResult r1 = run_experiment(cfg, toy.train_all, toy.test);
        const ExperimentResult r2 = run_experiment(cfg, toy.train_all, toy.test);
        REQUIRE(r1.linear.has_value());
        REQUIRE(r2.linear.has_value());
        save_probe(*r1.linear, dir.file("la.ckpt"));
        save_probe(*r2.linear, dir.file("lb.ckpt"));
        CHECK(read_bytes(dir.file("la.ckpt")) ==
              read_bytes(dir.file("lb.ckpt")));
    }
    SUBCASE("mlp probe") {
        cfg.kind = ExperimentConfig::Kind::mlp_probe;
        cfg.hidden_dim = 8;
        cfg.probe_lr = 0.1;
        const ExperimentResult r1 = run_experiment(cfg, toy.train_all, toy.test);
        const ExperimentResult r2 = run_experiment(cfg, toy.train_all, toy.test);
        REQUIRE(r1.mlp.has_value());
        REQUIRE(r2.mlp.has_value());
        save_probe(*r1.mlp, dir.file("ma.ckpt"));
        save_probe(*r2.mlp, dir.file("mb.ckpt"));
        CHECK(read_bytes(dir.file("ma.ckpt")) ==
              read_bytes(dir.file("mb.ckpt")));
    }
    SUBCASE("a different seed moves the result") {
        const ExperimentResult r1 = run_experiment(cfg, toy.train_all, toy.test);
        cfg.seed = 4243;
        const ExperimentResult r2 = run_experiment(cfg, toy.train_all, toy.test);
        save_checkpoint(*r1.model, dir.file("s1.ckpt"));
        save_checkpoint(*r2.model, dir.file("s2.ckpt"));
        CHECK(read_bytes(dir.file("s1.ckpt")) !=
              read_bytes(dir.file("s2.ckpt")));
    }
}

TEST_CASE("an explicit curriculum overrides the generated one") {
    const ToyData toy = small_toy(91);

    Curriculum two_phase;
    two_phase.mode = CurriculumMode::class_incremental;
    two_phase.phases.push_back({{0, 1, 2, 3}, 6});
    two_phase.phases.push_back({{4, 5, 6, 7}, 6});

    ExperimentConfig cfg;
    cfg.kind = ExperimentConfig::Kind::linear_probe;
    cfg.probe_lr = 0.1;
    cfg.curriculum = two_phase;
    cfg.num_phases = 4;  // ignored in favor of the explicit curriculum
    cfg.unit = BudgetUnit::steps;
    cfg.batch_size = 16;
    cfg.seed = 5;

    std::vector<int> fired;
    const ExperimentResult r =
        run_experiment(cfg, toy.train_all, toy.test, nullptr, nullptr,
                       [&](int p) { fired.push_back(p); });
    CHECK(fired == std::vector<int>{0, 1});
    REQUIRE(r.records.size() == 4);
    CHECK(r.records[0].phase == 0);
    CHECK(r.records[2].phase == 1);
    CHECK(r.records[3].epoch == 6);
}
