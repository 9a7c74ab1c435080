#include "dkvb/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>

#include <CLI11.hpp>
#include <json.hpp>

#include "dkvb/checkpoint.hpp"
#include "dkvb/common.hpp"
#include "dkvb/harness.hpp"

namespace dkvb {

namespace {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Flat dotted-key config: file values, overridden by flags, with every
// effective value (defaults included) recorded for the resolved-config echo.

class FlatConfig {
public:
    static FlatConfig load(const std::string& path) {
        std::ifstream in(path);
        if (!in) {
            throw DataError("config: cannot open " + path);
        }
        json j;
        try {
            j = json::parse(in);
        } catch (const json::exception& e) {
            throw FormatError(path + ": unparseable JSON (" +
                              std::string(e.what()) + ")");
        }
        if (!j.is_object()) {
            throw ConfigError(path + ": config root must be a JSON object");
        }
        FlatConfig cfg;
        for (const auto& [key, value] : j.items()) {
            if (value.is_object()) {
                throw ConfigError(path + ": key `" + key +
                                  "` is nested; use flat dotted keys");
            }
            cfg.values_[key] = value;
        }
        return cfg;
    }

    void set(const std::string& key, json value) {
        values_[key] = std::move(value);
    }

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    template <typename T>
    T get(const std::string& key, const T& fallback) {
        consumed_.insert(key);
        auto it = values_.find(key);
        if (it == values_.end()) {
            values_[key] = json(fallback);  // materialize for the echo
            return fallback;
        }
        return convert<T>(key, it->second);
    }

    template <typename T>
    T require(const std::string& key, const char* what) {
        consumed_.insert(key);
        auto it = values_.find(key);
        if (it == values_.end()) {
            throw ConfigError("missing required setting `" + key + "` (" +
                              what + ")");
        }
        return convert<T>(key, it->second);
    }

    /// Reject config keys nothing consumed — almost always a typo.
    void finish() const {
        std::string unknown;
        for (const auto& [key, value] : values_) {
            if (consumed_.count(key) == 0) {
                unknown += unknown.empty() ? key : ", " + key;
            }
        }
        if (!unknown.empty()) {
            throw ConfigError("unknown config keys: " + unknown);
        }
    }

    void write(const std::string& path) const {
        json j(json::value_t::object);
        for (const auto& [key, value] : values_) j[key] = value;
        std::ofstream out(path, std::ios::trunc);
        if (!out) {
            throw DataError("config: cannot write " + path);
        }
        out << j.dump(2) << "\n";
    }

private:
    template <typename T>
    T convert(const std::string& key, const json& v) {
        try {
            return v.get<T>();
        } catch (const json::exception&) {
            throw ConfigError("setting `" + key + "` has the wrong type (" +
                              v.dump() + ")");
        }
    }

    std::map<std::string, json> values_;
    mutable std::set<std::string> consumed_;
};

// Apply `--set key=value` pairs; values parse as JSON literals, falling back
// to plain strings.
void apply_sets(FlatConfig& cfg, const std::vector<std::string>& sets) {
    for (const std::string& kv : sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos || eq == 0) {
            throw ConfigError("--set expects key=value, got `" + kv + "`");
        }
        const std::string key = kv.substr(0, eq);
        const std::string raw = kv.substr(eq + 1);
        json parsed = json::parse(raw, nullptr, false);
        cfg.set(key, parsed.is_discarded() ? json(raw) : parsed);
    }
}

std::uint64_t resolve_seed(FlatConfig& cfg,
                           const std::optional<std::uint64_t>& flag) {
    if (flag.has_value()) {
        cfg.set("seed", *flag);
        return cfg.get<std::uint64_t>("seed", *flag);
    }
    if (cfg.has("seed")) {
        return cfg.get<std::uint64_t>("seed", 0);
    }
    if (const char* env = std::getenv("DKVB_SEED")) {
        try {
            const std::uint64_t seed = std::stoull(env);
            cfg.set("seed", seed);
            return cfg.get<std::uint64_t>("seed", seed);
        } catch (const std::exception&) {
            throw ConfigError("DKVB_SEED is not an unsigned integer");
        }
    }
    return cfg.get<std::uint64_t>("seed", 0);
}

std::string ensure_out_dir(const std::string& out) {
    if (out.empty()) {
        throw ConfigError("--out directory is required for this command");
    }
    std::filesystem::create_directories(out);
    return out;
}

// ---------------------------------------------------------------------------
// Shared config -> struct materialization.

BottleneckConfig bottleneck_from(FlatConfig& cfg, std::uint64_t seed) {
    BottleneckConfig mc;
    mc.C = cfg.get("bottleneck.C", mc.C);
    mc.K = cfg.get("bottleneck.K", mc.K);
    mc.d_key = cfg.get("bottleneck.d_key", mc.d_key);
    mc.d_value = cfg.get("bottleneck.d_value", mc.d_value);
    mc.num_classes = cfg.get("bottleneck.num_classes", mc.num_classes);
    mc.m_z = cfg.get("bottleneck.m_z", mc.m_z);
    mc.gamma = cfg.get("bottleneck.gamma", mc.gamma);
    mc.expiry_fraction = cfg.get("bottleneck.expiry_fraction", mc.expiry_fraction);
    mc.lr_values = cfg.get("bottleneck.lr_values", mc.lr_values);
    mc.label_smoothing = cfg.get("bottleneck.label_smoothing", mc.label_smoothing);
    mc.batch_size = cfg.get("bottleneck.batch_size", mc.batch_size);
    mc.key_init_epochs = cfg.get("bottleneck.key_init_epochs", mc.key_init_epochs);
    mc.identity_projection =
        cfg.get("bottleneck.identity_projection", mc.identity_projection);
    mc.seed = seed;
    mc.validate();
    return mc;
}

CurriculumMode mode_from(const std::string& name) {
    if (name == "iid") return CurriculumMode::iid;
    if (name == "class_incremental") return CurriculumMode::class_incremental;
    throw ConfigError("curriculum.mode must be `iid` or `class_incremental`, got `" +
                      name + "`");
}

BudgetUnit unit_from(const std::string& name) {
    if (name == "steps") return BudgetUnit::steps;
    if (name == "epochs") return BudgetUnit::epochs;
    throw ConfigError("curriculum.unit must be `steps` or `epochs`, got `" +
                      name + "`");
}

json curriculum_to_json(const Curriculum& cur) {
    json phases = json::array();
    for (const auto& p : cur.phases) {
        phases.push_back(json{{"classes", p.classes}, {"budget", p.budget}});
    }
    return json{{"mode", cur.mode == CurriculumMode::iid ? "iid"
                                                         : "class_incremental"},
                {"phases", phases}};
}

Curriculum curriculum_from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("curriculum: cannot open " + path);
    }
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw FormatError(path + ": unparseable JSON (" +
                          std::string(e.what()) + ")");
    }
    try {
        Curriculum cur;
        cur.mode = mode_from(j.at("mode").get<std::string>());
        for (const auto& pj : j.at("phases")) {
            CurriculumPhase phase;
            phase.classes = pj.at("classes").get<std::vector<int>>();
            phase.budget = pj.at("budget").get<int>();
            cur.phases.push_back(std::move(phase));
        }
        if (cur.phases.empty()) {
            throw FormatError(path + ": curriculum has no phases");
        }
        return cur;
    } catch (const json::exception& e) {
        throw FormatError(path + ": bad curriculum (" + std::string(e.what()) +
                          ")");
    }
}

/// Curriculum from `curriculum.file` when given, otherwise built from the
/// seeded class partition settings.
Curriculum curriculum_from(FlatConfig& cfg, int num_classes,
                           std::uint64_t seed) {
    const std::string file = cfg.get<std::string>("curriculum.file", "");
    if (!file.empty()) {
        // Budget/unit of an explicit curriculum come from its file; mode and
        // phase count too. Only the unit key still applies.
        return curriculum_from_file(file);
    }
    const int phases = cfg.get("curriculum.num_phases", 4);
    const CurriculumMode mode =
        mode_from(cfg.get<std::string>("curriculum.mode", "class_incremental"));
    const int budget = cfg.get("curriculum.budget", 1000);
    return make_curriculum(num_classes, mode == CurriculumMode::iid ? 1 : phases,
                           mode, derive_seed(seed, "curriculum"), budget);
}

TrainOptions train_options_from(FlatConfig& cfg, std::uint64_t seed) {
    TrainOptions opts;
    opts.unit = unit_from(cfg.get<std::string>("curriculum.unit", "steps"));
    opts.batch_size = cfg.get("train.batch_size", 0);
    opts.eval_every = cfg.get("train.eval_every", 0);
    opts.seed = derive_seed(seed, "train-stream");
    return opts;
}

json eval_to_json(const EvalResult& r) {
    return json{{"accuracy", r.accuracy},
                {"mean_loss", r.mean_loss},
                {"per_class_accuracy", r.per_class_accuracy}};
}

// ---------------------------------------------------------------------------
// Subcommand bodies. Each receives its FlatConfig after flag overrides.

int cmd_gen_toy(FlatConfig& cfg, const std::string& out,
                std::uint64_t seed) {
    ToySpec spec = default_toy_spec(seed);
    spec.std_dev = cfg.get("toy.std", spec.std_dev);
    spec.samples_per_class_per_phase =
        cfg.get("toy.samples_per_class", spec.samples_per_class_per_phase);
    spec.num_phases = cfg.get("toy.num_phases", spec.num_phases);
    spec.steps_per_phase = cfg.get("toy.steps_per_phase", spec.steps_per_phase);
    cfg.finish();
    const std::string dir = ensure_out_dir(out);
    cfg.write(dir + "/resolved_config.json");

    const ToyData toy = gen_toy(spec);
    write_embeddings(toy.train_all, dir + "/toy_train.bin");
    write_embeddings(toy.test, dir + "/toy_test.bin");
    for (std::size_t p = 0; p < toy.phase_train.size(); ++p) {
        write_embeddings(toy.phase_train[p],
                         dir + "/toy_phase" + std::to_string(p) + ".bin");
    }
    std::ofstream cur(dir + "/curriculum.json", std::ios::trunc);
    cur << curriculum_to_json(toy.curriculum).dump(2) << "\n";
    if (!cur) {
        throw DataError("gen-toy: cannot write curriculum.json under " + dir);
    }
    std::cout << "wrote " << toy.phase_train.size() << " phase files, "
              << toy.train_all.n() << " train / " << toy.test.n()
              << " test samples under " << dir << "\n";
    return 0;
}

int cmd_init_keys(FlatConfig& cfg, const std::string& out,
                  std::uint64_t seed) {
    const BottleneckConfig mc = bottleneck_from(cfg, seed);
    const std::string source = cfg.get<std::string>("init.source", "dataset");
    const int epochs = cfg.get("init.epochs", 0);
    const int batch = cfg.get("init.batch_size", 0);

    EmbeddingDataset stream;
    if (source == "uniform") {
        stream = gen_uniform_embeddings(cfg.get("init.samples", 2048), mc.m_z,
                                        derive_seed(seed, "init-stream"),
                                        cfg.get("init.lo", 0.0),
                                        cfg.get("init.hi", 1.0));
    } else if (source == "dataset") {
        stream = read_embeddings(
            cfg.require<std::string>("data.init", "embedding file for key "
                                                  "initialization; labels are "
                                                  "ignored"));
    } else {
        throw ConfigError("init.source must be `uniform` or `dataset`, got `" +
                          source + "`");
    }
    cfg.finish();
    const std::string dir = ensure_out_dir(out);
    cfg.write(dir + "/resolved_config.json");

    BottleneckModel model = make_model(mc);
    init_keys_phase(model, stream.embeddings,
                    epochs > 0 ? epochs : mc.key_init_epochs, batch);
    save_checkpoint(model, dir + "/model.ckpt");
    std::cout << "initialized and froze keys for " << mc.C << " codebooks ("
              << mc.K << " pairs each); wrote " << dir << "/model.ckpt\n";
    return 0;
}

int cmd_train(FlatConfig& cfg, const std::string& out, std::uint64_t seed) {
    BottleneckModel model =
        load_checkpoint(cfg.require<std::string>("model.in", "checkpoint from "
                                                             "init-keys"));
    const EmbeddingDataset train_ds = read_embeddings(
        cfg.require<std::string>("data.train", "training embeddings"));
    const EmbeddingDataset test_ds = read_embeddings(
        cfg.require<std::string>("data.test", "held-out embeddings"));
    const Curriculum curriculum =
        curriculum_from(cfg, train_ds.num_classes, seed);
    const TrainOptions opts = train_options_from(cfg, seed);
    cfg.finish();
    const std::string dir = ensure_out_dir(out);
    cfg.write(dir + "/resolved_config.json");

    MetricsWriter writer(dir);
    run_phases(model, train_ds, curriculum, test_ds, opts, &writer);
    save_checkpoint(model, dir + "/model.ckpt");
    const EvalResult final = evaluate(model, test_ds, model.config.label_smoothing);
    std::cout << "final test accuracy " << final.accuracy << ", mean loss "
              << final.mean_loss << "; metrics under " << dir << "\n";
    return 0;
}

int cmd_baseline(FlatConfig& cfg, const std::string& out, std::uint64_t seed) {
    const std::string kind = cfg.get<std::string>("baseline.kind", "linear");
    const double lr = cfg.get("baseline.lr", 0.001);
    const double weight_decay = cfg.get("baseline.weight_decay", 0.0);
    const double eps = cfg.get("baseline.label_smoothing", 0.1);
    const EmbeddingDataset train_ds = read_embeddings(
        cfg.require<std::string>("data.train", "training embeddings"));
    const EmbeddingDataset test_ds = read_embeddings(
        cfg.require<std::string>("data.test", "held-out embeddings"));
    const Curriculum curriculum =
        curriculum_from(cfg, train_ds.num_classes, seed);
    TrainOptions opts = train_options_from(cfg, seed);
    opts.lr = lr;
    opts.label_smoothing = eps;

    const int hidden = cfg.get("baseline.hidden_dim", 32);
    cfg.finish();
    const std::string dir = ensure_out_dir(out);
    cfg.write(dir + "/resolved_config.json");
    MetricsWriter writer(dir);

    double final_acc = 0.0;
    if (kind == "linear" || kind == "linear_nobias") {
        LinearProbe probe =
            make_linear_probe(train_ds.dim(), train_ds.num_classes,
                              kind == "linear", lr, weight_decay);
        run_phases(probe, train_ds, curriculum, test_ds, opts, &writer);
        save_probe(probe, dir + "/probe.ckpt");
        final_acc = evaluate(probe, test_ds, eps).accuracy;
    } else if (kind == "mlp") {
        MlpProbe probe = make_mlp_probe(train_ds.dim(), hidden,
                                        train_ds.num_classes,
                                        derive_seed(seed, "mlp-probe"), lr,
                                        weight_decay);
        run_phases(probe, train_ds, curriculum, test_ds, opts, &writer);
        save_probe(probe, dir + "/probe.ckpt");
        final_acc = evaluate(probe, test_ds, eps).accuracy;
    } else {
        throw ConfigError(
            "baseline.kind must be `linear`, `linear_nobias`, or `mlp`, got `" +
            kind + "`");
    }
    std::cout << "final test accuracy " << final_acc << "; metrics under "
              << dir << "\n";
    return 0;
}

int cmd_eval(FlatConfig& cfg, const std::string& out) {
    const std::string model_path =
        cfg.require<std::string>("model.in", "checkpoint to evaluate");
    const EmbeddingDataset test_ds = read_embeddings(
        cfg.require<std::string>("data.test", "embeddings to evaluate on"));
    const double probe_eps = cfg.get("baseline.label_smoothing", 0.1);
    cfg.finish();

    EvalResult result;
    switch (checkpoint_kind(model_path)) {
        case CheckpointKind::bottleneck: {
            const BottleneckModel model = load_checkpoint(model_path);
            result = evaluate(model, test_ds, model.config.label_smoothing);
            break;
        }
        case CheckpointKind::linear_probe:
            result = evaluate(load_linear_probe(model_path), test_ds, probe_eps);
            break;
        case CheckpointKind::mlp_probe:
            result = evaluate(load_mlp_probe(model_path), test_ds, probe_eps);
            break;
    }
    const json j = eval_to_json(result);
    std::cout << j.dump() << "\n";
    if (!out.empty()) {
        const std::string dir = ensure_out_dir(out);
        cfg.write(dir + "/resolved_config.json");
        std::ofstream f(dir + "/eval.json", std::ios::trunc);
        f << j.dump(2) << "\n";
        if (!f) {
            throw DataError("eval: cannot write eval.json under " + dir);
        }
    }
    return 0;
}

int cmd_prune(FlatConfig& cfg, const std::string& out) {
    const std::string model_path =
        cfg.require<std::string>("model.in", "checkpoint to prune");
    cfg.finish();
    BottleneckModel model = load_checkpoint(model_path);
    std::uint64_t before = 0, after = 0;
    for (const auto& cb : model.codebooks) before += static_cast<std::uint64_t>(cb.K());
    prune_dormant(model);
    for (const auto& cb : model.codebooks) after += static_cast<std::uint64_t>(cb.K());
    const std::string dir = ensure_out_dir(out);
    cfg.write(dir + "/resolved_config.json");
    save_checkpoint(model, dir + "/model.ckpt");
    std::cout << "pruned " << (before - after) << " of " << before
              << " pairs; wrote " << dir << "/model.ckpt\n";
    return 0;
}

int cmd_report(FlatConfig& cfg, const std::string& out) {
    const std::string model_path =
        cfg.require<std::string>("model.in", "checkpoint to report on");
    const std::string data_path = cfg.get<std::string>("data.test", "");
    cfg.finish();
    const BottleneckModel model = load_checkpoint(model_path);
    const std::string dir = ensure_out_dir(out);
    cfg.write(dir + "/resolved_config.json");

    const UtilizationReport report = key_utilization_report(model);
    json per_codebook = json::array();
    for (const auto& counts : report.counts) {
        std::uint64_t unused = 0;
        for (std::uint64_t c : counts) {
            if (c == 0) ++unused;
        }
        per_codebook.push_back(json{{"K", counts.size()}, {"unused", unused}});
    }
    std::ofstream uj(dir + "/utilization.json", std::ios::trunc);
    uj << json{{"total_pairs", report.total_pairs},
               {"unused_pairs", report.unused_pairs},
               {"fraction_unused", report.fraction_unused},
               {"per_codebook", per_codebook}}
              .dump(2)
       << "\n";
    std::ofstream uc(dir + "/utilization.csv", std::ios::trunc);
    uc << "codebook,pair,count\n";
    for (std::size_t c = 0; c < report.counts.size(); ++c) {
        for (std::size_t i = 0; i < report.counts[c].size(); ++i) {
            uc << c << ',' << i << ',' << report.counts[c][i] << "\n";
        }
    }
    if (!uj || !uc) {
        throw DataError("report: cannot write utilization files under " + dir);
    }

    if (data_path.empty()) {
        write_coords_csv(model, nullptr, dir + "/coords.csv");
    } else {
        const EmbeddingDataset ds = read_embeddings(data_path);
        write_coords_csv(model, &ds, dir + "/coords.csv");
    }
    std::cout << "fraction of pairs never used: " << report.fraction_unused
              << "; reports under " << dir << "\n";
    return 0;
}

int cmd_noise_sweep(FlatConfig& cfg, const std::string& out,
                    std::uint64_t seed) {
    const std::string model_path =
        cfg.require<std::string>("model.in", "bottleneck checkpoint");
    const EmbeddingDataset test_ds = read_embeddings(
        cfg.require<std::string>("data.test", "embeddings to evaluate on"));
    const std::vector<double> alphas = cfg.get<std::vector<double>>(
        "noise.alphas", {0.0, 0.001, 0.01, 0.1, 1.0});
    if (checkpoint_kind(model_path) != CheckpointKind::bottleneck) {
        throw ConfigError("noise-sweep expects a bottleneck checkpoint");
    }
    cfg.finish();
    const BottleneckModel model = load_checkpoint(model_path);
    const std::string dir = ensure_out_dir(out);
    cfg.write(dir + "/resolved_config.json");

    const auto sweep = noise_sweep(model, test_ds, alphas,
                                   model.config.label_smoothing,
                                   derive_seed(seed, "noise-sweep"));
    std::ofstream csv(dir + "/noise_sweep.csv", std::ios::trunc);
    csv << "alpha,accuracy,mean_loss\n";
    for (const auto& [alpha, r] : sweep) {
        csv << alpha << ',' << r.accuracy << ',' << r.mean_loss << "\n";
        std::cout << "alpha " << alpha << ": accuracy " << r.accuracy << "\n";
    }
    if (!csv) {
        throw DataError("noise-sweep: cannot write noise_sweep.csv under " + dir);
    }
    return 0;
}

// ---------------------------------------------------------------------------

struct CommonFlags {
    std::string config_path;
    std::string out;
    std::vector<std::string> sets;

    void attach(CLI::App* cmd, bool with_seed = true) {
        cmd->add_option("--config", config_path,
                        "JSON config file with flat dotted keys");
        cmd->add_option("--out", out, "output directory");
        if (with_seed) {
            seed_opt = cmd->add_option(
                "--seed", seed_slot,
                "master seed (falls back to DKVB_SEED, then 0)");
        }
        cmd->add_option("--set", sets,
                        "override a config key, e.g. --set bottleneck.C=20")
            ->type_size(1)
            ->expected(0, -1);
    }

    std::optional<std::uint64_t> seed() const {
        if (seed_opt != nullptr && seed_opt->count() > 0) return seed_slot;
        return std::nullopt;
    }

    FlatConfig resolve() const {
        FlatConfig cfg = config_path.empty() ? FlatConfig()
                                             : FlatConfig::load(config_path);
        apply_sets(cfg, sets);
        return cfg;
    }

private:
    CLI::Option* seed_opt = nullptr;
    std::uint64_t seed_slot = 0;
};

// Bind a typed flag that overrides config key `key` when given. The default
// is display-only (help text); the applier fires only on explicit use, so
// config files still win over untouched flags.
template <typename T>
void bind_flag(CLI::App* cmd,
               std::vector<std::function<void(FlatConfig&)>>& appliers,
               const std::string& flag, const std::string& key,
               const char* help, T default_value = T{}) {
    auto value = std::make_shared<T>(std::move(default_value));
    CLI::Option* opt = cmd->add_option(flag, *value, help);
    appliers.push_back([opt, value, key](FlatConfig& cfg) {
        if (opt->count() > 0) cfg.set(key, json(*value));
    });
}

}  // namespace

int dispatch(int argc, const char* const* argv) {
    CLI::App app{"discrete key-value bottleneck: datasets, key initialization, "
                 "value training, baselines, and reports"};
    app.option_defaults()->always_capture_default();
    app.require_subcommand(1);

    struct Cmd {
        CLI::App* sub = nullptr;
        CommonFlags common;
        std::vector<std::function<void(FlatConfig&)>> appliers;
    };
    std::map<std::string, Cmd> cmds;

    const auto add_cmd = [&](const std::string& name, const char* desc,
                             bool with_seed = true) -> Cmd& {
        Cmd& cmd = cmds[name];
        cmd.sub = app.add_subcommand(name, desc);
        cmd.common.attach(cmd.sub, with_seed);
        return cmd;
    };

    {
        Cmd& c = add_cmd("gen-toy", "generate the synthetic 2D task files");
        bind_flag<double>(c.sub, c.appliers, "--std", "toy.std",
                          "per-class Gaussian standard deviation", 0.03);
        bind_flag<int>(c.sub, c.appliers, "--samples-per-class",
                       "toy.samples_per_class",
                       "train samples per class per phase (test uses the same "
                       "count)",
                       100);
        bind_flag<int>(c.sub, c.appliers, "--phases", "toy.num_phases",
                       "number of incremental phases", 4);
        bind_flag<int>(c.sub, c.appliers, "--steps-per-phase",
                       "toy.steps_per_phase",
                       "training steps recorded in the curriculum", 1000);
    }
    {
        Cmd& c = add_cmd("init-keys",
                         "place and freeze codebook keys from an unlabeled stream");
        bind_flag<std::string>(c.sub, c.appliers, "--data", "data.init",
                               "embedding file streamed for initialization");
        bind_flag<std::string>(c.sub, c.appliers, "--source", "init.source",
                               "`dataset` or `uniform`", "dataset");
        bind_flag<int>(c.sub, c.appliers, "--samples", "init.samples",
                       "uniform-source sample count", 2048);
        bind_flag<int>(c.sub, c.appliers, "--epochs", "init.epochs",
                       "passes over the stream (0 = bottleneck.key_init_epochs)");
        bind_flag<int>(c.sub, c.appliers, "--batch-size", "init.batch_size",
                       "initialization batch (0 = bottleneck.batch_size)");
        bind_flag<int>(c.sub, c.appliers, "--C", "bottleneck.C",
                       "codebook count", 256);
        bind_flag<int>(c.sub, c.appliers, "--K", "bottleneck.K",
                       "pairs per codebook", 4096);
    }
    {
        Cmd& c = add_cmd("train", "train value codes through a curriculum");
        bind_flag<std::string>(c.sub, c.appliers, "--model", "model.in",
                               "checkpoint with frozen keys");
        bind_flag<std::string>(c.sub, c.appliers, "--data", "data.train",
                               "training embedding file");
        bind_flag<std::string>(c.sub, c.appliers, "--test", "data.test",
                               "held-out embedding file");
        bind_flag<std::string>(c.sub, c.appliers, "--curriculum",
                               "curriculum.file",
                               "explicit curriculum JSON (e.g. from gen-toy)");
        bind_flag<std::string>(c.sub, c.appliers, "--mode", "curriculum.mode",
                               "`class_incremental` or `iid`",
                               "class_incremental");
        bind_flag<int>(c.sub, c.appliers, "--phases", "curriculum.num_phases",
                       "phase count when no curriculum file is given", 4);
        bind_flag<int>(c.sub, c.appliers, "--budget", "curriculum.budget",
                       "steps or epochs per phase", 1000);
        bind_flag<std::string>(c.sub, c.appliers, "--unit", "curriculum.unit",
                               "budget unit: `steps` or `epochs`", "steps");
        bind_flag<int>(c.sub, c.appliers, "--batch-size", "train.batch_size",
                       "mini-batch size (0 = full phase data)");
        bind_flag<int>(c.sub, c.appliers, "--eval-every", "train.eval_every",
                       "snapshot cadence in budget units (0 = phase ends only)");
    }
    {
        Cmd& c = add_cmd("eval", "evaluate a checkpoint on an embedding file");
        bind_flag<std::string>(c.sub, c.appliers, "--model", "model.in",
                               "checkpoint to evaluate");
        bind_flag<std::string>(c.sub, c.appliers, "--data", "data.test",
                               "embedding file");
        bind_flag<double>(c.sub, c.appliers, "--label-smoothing",
                          "baseline.label_smoothing",
                          "smoothing for probe loss reporting", 0.1);
    }
    {
        Cmd& c = add_cmd("baseline", "train a linear or MLP probe baseline");
        bind_flag<std::string>(c.sub, c.appliers, "--kind", "baseline.kind",
                               "`linear`, `linear_nobias`, or `mlp`", "linear");
        bind_flag<int>(c.sub, c.appliers, "--hidden-dim", "baseline.hidden_dim",
                       "MLP hidden width", 32);
        bind_flag<double>(c.sub, c.appliers, "--lr", "baseline.lr",
                          "learning rate", 0.001);
        bind_flag<double>(c.sub, c.appliers, "--weight-decay",
                          "baseline.weight_decay", "additive weight decay");
        bind_flag<double>(c.sub, c.appliers, "--label-smoothing",
                          "baseline.label_smoothing",
                          "cross-entropy smoothing", 0.1);
        bind_flag<std::string>(c.sub, c.appliers, "--data", "data.train",
                               "training embedding file");
        bind_flag<std::string>(c.sub, c.appliers, "--test", "data.test",
                               "held-out embedding file");
        bind_flag<std::string>(c.sub, c.appliers, "--curriculum",
                               "curriculum.file", "explicit curriculum JSON");
        bind_flag<std::string>(c.sub, c.appliers, "--mode", "curriculum.mode",
                               "`class_incremental` or `iid`",
                               "class_incremental");
        bind_flag<int>(c.sub, c.appliers, "--phases", "curriculum.num_phases",
                       "phase count when no curriculum file is given", 4);
        bind_flag<int>(c.sub, c.appliers, "--budget", "curriculum.budget",
                       "steps or epochs per phase", 1000);
        bind_flag<std::string>(c.sub, c.appliers, "--unit", "curriculum.unit",
                               "budget unit: `steps` or `epochs`", "steps");
        bind_flag<int>(c.sub, c.appliers, "--batch-size", "train.batch_size",
                       "mini-batch size (0 = full phase data)");
        bind_flag<int>(c.sub, c.appliers, "--eval-every", "train.eval_every",
                       "snapshot cadence in budget units (0 = phase ends only)");
    }
    {
        Cmd& c = add_cmd("prune", "drop never-selected pairs from a checkpoint",
                         /*with_seed=*/false);
        bind_flag<std::string>(c.sub, c.appliers, "--model", "model.in",
                               "checkpoint to prune");
    }
    {
        Cmd& c = add_cmd("report",
                         "key utilization and head/key coordinates reports",
                         /*with_seed=*/false);
        bind_flag<std::string>(c.sub, c.appliers, "--model", "model.in",
                               "checkpoint to report on");
        bind_flag<std::string>(c.sub, c.appliers, "--data", "data.test",
                               "optional embedding file for head coordinates");
    }
    {
        Cmd& c = add_cmd("noise-sweep",
                         "accuracy under additive Gaussian input noise");
        bind_flag<std::string>(c.sub, c.appliers, "--model", "model.in",
                               "bottleneck checkpoint");
        bind_flag<std::string>(c.sub, c.appliers, "--data", "data.test",
                               "embedding file");
        bind_flag<std::vector<double>>(c.sub, c.appliers, "--alphas",
                                       "noise.alphas", "noise magnitudes",
                                       {0.0, 0.001, 0.01, 0.1, 1.0});
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    Cmd* active = nullptr;
    for (auto& [name, cmd] : cmds) {
        if (cmd.sub->parsed()) {
            active = &cmd;
            break;
        }
    }
    if (active == nullptr) {
        std::cerr << app.help() << std::flush;
        return 1;
    }
    const std::string name = active->sub->get_name();

    try {
        FlatConfig cfg = active->common.resolve();
        for (const auto& apply : active->appliers) apply(cfg);
        const std::uint64_t seed = resolve_seed(cfg, active->common.seed());
        const std::string& out = active->common.out;

        if (name == "gen-toy") return cmd_gen_toy(cfg, out, seed);
        if (name == "init-keys") return cmd_init_keys(cfg, out, seed);
        if (name == "train") return cmd_train(cfg, out, seed);
        if (name == "eval") return cmd_eval(cfg, out);
        if (name == "baseline") return cmd_baseline(cfg, out, seed);
        if (name == "prune") return cmd_prune(cfg, out);
        if (name == "report") return cmd_report(cfg, out);
        if (name == "noise-sweep") return cmd_noise_sweep(cfg, out, seed);
        std::cerr << "unhandled subcommand " << name << "\n";
        return 1;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n"
                  << active->sub->help() << std::flush;
        return 1;
    } catch (const StateError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        // Data, shape, format, and comparability problems all mean the
        // inputs (not the invocation) were unusable.
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}

int dispatch(const std::vector<std::string>& args) {
    std::vector<const char*> argv;
    argv.reserve(args.size());
    for (const std::string& a : args) argv.push_back(a.c_str());
    return dispatch(static_cast<int>(argv.size()), argv.data());
}

}  // namespace dkvb
