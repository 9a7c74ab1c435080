#include "dkvb/datastream.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "dkvb/binio.hpp"
#include "dkvb/common.hpp"

namespace dkvb {

void validate_dataset(const EmbeddingDataset& ds) {
    if (ds.n() < 1) {
        throw DataError("dataset: must contain at least one sample");
    }
    if (ds.dim() < 1) {
        throw DataError("dataset: embedding dimension must be positive");
    }
    if (ds.num_classes < 1) {
        throw DataError("dataset: num_classes must be positive");
    }
    if (static_cast<int>(ds.labels.size()) != ds.n()) {
        throw DataError("dataset: label count does not match sample count");
    }
    if (!ds.embeddings.allFinite()) {
        throw DataError("dataset: non-finite embedding entries");
    }
    for (std::size_t i = 0; i < ds.labels.size(); ++i) {
        if (ds.labels[i] >= static_cast<std::uint32_t>(ds.num_classes)) {
            throw DataError("dataset: label " + std::to_string(ds.labels[i]) +
                            " at sample " + std::to_string(i) +
                            " is out of range");
        }
    }
}

Curriculum make_curriculum(int num_classes, int num_phases,
                           CurriculumMode mode, std::uint64_t seed,
                           int budget) {
    if (num_classes < 1 || num_phases < 1 || budget < 1) {
        throw ConfigError("make_curriculum: counts and budget must be >= 1");
    }
    Curriculum cur;
    cur.mode = mode;
    if (mode == CurriculumMode::iid) {
        CurriculumPhase phase;
        phase.budget = budget;
        for (int c = 0; c < num_classes; ++c) phase.classes.push_back(c);
        cur.phases.push_back(std::move(phase));
        return cur;
    }
    if (num_classes % num_phases != 0) {
        throw ConfigError("make_curriculum: " + std::to_string(num_classes) +
                          " classes do not split evenly into " +
                          std::to_string(num_phases) + " phases");
    }
    std::vector<int> order(static_cast<std::size_t>(num_classes));
    for (int c = 0; c < num_classes; ++c) order[static_cast<std::size_t>(c)] = c;
    Rng rng(seed);
    rng.shuffle(order);
    const int per_phase = num_classes / num_phases;
    for (int p = 0; p < num_phases; ++p) {
        CurriculumPhase phase;
        phase.budget = budget;
        phase.classes.assign(order.begin() + p * per_phase,
                             order.begin() + (p + 1) * per_phase);
        std::sort(phase.classes.begin(), phase.classes.end());
        cur.phases.push_back(std::move(phase));
    }
    return cur;
}

ToySpec default_toy_spec(std::uint64_t seed) {
    ToySpec spec;
    spec.seed = seed;
    const double g[3] = {0.2, 0.5, 0.8};
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
            if (i == 1 && j == 1) continue;  // center excluded: 8 means
            spec.means.emplace_back(g[i], g[j]);
        }
    }
    return spec;
}

void validate_toy_spec(const ToySpec& spec) {
    if (spec.dim != 2) {
        throw ConfigError("toy spec: dim must be 2");
    }
    if (spec.num_classes < 2 ||
        static_cast<int>(spec.means.size()) != spec.num_classes) {
        throw ConfigError("toy spec: need one mean per class (>= 2 classes)");
    }
    if (spec.std_dev <= 0.0 || spec.samples_per_class_per_phase < 1 ||
        spec.num_phases < 1 || spec.steps_per_phase < 1) {
        throw ConfigError("toy spec: non-positive parameter");
    }
    const double min_sep = 6.0 * spec.std_dev;
    for (std::size_t a = 0; a < spec.means.size(); ++a) {
        for (std::size_t b = a + 1; b < spec.means.size(); ++b) {
            if ((spec.means[a] - spec.means[b]).norm() < min_sep) {
                throw ConfigError(
                    "toy spec: class means " + std::to_string(a) + " and " +
                    std::to_string(b) + " are closer than 6 standard deviations");
            }
        }
    }
}

namespace {

// `count` Gaussian draws around the class mean, appended as columns.
void sample_class(const ToySpec& spec, int cls, int count, Rng& rng,
                  Eigen::MatrixXf& out, std::vector<std::uint32_t>& labels,
                  int& col) {
    const Eigen::Vector2d& mu = spec.means[static_cast<std::size_t>(cls)];
    for (int s = 0; s < count; ++s) {
        out(0, col) = static_cast<float>(mu.x() + spec.std_dev * rng.gaussian());
        out(1, col) = static_cast<float>(mu.y() + spec.std_dev * rng.gaussian());
        labels.push_back(static_cast<std::uint32_t>(cls));
        ++col;
    }
}

}  // namespace

ToyData gen_toy(const ToySpec& spec) {
    validate_toy_spec(spec);
    ToyData out;
    out.curriculum = make_curriculum(
        spec.num_classes, spec.num_phases, CurriculumMode::class_incremental,
        derive_seed(spec.seed, "toy:curriculum"), spec.steps_per_phase);

    for (int p = 0; p < spec.num_phases; ++p) {
        const auto& classes =
            out.curriculum.phases[static_cast<std::size_t>(p)].classes;
        EmbeddingDataset ds;
        ds.num_classes = spec.num_classes;
        const int n = spec.samples_per_class_per_phase *
                      static_cast<int>(classes.size());
        ds.embeddings.resize(2, n);
        ds.labels.reserve(static_cast<std::size_t>(n));
        int col = 0;
        for (int cls : classes) {
            Rng rng(derive_seed(spec.seed, "toy:train:phase" + std::to_string(p) +
                                               ":class" + std::to_string(cls)));
            sample_class(spec, cls, spec.samples_per_class_per_phase, rng,
                         ds.embeddings, ds.labels, col);
        }
        out.phase_train.push_back(std::move(ds));
    }
    out.train_all = concat_datasets(out.phase_train);

    out.test.num_classes = spec.num_classes;
    const int test_per_class = spec.samples_per_class_per_phase;
    out.test.embeddings.resize(2, test_per_class * spec.num_classes);
    out.test.labels.reserve(
        static_cast<std::size_t>(test_per_class * spec.num_classes));
    int col = 0;
    for (int cls = 0; cls < spec.num_classes; ++cls) {
        Rng rng(derive_seed(spec.seed, "toy:test:class" + std::to_string(cls)));
        sample_class(spec, cls, test_per_class, rng, out.test.embeddings,
                     out.test.labels, col);
    }
    return out;
}

namespace {
constexpr char kEmbMagic[] = "DKVBEMB1";
}

void write_embeddings(const EmbeddingDataset& ds, const std::string& path) {
    validate_dataset(ds);
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw DataError("write_embeddings: cannot open " + path +
                        " for writing");
    }
    out.write(kEmbMagic, 8);
    binio::put_u32(out, static_cast<std::uint32_t>(ds.n()));
    binio::put_u32(out, static_cast<std::uint32_t>(ds.dim()));
    binio::put_u32(out, static_cast<std::uint32_t>(ds.num_classes));
    // Column-major dim x n storage is exactly the sample-major payload.
    binio::put_f32_array(out, ds.embeddings.data(),
                         static_cast<std::size_t>(ds.embeddings.size()));
    for (std::uint32_t label : ds.labels) binio::put_u32(out, label);
    if (!out) {
        throw DataError("write_embeddings: write to " + path + " failed");
    }
}

EmbeddingDataset read_embeddings(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("read_embeddings: cannot open " + path);
    }
    binio::Reader r(in, path);
    r.expect_magic(kEmbMagic, 8);
    const std::uint32_t n = r.u32("n");
    const std::uint32_t dim = r.u32("dim");
    const std::uint32_t num_classes = r.u32("num_classes");
    if (n == 0 || dim == 0 || num_classes == 0) {
        throw FormatError(path + ": zero n, dim, or num_classes in header");
    }
    EmbeddingDataset ds;
    ds.num_classes = static_cast<int>(num_classes);
    ds.embeddings.resize(static_cast<int>(dim), static_cast<int>(n));
    r.f32_array(ds.embeddings.data(),
                static_cast<std::size_t>(n) * dim, "embeddings");
    ds.labels.resize(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        const std::size_t at = r.offset();
        const std::uint32_t label = r.u32("label");
        if (label >= num_classes) {
            throw FormatError(path + ": label " + std::to_string(label) +
                              " >= num_classes at byte offset " +
                              std::to_string(at));
        }
        ds.labels[i] = label;
    }
    r.expect_eof();
    return ds;
}

EmbeddingDataset read_embeddings_csv(const std::string& path,
                                     int num_classes) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("read_embeddings_csv: cannot open " + path);
    }
    std::vector<std::vector<float>> rows;
    std::vector<std::uint32_t> labels;
    std::uint32_t max_label = 0;
    std::string line;
    int line_no = 0;
    int dim = -1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        if (line_no == 1 && line.rfind("embedding_0", 0) == 0) continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, ',')) fields.push_back(field);
        if (static_cast<int>(fields.size()) < 2) {
            throw FormatError(path + ":" + std::to_string(line_no) +
                              ": expected `embedding_0,...,label`");
        }
        const int row_dim = static_cast<int>(fields.size()) - 1;
        if (dim < 0) {
            dim = row_dim;
        } else if (row_dim != dim) {
            throw FormatError(path + ":" + std::to_string(line_no) +
                              ": inconsistent column count");
        }
        std::vector<float> row(static_cast<std::size_t>(dim));
        try {
            for (int j = 0; j < dim; ++j) {
                row[static_cast<std::size_t>(j)] =
                    std::stof(fields[static_cast<std::size_t>(j)]);
            }
            const long label = std::stol(fields.back());
            if (label < 0) throw std::invalid_argument("negative label");
            labels.push_back(static_cast<std::uint32_t>(label));
        } catch (const std::exception&) {
            throw FormatError(path + ":" + std::to_string(line_no) +
                              ": unparseable numeric field");
        }
        max_label = std::max(max_label, labels.back());
        rows.push_back(std::move(row));
    }
    if (rows.empty()) {
        throw FormatError(path + ": no data rows");
    }
    EmbeddingDataset ds;
    ds.num_classes =
        std::max(num_classes, static_cast<int>(max_label) + 1);
    ds.embeddings.resize(dim, static_cast<int>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (int j = 0; j < dim; ++j) {
            ds.embeddings(j, static_cast<int>(i)) =
                rows[i][static_cast<std::size_t>(j)];
        }
    }
    ds.labels = std::move(labels);
    validate_dataset(ds);
    return ds;
}

EmbeddingDataset add_gaussian_noise(const EmbeddingDataset& ds, double alpha,
                                    std::uint64_t seed) {
    if (alpha < 0.0) {
        throw ConfigError("add_gaussian_noise: alpha must be >= 0");
    }
    EmbeddingDataset out = ds;
    if (alpha == 0.0) return out;
    Rng rng(seed);
    float* p = out.embeddings.data();
    const Eigen::Index size = out.embeddings.size();
    for (Eigen::Index i = 0; i < size; ++i) {
        p[i] = static_cast<float>(static_cast<double>(p[i]) +
                                  alpha * rng.gaussian());
    }
    return out;
}

EmbeddingDataset filter_classes(const EmbeddingDataset& ds,
                                const std::vector<int>& classes) {
    std::vector<int> keep;
    for (int i = 0; i < ds.n(); ++i) {
        const int label = static_cast<int>(ds.labels[static_cast<std::size_t>(i)]);
        if (std::find(classes.begin(), classes.end(), label) != classes.end()) {
            keep.push_back(i);
        }
    }
    if (keep.empty()) {
        throw DataError("filter_classes: no samples with the requested labels");
    }
    EmbeddingDataset out;
    out.num_classes = ds.num_classes;
    out.embeddings.resize(ds.dim(), static_cast<int>(keep.size()));
    out.labels.reserve(keep.size());
    for (std::size_t i = 0; i < keep.size(); ++i) {
        out.embeddings.col(static_cast<int>(i)) = ds.embeddings.col(keep[i]);
        out.labels.push_back(ds.labels[static_cast<std::size_t>(keep[i])]);
    }
    return out;
}

EmbeddingDataset concat_datasets(const std::vector<EmbeddingDataset>& parts) {
    if (parts.empty()) {
        throw DataError("concat_datasets: nothing to concatenate");
    }
    const int dim = parts.front().dim();
    const int num_classes = parts.front().num_classes;
    int total = 0;
    for (const auto& p : parts) {
        if (p.dim() != dim) {
            throw ShapeError("concat_datasets: embedding dimension mismatch");
        }
        if (p.num_classes != num_classes) {
            throw DataError("concat_datasets: num_classes mismatch");
        }
        total += p.n();
    }
    EmbeddingDataset out;
    out.num_classes = num_classes;
    out.embeddings.resize(dim, total);
    out.labels.reserve(static_cast<std::size_t>(total));
    int col = 0;
    for (const auto& p : parts) {
        out.embeddings.middleCols(col, p.n()) = p.embeddings;
        out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
        col += p.n();
    }
    return out;
}

EmbeddingDataset gen_uniform_embeddings(int n, int dim, std::uint64_t seed,
                                        double lo, double hi) {
    if (n < 1 || dim < 1) {
        throw ConfigError("gen_uniform_embeddings: n and dim must be >= 1");
    }
    if (!(lo < hi)) {
        throw ConfigError("gen_uniform_embeddings: need lo < hi");
    }
    EmbeddingDataset ds;
    ds.num_classes = 1;
    ds.embeddings.resize(dim, n);
    ds.labels.assign(static_cast<std::size_t>(n), 0);
    Rng rng(seed);
    float* p = ds.embeddings.data();
    const Eigen::Index size = ds.embeddings.size();
    for (Eigen::Index i = 0; i < size; ++i) {
        p[i] = static_cast<float>(lo + (hi - lo) * rng.real01());
    }
    return ds;
}

}  // namespace dkvb
