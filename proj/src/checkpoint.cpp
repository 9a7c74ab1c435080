#include "dkvb/checkpoint.hpp"

#include <fstream>

#include <json.hpp>

#include "dkvb/binio.hpp"
#include "dkvb/common.hpp"

namespace dkvb {

namespace {

using nlohmann::json;

constexpr char kModelMagic[] = "DKVBCKPT";
constexpr char kProbeMagic[] = "DKVBPROB";
constexpr std::uint16_t kVersion = 1;

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw DataError("checkpoint: cannot open " + path + " for writing");
    }
    return out;
}

std::ifstream open_in(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("checkpoint: cannot open " + path);
    }
    return in;
}

void put_header(std::ostream& out, const json& header) {
    const std::string text = header.dump();
    binio::put_u32(out, static_cast<std::uint32_t>(text.size()));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

json read_header(binio::Reader& r) {
    const std::uint32_t len = r.u32("header length");
    std::string text(len, '\0');
    r.bytes(text.data(), len, "header JSON");
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        throw FormatError(r.source() + ": unparseable JSON header (" +
                          e.what() + ")");
    }
}

void check_version(binio::Reader& r) {
    const std::uint16_t v = r.u16("version");
    if (v != kVersion) {
        throw FormatError(r.source() + ": unsupported version " +
                          std::to_string(v) + " (expected " +
                          std::to_string(kVersion) + ")");
    }
}

// json::at with the field name folded into the error.
template <typename T>
T field(const json& j, const char* name, const std::string& source) {
    try {
        return j.at(name).get<T>();
    } catch (const json::exception&) {
        throw FormatError(source + ": missing or mistyped header field `" +
                          std::string(name) + "`");
    }
}

json config_to_json(const BottleneckConfig& cfg) {
    return json{{"C", cfg.C},
                {"K", cfg.K},
                {"d_key", cfg.d_key},
                {"d_value", cfg.d_value},
                {"num_classes", cfg.num_classes},
                {"m_z", cfg.m_z},
                {"gamma", cfg.gamma},
                {"expiry_fraction", cfg.expiry_fraction},
                {"lr_values", cfg.lr_values},
                {"label_smoothing", cfg.label_smoothing},
                {"batch_size", cfg.batch_size},
                {"key_init_epochs", cfg.key_init_epochs},
                {"seed", cfg.seed},
                {"identity_projection", cfg.identity_projection}};
}

BottleneckConfig config_from_json(const json& j, const std::string& source) {
    BottleneckConfig cfg;
    cfg.C = field<int>(j, "C", source);
    cfg.K = field<int>(j, "K", source);
    cfg.d_key = field<int>(j, "d_key", source);
    cfg.d_value = field<int>(j, "d_value", source);
    cfg.num_classes = field<int>(j, "num_classes", source);
    cfg.m_z = field<int>(j, "m_z", source);
    cfg.gamma = field<double>(j, "gamma", source);
    cfg.expiry_fraction = field<double>(j, "expiry_fraction", source);
    cfg.lr_values = field<double>(j, "lr_values", source);
    cfg.label_smoothing = field<double>(j, "label_smoothing", source);
    cfg.batch_size = field<int>(j, "batch_size", source);
    cfg.key_init_epochs = field<int>(j, "key_init_epochs", source);
    cfg.seed = field<std::uint64_t>(j, "seed", source);
    cfg.identity_projection = field<bool>(j, "identity_projection", source);
    try {
        cfg.validate();
    } catch (const ConfigError& e) {
        throw FormatError(source + ": invalid stored config: " + e.what());
    }
    return cfg;
}

}  // namespace

void save_checkpoint(const BottleneckModel& model, const std::string& path) {
    std::ofstream out = open_out(path);
    out.write(kModelMagic, 8);
    binio::put_u16(out, kVersion);

    json header;
    header["config"] = config_to_json(model.config);
    json books = json::array();
    for (const auto& cb : model.codebooks) {
        books.push_back(json{{"K", cb.K()},
                             {"initialized", cb.initialized},
                             {"frozen", cb.frozen}});
    }
    header["codebooks"] = books;
    put_header(out, header);

    for (int c = 0; c < model.config.C; ++c) {
        const Codebook& cb = model.codebooks[static_cast<std::size_t>(c)];
        binio::put_f32_array(out, cb.keys.data(),
                             static_cast<std::size_t>(cb.keys.size()));
        binio::put_f32_array(out, cb.values.data(),
                             static_cast<std::size_t>(cb.values.size()));
        binio::put_f32_array(out, cb.ema_count.data(),
                             static_cast<std::size_t>(cb.ema_count.size()));
        binio::put_f32_array(out, cb.ema_sum.data(),
                             static_cast<std::size_t>(cb.ema_sum.size()));
        binio::put_u64_array(
            out, model.utilization[static_cast<std::size_t>(c)].data(),
            model.utilization[static_cast<std::size_t>(c)].size());
    }
    if (!out) {
        throw DataError("checkpoint: write to " + path + " failed");
    }
}

BottleneckModel load_checkpoint(const std::string& path) {
    std::ifstream in = open_in(path);
    binio::Reader r(in, path);
    r.expect_magic(kModelMagic, 8);
    check_version(r);
    const json header = read_header(r);

    const BottleneckConfig cfg =
        config_from_json(field<json>(header, "config", path), path);
    const json books = field<json>(header, "codebooks", path);
    if (!books.is_array() || static_cast<int>(books.size()) != cfg.C) {
        throw FormatError(path + ": header field `codebooks` must list C=" +
                          std::to_string(cfg.C) + " entries");
    }

    BottleneckModel model;
    model.config = cfg;
    model.bank = cfg.identity_projection
                     ? identity_projection_bank(cfg.C, cfg.m_z)
                     : build_projection_bank(
                           cfg.C, cfg.d_key, cfg.m_z,
                           derive_seed(cfg.seed, "projection-bank"));
    model.codebooks.reserve(static_cast<std::size_t>(cfg.C));
    model.utilization.resize(static_cast<std::size_t>(cfg.C));
    for (int c = 0; c < cfg.C; ++c) {
        const json& entry = books.at(static_cast<std::size_t>(c));
        const int K = field<int>(entry, "K", path);
        if (K < 1 || K > cfg.K) {
            throw FormatError(path + ": codebook " + std::to_string(c) +
                              " has invalid K=" + std::to_string(K));
        }
        Codebook cb = make_codebook(K, cfg.d_key, cfg.d_value);
        cb.initialized = field<bool>(entry, "initialized", path);
        cb.frozen = field<bool>(entry, "frozen", path);
        r.f32_array(cb.keys.data(), static_cast<std::size_t>(cb.keys.size()),
                    "keys");
        r.f32_array(cb.values.data(),
                    static_cast<std::size_t>(cb.values.size()), "values");
        r.f32_array(cb.ema_count.data(),
                    static_cast<std::size_t>(cb.ema_count.size()), "ema_count");
        r.f32_array(cb.ema_sum.data(),
                    static_cast<std::size_t>(cb.ema_sum.size()), "ema_sum");
        auto& used = model.utilization[static_cast<std::size_t>(c)];
        used.resize(static_cast<std::size_t>(K));
        r.u64_array(used.data(), used.size(), "utilization");
        model.codebooks.push_back(std::move(cb));
    }
    r.expect_eof();
    return model;
}

void save_probe(const LinearProbe& probe, const std::string& path) {
    std::ofstream out = open_out(path);
    out.write(kProbeMagic, 8);
    binio::put_u16(out, kVersion);
    put_header(out, json{{"kind", "linear"},
                         {"m_z", probe.m_z()},
                         {"num_classes", probe.num_classes()},
                         {"has_bias", probe.has_bias},
                         {"lr", probe.lr},
                         {"weight_decay", probe.weight_decay}});
    binio::put_f32_array(out, probe.weight.data(),
                         static_cast<std::size_t>(probe.weight.size()));
    if (probe.has_bias) {
        binio::put_f32_array(out, probe.bias.data(),
                             static_cast<std::size_t>(probe.bias.size()));
    }
    if (!out) {
        throw DataError("checkpoint: write to " + path + " failed");
    }
}

void save_probe(const MlpProbe& probe, const std::string& path) {
    std::ofstream out = open_out(path);
    out.write(kProbeMagic, 8);
    binio::put_u16(out, kVersion);
    put_header(out, json{{"kind", "mlp"},
                         {"m_z", probe.m_z()},
                         {"hidden_dim", probe.hidden_dim()},
                         {"num_classes", probe.num_classes()},
                         {"lr", probe.lr},
                         {"weight_decay", probe.weight_decay}});
    binio::put_f32_array(out, probe.w1.data(),
                         static_cast<std::size_t>(probe.w1.size()));
    binio::put_f32_array(out, probe.b1.data(),
                         static_cast<std::size_t>(probe.b1.size()));
    binio::put_f32_array(out, probe.w2.data(),
                         static_cast<std::size_t>(probe.w2.size()));
    binio::put_f32_array(out, probe.b2.data(),
                         static_cast<std::size_t>(probe.b2.size()));
    if (!out) {
        throw DataError("checkpoint: write to " + path + " failed");
    }
}

namespace {

json read_probe_header(binio::Reader& r, const std::string& expected_kind) {
    r.expect_magic(kProbeMagic, 8);
    check_version(r);
    const json header = read_header(r);
    const std::string kind = field<std::string>(header, "kind", r.source());
    if (kind != expected_kind) {
        throw FormatError(r.source() + ": header field `kind` is \"" + kind +
                          "\", expected \"" + expected_kind + "\"");
    }
    return header;
}

}  // namespace

LinearProbe load_linear_probe(const std::string& path) {
    std::ifstream in = open_in(path);
    binio::Reader r(in, path);
    const json header = read_probe_header(r, "linear");
    const int m_z = field<int>(header, "m_z", path);
    const int num_classes = field<int>(header, "num_classes", path);
    const bool has_bias = field<bool>(header, "has_bias", path);
    if (m_z < 1 || num_classes < 1) {
        throw FormatError(path + ": invalid probe dimensions in header");
    }
    LinearProbe probe =
        make_linear_probe(m_z, num_classes, has_bias,
                          field<double>(header, "lr", path),
                          field<double>(header, "weight_decay", path));
    r.f32_array(probe.weight.data(),
                static_cast<std::size_t>(probe.weight.size()), "weight");
    if (has_bias) {
        r.f32_array(probe.bias.data(),
                    static_cast<std::size_t>(probe.bias.size()), "bias");
    }
    r.expect_eof();
    return probe;
}

MlpProbe load_mlp_probe(const std::string& path) {
    std::ifstream in = open_in(path);
    binio::Reader r(in, path);
    const json header = read_probe_header(r, "mlp");
    const int m_z = field<int>(header, "m_z", path);
    const int hidden = field<int>(header, "hidden_dim", path);
    const int num_classes = field<int>(header, "num_classes", path);
    if (m_z < 1 || hidden < 1 || num_classes < 1) {
        throw FormatError(path + ": invalid probe dimensions in header");
    }
    MlpProbe probe =
        make_mlp_probe(m_z, hidden, num_classes, 0,
                       field<double>(header, "lr", path),
                       field<double>(header, "weight_decay", path));
    r.f32_array(probe.w1.data(), static_cast<std::size_t>(probe.w1.size()),
                "w1");
    r.f32_array(probe.b1.data(), static_cast<std::size_t>(probe.b1.size()),
                "b1");
    r.f32_array(probe.w2.data(), static_cast<std::size_t>(probe.w2.size()),
                "w2");
    r.f32_array(probe.b2.data(), static_cast<std::size_t>(probe.b2.size()),
                "b2");
    r.expect_eof();
    return probe;
}

CheckpointKind checkpoint_kind(const std::string& path) {
    std::ifstream in = open_in(path);
    binio::Reader r(in, path);
    std::string magic(8, '\0');
    r.bytes(magic.data(), 8, "magic");
    if (magic == kModelMagic) return CheckpointKind::bottleneck;
    if (magic != kProbeMagic) {
        throw FormatError(path + ": unrecognized magic at byte offset 0");
    }
    check_version(r);
    const json header = read_header(r);
    const std::string kind = field<std::string>(header, "kind", path);
    if (kind == "linear") return CheckpointKind::linear_probe;
    if (kind == "mlp") return CheckpointKind::mlp_probe;
    throw FormatError(path + ": unknown probe kind \"" + kind + "\"");
}

}  // namespace dkvb
