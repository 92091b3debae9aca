#include "structvol/pipeline.hpp"

#include <zlib.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "structvol/cal.hpp"
#include "structvol/conditioning.hpp"
#include "structvol/diffusion.hpp"
#include "structvol/metrics.hpp"
#include "structvol/mgm.hpp"
#include "structvol/phantom.hpp"
#include "structvol/rng.hpp"
#include "structvol/svol_io.hpp"

namespace structvol {

namespace {

constexpr double kDegToRad = 3.14159265358979323846 / 180.0;

constexpr uint64_t fnv1a64(const char* s) {
    uint64_t h = 0xCBF29CE484222325ull;
    while (*s) {
        h ^= uint64_t(uint8_t(*s++));
        h *= 0x100000001B3ull;
    }
    return h;
}

uint64_t derive_seed(uint64_t seed, const char* tag, uint64_t index = 0) {
    return rng::mix(seed, fnv1a64(tag), index);
}

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// ---------------------------------------------------------------- config --

struct Config {
    nlohmann::json raw;
    std::filesystem::path base;
    std::filesystem::path workspace;
    uint64_t seed = 0;
    std::vector<uint8_t> fine_classes{1, 2, 3, 4, 5, 6, 7, 8};

    bool has_toy = false;
    uint32_t toy_count = 3, toy_real = 2, toy_test = 2;
    Dims toy_dims{16, 16, 16};
    std::filesystem::path library_manifest, real_manifest, test_manifest;

    uint32_t mgm_count = 4;
    double rot_max_deg = 10.0, scale_min = 0.9, scale_max = 1.1;
    double shear_max = 0.05, trans_max = 2.0, alpha = 2.0;
    uint32_t zeta = 4;

    std::string schedule_spec = "linear:1e-3:0.2:60";
    std::string codec_spec = "pool:4";
    std::string denoiser_type = "linear";
    double den_mu = 0.0, den_sigma = 1.0;
    int den_train_steps = 300;
    double den_lr = 0.05;

    int ssv_k = 10;

    bool cal = true;
    int epochs_pre = 20, epochs_fine = 10;
    double seg_lr = 1.0;
    int seg_batch = 4;
    uint32_t feature_radius = 1;

    std::vector<std::string> metrics{"ssim", "rmse", "dice", "rdice"};
    uint32_t rdice_radius = 1;
};

template <typename T>
bool read_field(const nlohmann::json& j, const char* key, T& out, const std::string& path,
                std::vector<std::string>& errors) {
    if (!j.contains(key)) return false;
    try {
        out = j.at(key).get<T>();
        return true;
    } catch (const nlohmann::json::exception&) {
        errors.push_back(path + "/" + key + ": wrong type");
        return false;
    }
}

Config parse_config(const std::filesystem::path& config_path, std::vector<std::string>& errors) {
    Config cfg;
    cfg.base = config_path.has_parent_path() ? config_path.parent_path()
                                             : std::filesystem::path(".");

    std::ifstream f(config_path);
    if (!f) {
        errors.push_back("cannot open config " + config_path.string());
        return cfg;
    }
    try {
        cfg.raw = nlohmann::json::parse(f);
    } catch (const nlohmann::json::exception& e) {
        errors.push_back(std::string("/: parse error: ") + e.what());
        return cfg;
    }
    const nlohmann::json& j = cfg.raw;

    int schema = 0;
    if (!read_field(j, "schema_version", schema, "", errors))
        errors.push_back("/schema_version: required");
    else if (schema != 1)
        errors.push_back("/schema_version: unsupported version " + std::to_string(schema));

    if (!read_field(j, "seed", cfg.seed, "", errors)) errors.push_back("/seed: required");

    std::string ws;
    if (!read_field(j, "workspace", ws, "", errors))
        errors.push_back("/workspace: required");
    else
        cfg.workspace = cfg.base / ws;

    read_field(j, "fine_classes", cfg.fine_classes, "", errors);
    if (cfg.fine_classes.empty()) errors.push_back("/fine_classes: must be non-empty");

    if (j.contains("toy_data")) {
        cfg.has_toy = true;
        const auto& t = j.at("toy_data");
        read_field(t, "count", cfg.toy_count, "/toy_data", errors);
        read_field(t, "real_count", cfg.toy_real, "/toy_data", errors);
        read_field(t, "test_count", cfg.toy_test, "/toy_data", errors);
        std::vector<uint32_t> dims;
        if (read_field(t, "dims", dims, "/toy_data", errors)) {
            if (dims.size() != 3 || dims[0] == 0 || dims[1] == 0 || dims[2] == 0)
                errors.push_back("/toy_data/dims: need three positive values");
            else
                cfg.toy_dims = Dims{dims[0], dims[1], dims[2]};
        }
        if (cfg.toy_count == 0) errors.push_back("/toy_data/count: must be >= 1");
        if (cfg.toy_real == 0) errors.push_back("/toy_data/real_count: must be >= 1");
        if (cfg.toy_test == 0) errors.push_back("/toy_data/test_count: must be >= 1");
    } else if (j.contains("inputs")) {
        const auto& in = j.at("inputs");
        std::string lib, real, test;
        if (!read_field(in, "library", lib, "/inputs", errors))
            errors.push_back("/inputs/library: required without toy_data");
        if (!read_field(in, "real", real, "/inputs", errors))
            errors.push_back("/inputs/real: required without toy_data");
        if (!read_field(in, "test", test, "/inputs", errors))
            errors.push_back("/inputs/test: required without toy_data");
        cfg.library_manifest = cfg.base / lib;
        cfg.real_manifest = cfg.base / real;
        cfg.test_manifest = cfg.base / test;
        const std::pair<const char*, std::filesystem::path> paths[] = {
            {"library", cfg.library_manifest},
            {"real", cfg.real_manifest},
            {"test", cfg.test_manifest}};
        for (const auto& [key, path] : paths)
            if (!path.empty() && !std::filesystem::exists(path))
                errors.push_back(std::string("/inputs/") + key + ": path does not exist: " +
                                 path.string());
    } else {
        errors.push_back("/: either toy_data or inputs is required");
    }

    if (j.contains("mgm")) {
        const auto& m = j.at("mgm");
        read_field(m, "count", cfg.mgm_count, "/mgm", errors);
        read_field(m, "rotation_max_deg", cfg.rot_max_deg, "/mgm", errors);
        read_field(m, "scale_min", cfg.scale_min, "/mgm", errors);
        read_field(m, "scale_max", cfg.scale_max, "/mgm", errors);
        read_field(m, "shear_max", cfg.shear_max, "/mgm", errors);
        read_field(m, "translation_max", cfg.trans_max, "/mgm", errors);
        read_field(m, "alpha", cfg.alpha, "/mgm", errors);
        read_field(m, "zeta", cfg.zeta, "/mgm", errors);
    }
    if (cfg.mgm_count == 0) errors.push_back("/mgm/count: must be >= 1");
    if (!(cfg.scale_min > 0.0) || !(cfg.scale_max > 0.0) || cfg.scale_min > cfg.scale_max)
        errors.push_back("/mgm/scale_min..scale_max: need 0 < min <= max");
    if (cfg.alpha < 0.0) errors.push_back("/mgm/alpha: must be >= 0");
    if (cfg.zeta < 2) errors.push_back("/mgm/zeta: must be >= 2");
    if (cfg.rot_max_deg < 0.0) errors.push_back("/mgm/rotation_max_deg: must be >= 0");
    if (cfg.shear_max < 0.0) errors.push_back("/mgm/shear_max: must be >= 0");
    if (cfg.trans_max < 0.0) errors.push_back("/mgm/translation_max: must be >= 0");

    read_field(j, "schedule", cfg.schedule_spec, "", errors);
    try {
        NoiseSchedule::parse(cfg.schedule_spec);
    } catch (const std::invalid_argument& e) {
        errors.push_back(std::string("/schedule: ") + e.what());
    }

    read_field(j, "codec", cfg.codec_spec, "", errors);
    if (cfg.codec_spec != "identity" && cfg.codec_spec.rfind("pool:", 0) != 0)
        errors.push_back("/codec: expected 'identity' or 'pool:<factor>'");

    if (j.contains("denoiser")) {
        const auto& d = j.at("denoiser");
        read_field(d, "type", cfg.denoiser_type, "/denoiser", errors);
        read_field(d, "mu", cfg.den_mu, "/denoiser", errors);
        read_field(d, "sigma", cfg.den_sigma, "/denoiser", errors);
        read_field(d, "train_steps", cfg.den_train_steps, "/denoiser", errors);
        read_field(d, "lr", cfg.den_lr, "/denoiser", errors);
    }
    if (cfg.denoiser_type != "linear" && cfg.denoiser_type != "analytic")
        errors.push_back("/denoiser/type: expected 'linear' or 'analytic'");
    if (cfg.denoiser_type == "analytic" && !(cfg.den_sigma > 0.0))
        errors.push_back("/denoiser/sigma: must be > 0");
    if (cfg.denoiser_type == "linear" && cfg.den_train_steps < 0)
        errors.push_back("/denoiser/train_steps: must be >= 0");

    if (j.contains("ssv")) read_field(j.at("ssv"), "k", cfg.ssv_k, "/ssv", errors);
    if (cfg.ssv_k < 1) errors.push_back("/ssv/k: skip interval must be >= 1");

    if (j.contains("train_seg")) {
        const auto& t = j.at("train_seg");
        read_field(t, "cal", cfg.cal, "/train_seg", errors);
        read_field(t, "epochs_pretrain", cfg.epochs_pre, "/train_seg", errors);
        read_field(t, "epochs_finetune", cfg.epochs_fine, "/train_seg", errors);
        read_field(t, "learning_rate", cfg.seg_lr, "/train_seg", errors);
        read_field(t, "batch_size", cfg.seg_batch, "/train_seg", errors);
        read_field(t, "feature_radius", cfg.feature_radius, "/train_seg", errors);
    }
    if (cfg.epochs_pre < 0) errors.push_back("/train_seg/epochs_pretrain: must be >= 0");
    if (cfg.epochs_fine < 0) errors.push_back("/train_seg/epochs_finetune: must be >= 0");
    if (cfg.seg_batch < 1) errors.push_back("/train_seg/batch_size: must be >= 1");
    if (!std::isfinite(cfg.seg_lr)) errors.push_back("/train_seg/learning_rate: must be finite");

    if (j.contains("eval")) {
        const auto& e = j.at("eval");
        read_field(e, "metrics", cfg.metrics, "/eval", errors);
        read_field(e, "rdice_radius", cfg.rdice_radius, "/eval", errors);
    }
    if (cfg.rdice_radius < 1) errors.push_back("/eval/rdice_radius: must be >= 1");
    for (const auto& m : cfg.metrics)
        if (m != "ssim" && m != "rmse" && m != "dice" && m != "rdice" && m != "fid" &&
            m != "lpips")
            errors.push_back("/eval/metrics: unknown metric '" + m + "'");

    return cfg;
}

// ------------------------------------------------------------- artifacts --

struct ArtifactSink {
    std::filesystem::path workspace;
    nlohmann::json artifacts = nlohmann::json::array();

    void write_bytes(const std::string& rel, const std::vector<uint8_t>& bytes) {
        std::filesystem::path path = workspace / rel;
        std::filesystem::create_directories(path.parent_path());
        std::ofstream f(path, std::ios::binary | std::ios::trunc);
        if (!f) throw std::runtime_error("cannot write " + path.string());
        f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
        record(rel, bytes);
    }

    void write_svol_artifact(const std::string& rel, const Volume& v) {
        write_bytes(rel, serialize_svol(v));
    }
    void write_svol_artifact(const std::string& rel, const LabelVolume& v) {
        write_bytes(rel, serialize_svol(v));
    }
    void write_text(const std::string& rel, const std::string& text) {
        write_bytes(rel, std::vector<uint8_t>(text.begin(), text.end()));
    }
    void write_json(const std::string& rel, const nlohmann::json& j) {
        write_text(rel, j.dump(2) + "\n");
    }

    // For files produced by library persistence helpers: hash what landed on
    // disk.
    void register_existing(const std::string& rel) {
        std::ifstream f(workspace / rel, std::ios::binary);
        if (!f) throw std::runtime_error("missing artifact " + rel);
        std::vector<uint8_t> bytes{std::istreambuf_iterator<char>(f),
                                   std::istreambuf_iterator<char>()};
        record(rel, bytes);
    }

private:
    void record(const std::string& rel, const std::vector<uint8_t>& bytes) {
        nlohmann::json entry;
        entry["path"] = rel;
        entry["bytes"] = bytes.size();
        entry["crc32"] = crc32_of(bytes);
        artifacts.push_back(entry);
    }
};

struct StageLogger {
    std::ostream& log;
    const char* stage;
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

    StageLogger(std::ostream& log_, const char* stage_) : log(log_), stage(stage_) {
        nlohmann::json e{{"event", "stage_start"}, {"stage", stage}};
        log << e.dump() << "\n" << std::flush;
    }
    void done(nlohmann::json extra = {}) {
        double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
                          .count();
        nlohmann::json e{{"event", "stage_done"}, {"stage", stage}, {"seconds", secs}};
        if (!extra.is_null()) e.update(extra);
        log << e.dump() << "\n" << std::flush;
    }
};

// ----------------------------------------------------------------- state --

struct PipelineState {
    std::vector<DataPair> library;
    std::vector<SyntheticEntry> real_corpus;
    std::vector<DataPair> test_pairs;

    std::shared_ptr<LatentCodec> codec;
    uint32_t codec_factor = 1;
    CondEncoderParams cond_params;
    std::vector<DiffusionTrainItem> train_items;

    std::vector<LabelVolume> mgm_masks;
    std::vector<std::size_t> mgm_template;  // template index per mask

    std::shared_ptr<Denoiser> denoiser;
    std::vector<Volume> synth_images;
    std::vector<SkipTrace> synth_traces;

    std::vector<nlohmann::json> entry_manifest;
    std::vector<SyntheticEntry> synthetic_corpus;

    std::unique_ptr<Segmenter> segmenter;
};

ConditionFeature build_condition(const Config& cfg, const PipelineState& st,
                                 const LabelVolume& ref_mask, const DataPair& tmpl) {
    ConditionRaw raw = assemble_condition(ref_mask, tmpl, cfg.fine_classes);
    return encode_condition(raw, st.codec_factor, st.cond_params);
}

void stage_inputs(const Config& cfg, PipelineState& st, ArtifactSink& sink, std::ostream& log) {
    StageLogger sl(log, "inputs");
    if (cfg.has_toy) {
        nlohmann::json lib_manifest = nlohmann::json::array();
        for (uint32_t i = 0; i < cfg.toy_count; ++i) {
            DataPair pair = make_demo_pair(cfg.toy_dims, derive_seed(cfg.seed, "toy-lib", i));
            std::string img = "inputs/lib" + std::to_string(i) + "_image.svol";
            std::string mask = "inputs/lib" + std::to_string(i) + "_mask.svol";
            sink.write_svol_artifact(img, pair.image);
            sink.write_svol_artifact(mask, pair.mask);
            lib_manifest.push_back({{"image", "lib" + std::to_string(i) + "_image.svol"},
                                    {"mask", "lib" + std::to_string(i) + "_mask.svol"}});
            st.library.push_back(std::move(pair));
        }
        sink.write_json("inputs/library.json", lib_manifest);
        for (uint32_t i = 0; i < cfg.toy_real; ++i) {
            DataPair pair = make_demo_pair(cfg.toy_dims, derive_seed(cfg.seed, "toy-real", i));
            sink.write_svol_artifact("inputs/real" + std::to_string(i) + "_image.svol", pair.image);
            sink.write_svol_artifact("inputs/real" + std::to_string(i) + "_mask.svol", pair.mask);
            st.real_corpus.push_back(entry_with_full_confidence(pair.image, pair.mask));
        }
        for (uint32_t i = 0; i < cfg.toy_test; ++i)
            st.test_pairs.push_back(make_demo_pair(cfg.toy_dims, derive_seed(cfg.seed, "toy-test", i)));
    } else {
        TemplateLibrary lib = load_template_library(cfg.library_manifest);
        st.library = std::move(lib.entries);
        st.real_corpus = load_real_corpus(cfg.real_manifest);
        TemplateLibrary test = load_template_library(cfg.test_manifest);
        st.test_pairs = std::move(test.entries);
    }
    if (st.library.empty()) throw StageError("inputs", "template library is empty");

    if (cfg.codec_spec == "identity") {
        st.codec = identity_codec();
        st.codec_factor = 1;
    } else {
        uint32_t factor = uint32_t(std::stoul(cfg.codec_spec.substr(5)));
        st.codec = pool_codec(factor);
        st.codec_factor = factor;
    }
    const Dims& d = st.library.front().image.dims();
    if (d.d % st.codec_factor || d.h % st.codec_factor || d.w % st.codec_factor)
        throw StageError("inputs", "input dims are not divisible by the codec factor");
    sl.done({{"library", st.library.size()},
             {"real", st.real_corpus.size()},
             {"test", st.test_pairs.size()}});
}

void stage_mgm(const Config& cfg, PipelineState& st, ArtifactSink& sink, std::ostream& log) {
    StageLogger sl(log, "mgm");
    nlohmann::json topo = nlohmann::json::array();
    for (uint32_t i = 0; i < cfg.mgm_count; ++i) {
        const uint64_t pick_seed = derive_seed(cfg.seed, "mgm-pick", i);
        const uint64_t param_seed = derive_seed(cfg.seed, "mgm-params", i);
        const uint64_t field_seed = derive_seed(cfg.seed, "mgm-field", i);
        const std::size_t tmpl_idx = std::size_t(
            rng::uniform_index(pick_seed, fnv1a64("mgm-template"), 0, st.library.size()));
        const DataPair& tmpl = st.library[tmpl_idx];
        LabelVolume fine = filter_fine_grained(tmpl.mask, cfg.fine_classes);

        AffineParams ap;
        const double rot = cfg.rot_max_deg * kDegToRad;
        for (int a = 0; a < 3; ++a) {
            ap.rotation[a] = rng::uniform_range(param_seed, 1, uint64_t(a), -rot, rot);
            ap.scale[a] = rng::uniform_range(param_seed, 2, uint64_t(a), cfg.scale_min, cfg.scale_max);
            ap.shear[a] = rng::uniform_range(param_seed, 3, uint64_t(a), -cfg.shear_max, cfg.shear_max);
            ap.translation[a] =
                rng::uniform_range(param_seed, 4, uint64_t(a), -cfg.trans_max, cfg.trans_max);
        }
        NonRigidParams np{cfg.alpha, cfg.zeta};
        LabelVolume deformed = generate_mask(fine, ap, np, field_seed);

        nlohmann::json counts;
        for (uint8_t cls : cfg.fine_classes) {
            BinaryMask before = extract_class(fine, cls);
            if (before.count() == 0) continue;
            BinaryMask after = extract_class(deformed, cls);
            counts[std::to_string(cls)] = {
                {"before", component_count(before, Connectivity::Six)},
                {"after", component_count(after, Connectivity::Six)}};
        }
        topo.push_back({{"mask", i}, {"template", tmpl_idx}, {"components", counts}});

        sink.write_svol_artifact("mgm/mtilde" + std::to_string(i) + ".svol", deformed);
        st.mgm_masks.push_back(std::move(deformed));
        st.mgm_template.push_back(tmpl_idx);
    }
    sink.write_json("mgm/topo.json", topo);
    sl.done({{"masks", st.mgm_masks.size()}});
}

void stage_pair(const Config& cfg, PipelineState& st, ArtifactSink& sink, std::ostream& log) {
    StageLogger sl(log, "pair");
    auto pairs = enumerate_bidirectional_pairs(st.library.size());
    nlohmann::json jpairs = nlohmann::json::array();
    for (const auto& [t, r] : pairs) jpairs.push_back({t, r});
    sink.write_json("pair/pairs.json", jpairs);

    // Raw condition channel count is fixed by fine class count and image
    // channels; the reference encoder averages it down to the latent channel
    // count so every condition channel correlates the same way with the
    // latent it guides.
    const uint32_t raw_channels =
        uint32_t(2 * cfg.fine_classes.size()) + st.library.front().image.channels();
    const uint32_t cond_channels = std::max(1u, st.codec->latent_channels());
    st.cond_params = CondEncoderParams::mean_mix(raw_channels, cond_channels);

    for (const auto& [t, r] : pairs) {
        DiffusionTrainItem item;
        item.z0 = st.codec->encode(st.library[r].image);
        item.cond = build_condition(cfg, st, st.library[r].mask, st.library[t]);
        st.train_items.push_back(std::move(item));
    }
    sl.done({{"pairs", pairs.size()}});
}

void stage_synth(const Config& cfg, PipelineState& st, ArtifactSink& sink, std::ostream& log) {
    StageLogger sl(log, "synth");
    NoiseSchedule sched = NoiseSchedule::parse(cfg.schedule_spec);

    if (cfg.denoiser_type == "analytic") {
        st.denoiser = analytic_gauss_denoiser(cfg.den_mu, cfg.den_sigma, sched);
    } else {
        LinearDenoiserTraining trained = train_linear_denoiser(
            st.train_items, sched, cfg.den_train_steps, cfg.den_lr,
            derive_seed(cfg.seed, "train-dm"));
        st.denoiser = trained.model;
        sink.write_json("synth/denoiser.json", trained.model->to_json());
        std::string csv = "step,loss\n";
        for (std::size_t i = 0; i < trained.history.size(); ++i)
            csv += std::to_string(i) + "," + format_double(trained.history[i]) + "\n";
        sink.write_text("synth/denoiser_history.csv", csv);
    }

    SkipSchedule skips = skip_schedule(sched.steps(), cfg.ssv_k);
    for (std::size_t i = 0; i < st.mgm_masks.size(); ++i) {
        const DataPair& tmpl = st.library[st.mgm_template[i]];
        ConditionFeature cond = build_condition(cfg, st, st.mgm_masks[i], tmpl);
        LatentState proto = st.codec->encode(tmpl.image);
        SampleResult res = sample(proto, &cond, *st.denoiser, *st.codec, sched,
                                  derive_seed(cfg.seed, "synth", uint64_t(i)), skips.steps);
        Volume image = st.codec->decode(res.z0);
        sink.write_svol_artifact("synth/img" + std::to_string(i) + ".svol", image);
        for (std::size_t s = 0; s < res.trace.volumes.size(); ++s) {
            char rel[64];
            std::snprintf(rel, sizeof(rel), "synth/trace%zu/step%04d.svol", i,
                          res.trace.steps[s]);
            sink.write_svol_artifact(rel, res.trace.volumes[s]);
        }
        st.synth_images.push_back(std::move(image));
        st.synth_traces.push_back(std::move(res.trace));
    }
    sl.done({{"images", st.synth_images.size()}, {"trace_length", skips.steps.size()}});
}

void stage_ssv(const Config& cfg, PipelineState& st, ArtifactSink& sink, std::ostream& log) {
    StageLogger sl(log, "ssv");
    for (std::size_t i = 0; i < st.synth_images.size(); ++i) {
        ConfidenceMap cmap = confidence_map(st.synth_traces[i]);
        SyntheticEntry entry = attach_confidence(st.mgm_masks[i], st.synth_images[i], cmap);
        nlohmann::json j = save_entry(sink.workspace / "ssv", "case" + std::to_string(i), entry,
                                      derive_seed(cfg.seed, "synth", uint64_t(i)),
                                      cfg.schedule_spec, cfg.ssv_k);
        for (const char* key : {"mask", "image", "cmap"})
            sink.register_existing("ssv/" + j.at(key).get<std::string>());
        st.entry_manifest.push_back(j);
        st.synthetic_corpus.push_back(std::move(entry));
    }
    save_synthetic_manifest(sink.workspace / "ssv/synthetic_manifest.json", st.entry_manifest);
    sink.register_existing("ssv/synthetic_manifest.json");
    sl.done({{"entries", st.synthetic_corpus.size()}});
}

void stage_train_seg(const Config& cfg, PipelineState& st, ArtifactSink& sink,
                     std::ostream& log) {
    StageLogger sl(log, "train-seg");
    uint16_t num_classes = 2;
    for (const auto& entry : st.synthetic_corpus)
        for (uint8_t l : entry.mask.labels()) num_classes = std::max<uint16_t>(num_classes, l + 1);
    for (const auto& entry : st.real_corpus)
        for (uint8_t l : entry.mask.labels()) num_classes = std::max<uint16_t>(num_classes, l + 1);

    st.segmenter = make_reference_segmenter(num_classes, cfg.feature_radius,
                                            derive_seed(cfg.seed, "seg-init"));
    TrainConfig tc;
    tc.epochs_pretrain = cfg.epochs_pre;
    tc.epochs_finetune = cfg.epochs_fine;
    tc.learning_rate = cfg.seg_lr;
    tc.batch_size = cfg.seg_batch;
    tc.seed = derive_seed(cfg.seed, "seg-train");
    tc.use_cal = cfg.cal;
    PretrainFinetuneResult history =
        pretrain_finetune(*st.segmenter, st.synthetic_corpus, st.real_corpus, tc);

    sink.write_json("train_seg/model.json", st.segmenter->to_json());
    std::string csv = "phase,step,loss\n";
    for (std::size_t i = 0; i < history.pretrain_history.size(); ++i)
        csv += "pretrain," + std::to_string(i) + "," + format_double(history.pretrain_history[i]) +
               "\n";
    for (std::size_t i = 0; i < history.finetune_history.size(); ++i)
        csv += "finetune," + std::to_string(i) + "," + format_double(history.finetune_history[i]) +
               "\n";
    sink.write_text("train_seg/history.csv", csv);
    sl.done({{"classes", num_classes},
             {"pretrain_steps", history.pretrain_history.size()},
             {"finetune_steps", history.finetune_history.size()}});
}

void stage_eval(const Config& cfg, PipelineState& st, ArtifactSink& sink, std::ostream& log) {
    StageLogger sl(log, "eval");
    nlohmann::json report;

    auto wants = [&](const char* m) {
        return std::find(cfg.metrics.begin(), cfg.metrics.end(), m) != cfg.metrics.end();
    };

    // Image metrics: synthesized images against their template images.
    if (wants("ssim") || wants("rmse")) {
        double ssim_acc = 0.0, rmse_acc = 0.0;
        for (std::size_t i = 0; i < st.synth_images.size(); ++i) {
            const Volume& ref = st.library[st.mgm_template[i]].image;
            if (wants("ssim")) ssim_acc += ssim(st.synth_images[i], ref, SsimConfig::for_volume(ref));
            if (wants("rmse")) rmse_acc += rmse(st.synth_images[i], ref);
        }
        const double n = double(st.synth_images.size());
        if (wants("ssim")) report["ssim"] = ssim_acc / n;
        if (wants("rmse")) report["rmse"] = rmse_acc / n;
    }

    // Segmentation metrics on the held-out test pairs.
    if (wants("dice") || wants("rdice")) {
        double dice_acc = 0.0, rdice_acc = 0.0;
        std::size_t count = 0;
        for (const DataPair& test : st.test_pairs) {
            LabelVolume pred = predict_labels(*st.segmenter, test.image, test.mask);
            for (uint8_t cls : cfg.fine_classes) {
                BinaryMask gt = extract_class(test.mask, cls);
                if (gt.count() == 0) continue;
                BinaryMask pd = extract_class(pred, cls);
                dice_acc += dice(pd, gt);
                rdice_acc += rdice(pd, gt, cfg.rdice_radius);
                ++count;
            }
        }
        if (count > 0) {
            if (wants("dice")) report["dice"] = dice_acc / double(count);
            if (wants("rdice")) report["rdice"] = rdice_acc / double(count);
        }
    }

    // Feature-extractor metrics need pretrained networks this artifact does
    // not ship.
    if (wants("fid")) report["fid"] = "unavailable";
    if (wants("lpips")) report["lpips"] = "unavailable";

    sink.write_json("eval/report.json", report);
    sl.done({{"metrics", report.size()}});
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> issues)
    : std::runtime_error(issues.empty() ? "invalid config"
                                        : "invalid config: " + issues.front() +
                                              (issues.size() > 1 ? " (+" +
                                                   std::to_string(issues.size() - 1) +
                                                   " more)"
                                                                 : "")),
      issues_(std::move(issues)) {}

ValidationReport validate_config(const std::filesystem::path& config_path) {
    ValidationReport report;
    parse_config(config_path, report.errors);
    return report;
}

uint32_t crc32_of(const std::vector<uint8_t>& bytes) {
    return uint32_t(::crc32(0L, bytes.data(), uInt(bytes.size())));
}

void save_synthetic_manifest(const std::filesystem::path& path,
                             const std::vector<nlohmann::json>& entries) {
    nlohmann::json j;
    j["schema_version"] = 1;
    j["entries"] = entries;
    std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f << j.dump(2) << "\n";
}

std::vector<SyntheticEntry> load_synthetic_corpus(const std::filesystem::path& manifest_path) {
    std::ifstream f(manifest_path);
    if (!f) throw std::runtime_error("cannot open manifest " + manifest_path.string());
    nlohmann::json j = nlohmann::json::parse(f);
    std::vector<SyntheticEntry> corpus;
    for (const auto& entry : j.at("entries"))
        corpus.push_back(load_entry(entry, manifest_path.parent_path()));
    return corpus;
}

std::vector<SyntheticEntry> load_real_corpus(const std::filesystem::path& manifest_path) {
    TemplateLibrary lib = load_template_library(manifest_path);
    std::vector<SyntheticEntry> corpus;
    for (DataPair& pair : lib.entries)
        corpus.push_back(entry_with_full_confidence(std::move(pair.image), std::move(pair.mask)));
    return corpus;
}

nlohmann::json run_pipeline(const std::filesystem::path& config_path, std::ostream& log) {
    std::vector<std::string> issues;
    Config cfg = parse_config(config_path, issues);
    if (!issues.empty()) throw ConfigError(std::move(issues));

    std::filesystem::create_directories(cfg.workspace);
    ArtifactSink sink;
    sink.workspace = cfg.workspace;
    PipelineState st;

    struct Stage {
        const char* name;
        void (*fn)(const Config&, PipelineState&, ArtifactSink&, std::ostream&);
    };
    const Stage stages[] = {
        {"inputs", stage_inputs}, {"mgm", stage_mgm},
        {"pair", stage_pair},     {"synth", stage_synth},
        {"ssv", stage_ssv},       {"train-seg", stage_train_seg},
        {"eval", stage_eval},
    };
    for (const Stage& stage : stages) {
        try {
            stage.fn(cfg, st, sink, log);
        } catch (const StageError&) {
            throw;
        } catch (const std::exception& e) {
            throw StageError(stage.name, e.what());
        }
    }

    nlohmann::json manifest;
    manifest["schema_version"] = 1;
    manifest["seed"] = cfg.seed;
    manifest["config"] = cfg.raw;
    manifest["artifacts"] = sink.artifacts;
    std::ofstream f(cfg.workspace / "run_manifest.json", std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write run manifest");
    f << manifest.dump(2) << "\n";
    return manifest;
}

}  // namespace structvol
