// structvol: template-conditioned volume synthesis pipeline CLI.
//
// Subcommands: mgm, pair, synth, ssv, train-seg, eval, demo, validate.
// Exit codes: 0 ok, 2 config/usage error, 3 stage failure.

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include "structvol/cal.hpp"
#include "structvol/conditioning.hpp"
#include "structvol/diffusion.hpp"
#include "structvol/metrics.hpp"
#include "structvol/mgm.hpp"
#include "structvol/pipeline.hpp"
#include "structvol/rng.hpp"
#include "structvol/ssv.hpp"
#include "structvol/svol_io.hpp"

namespace fs = std::filesystem;
using namespace structvol;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitStage = 3;

struct MgmArgs {
    std::string in, out, report;
    uint64_t seed = 0;
    std::vector<double> rot{0, 0, 0}, scale{1, 1, 1}, shear{0, 0, 0}, trans{0, 0, 0};
    double alpha = 0.0;
    uint32_t zeta = 4;
};

int run_mgm(const MgmArgs& a) {
    LabelVolume mask = read_svol_labels(a.in);
    AffineParams ap;
    for (int i = 0; i < 3; ++i) {
        ap.rotation[std::size_t(i)] = a.rot[std::size_t(i)];
        ap.scale[std::size_t(i)] = a.scale[std::size_t(i)];
        ap.shear[std::size_t(i)] = a.shear[std::size_t(i)];
        ap.translation[std::size_t(i)] = a.trans[std::size_t(i)];
    }
    NonRigidParams np{a.alpha, a.zeta};
    LabelVolume deformed = generate_mask(mask, ap, np, a.seed);
    write_svol(a.out, deformed);

    if (!a.report.empty()) {
        nlohmann::json counts;
        for (uint8_t cls = 1; cls <= 8; ++cls) {
            BinaryMask before = extract_class(mask, cls);
            if (before.count() == 0) continue;
            counts[std::to_string(cls)] = {
                {"before", component_count(before, Connectivity::Six)},
                {"after", component_count(extract_class(deformed, cls), Connectivity::Six)}};
        }
        std::ofstream f(a.report, std::ios::trunc);
        f << nlohmann::json{{"components", counts}}.dump(2) << "\n";
    }
    return kExitOk;
}

struct SynthArgs {
    std::string cond, out, trace_out;
    std::string schedule = "linear:1e-4:0.02:1000";
    std::string trace_spec;  // "k=100"
    std::string codec = "pool:4";
    std::string denoiser = "analytic:0:1";
    uint64_t seed = 0;
};

std::shared_ptr<LatentCodec> make_codec(const std::string& spec, uint32_t& factor) {
    if (spec == "identity") {
        factor = 1;
        return identity_codec();
    }
    if (spec.rfind("pool:", 0) == 0) {
        factor = uint32_t(std::stoul(spec.substr(5)));
        return pool_codec(factor);
    }
    throw std::invalid_argument("codec must be 'identity' or 'pool:<factor>'");
}

std::shared_ptr<Denoiser> make_denoiser(const std::string& spec, const NoiseSchedule& sched) {
    if (spec.rfind("analytic:", 0) == 0) {
        std::string rest = spec.substr(9);
        auto colon = rest.find(':');
        if (colon == std::string::npos)
            throw std::invalid_argument("denoiser spec must be analytic:<mu>:<sigma>");
        return analytic_gauss_denoiser(std::stod(rest.substr(0, colon)),
                                       std::stod(rest.substr(colon + 1)), sched);
    }
    if (spec.rfind("linear:", 0) == 0) {
        std::ifstream f(spec.substr(7));
        if (!f) throw std::invalid_argument("cannot open denoiser model " + spec.substr(7));
        return std::make_shared<LinearDenoiser>(
            LinearDenoiser::from_json(nlohmann::json::parse(f)));
    }
    throw std::invalid_argument("denoiser must be analytic:<mu>:<sigma> or linear:<model.json>");
}

int run_synth(const SynthArgs& a) {
    NoiseSchedule sched = NoiseSchedule::parse(a.schedule);
    uint32_t factor = 1;
    auto codec = make_codec(a.codec, factor);
    auto den = make_denoiser(a.denoiser, sched);

    Volume cond_vol = read_svol_volume(a.cond);
    ConditionRaw raw = condition_from_volume(cond_vol, uint32_t(cond_vol.range_hi()));
    const uint32_t cond_channels = std::max(1u, codec->latent_channels());
    ConditionFeature cond =
        encode_condition(raw, factor, CondEncoderParams::mean_mix(raw.channels, cond_channels));

    LatentState proto;
    proto.channels = std::max(1u, codec->latent_channels());
    proto.source_channels = 1;
    proto.dims = cond.dims;
    proto.spacing = Spacing{cond_vol.spacing().sx * float(factor),
                            cond_vol.spacing().sy * float(factor),
                            cond_vol.spacing().sz * float(factor)};
    proto.range_lo = 0.0f;
    proto.range_hi = 1.0f;
    proto.values.assign(std::size_t(proto.channels) * proto.dims.voxels(), 0.0);

    std::vector<int> trace_steps;
    int k = 0;
    if (!a.trace_spec.empty()) {
        if (a.trace_spec.rfind("k=", 0) != 0)
            throw std::invalid_argument("trace spec must look like k=100");
        k = std::stoi(a.trace_spec.substr(2));
        trace_steps = skip_schedule(sched.steps(), k).steps;
    }

    SampleResult res = sample(proto, &cond, *den, *codec, sched, a.seed, trace_steps);
    write_svol(a.out, codec->decode(res.z0));

    if (!a.trace_out.empty() && !res.trace.volumes.empty()) {
        fs::create_directories(a.trace_out);
        for (std::size_t i = 0; i < res.trace.volumes.size(); ++i) {
            char name[32];
            std::snprintf(name, sizeof(name), "step%04d.svol", res.trace.steps[i]);
            write_svol(fs::path(a.trace_out) / name, res.trace.volumes[i]);
        }
    }
    return kExitOk;
}

int run_ssv(const std::string& trace_dir, const std::string& out) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(trace_dir)) {
        const std::string name = entry.path().filename().string();
        if (name.rfind("step", 0) == 0 && name.find(".svol") != std::string::npos)
            files.push_back(entry.path());
    }
    if (files.size() < 2)
        throw std::invalid_argument("trace dir needs at least two step*.svol files");
    std::sort(files.begin(), files.end());

    SkipTrace trace;
    for (const auto& path : files) {
        trace.steps.push_back(int(std::stol(path.filename().string().substr(4))));
        trace.volumes.push_back(read_svol_volume(path));
    }
    ConfidenceMap cmap = confidence_map(trace);
    write_svol(out, confidence_to_volume(cmap, trace.volumes.front().spacing()));
    return kExitOk;
}

struct TrainSegArgs {
    std::string corpus, real, out, history;
    std::string cal = "on";
    int epochs_pre = 20, epochs_fine = 10;
    double lr = 1.0;
    int batch = 4;
    uint32_t radius = 1;
    uint64_t seed = 0;
};

int run_train_seg(const TrainSegArgs& a) {
    std::vector<SyntheticEntry> synthetic = load_synthetic_corpus(a.corpus);
    std::vector<SyntheticEntry> real = load_real_corpus(a.real);

    uint16_t num_classes = 2;
    for (const auto* corpus : {&synthetic, &real})
        for (const auto& entry : *corpus)
            for (uint8_t l : entry.mask.labels())
                num_classes = std::max<uint16_t>(num_classes, l + 1);

    auto seg = make_reference_segmenter(num_classes, a.radius, rng::splitmix64(a.seed));
    TrainConfig tc;
    tc.epochs_pretrain = a.epochs_pre;
    tc.epochs_finetune = a.epochs_fine;
    tc.learning_rate = a.lr;
    tc.batch_size = a.batch;
    tc.seed = a.seed;
    tc.use_cal = a.cal == "on";
    PretrainFinetuneResult hist = pretrain_finetune(*seg, synthetic, real, tc);

    std::ofstream mf(a.out, std::ios::trunc);
    if (!mf) throw std::runtime_error("cannot write " + a.out);
    mf << seg->to_json().dump(2) << "\n";

    if (!a.history.empty()) {
        std::ofstream hf(a.history, std::ios::trunc);
        hf << "phase,step,loss\n";
        for (std::size_t i = 0; i < hist.pretrain_history.size(); ++i)
            hf << "pretrain," << i << "," << hist.pretrain_history[i] << "\n";
        for (std::size_t i = 0; i < hist.finetune_history.size(); ++i)
            hf << "finetune," << i << "," << hist.finetune_history[i] << "\n";
    }
    return kExitOk;
}

struct EvalArgs {
    std::string pred, gt, out;
    std::string metrics = "ssim,rmse,dice,rdice";
    uint32_t rdice_radius = 1;
    uint32_t ssim_window = 7;
};

int run_eval(const EvalArgs& a) {
    std::vector<std::string> wanted;
    std::stringstream ss(a.metrics);
    std::string item;
    while (std::getline(ss, item, ',')) wanted.push_back(item);
    auto wants = [&](const char* m) {
        return std::find(wanted.begin(), wanted.end(), m) != wanted.end();
    };

    AnyVolume pred = read_svol(a.pred);
    AnyVolume gt = read_svol(a.gt);
    nlohmann::json report;

    const bool both_real =
        std::holds_alternative<Volume>(pred) && std::holds_alternative<Volume>(gt);
    const bool both_label =
        std::holds_alternative<LabelVolume>(pred) && std::holds_alternative<LabelVolume>(gt);
    if (!both_real && !both_label)
        throw std::invalid_argument("pred and gt must both be real volumes or both label volumes");

    if (both_real) {
        const Volume& p = std::get<Volume>(pred);
        const Volume& g = std::get<Volume>(gt);
        if (wants("ssim")) {
            SsimConfig cfg = SsimConfig::for_volume(g);
            cfg.window = a.ssim_window;
            report["ssim"] = ssim(p, g, cfg);
        }
        if (wants("rmse")) report["rmse"] = rmse(p, g);
        if (wants("dice")) report["dice"] = "unavailable";
        if (wants("rdice")) report["rdice"] = "unavailable";
    } else {
        const LabelVolume& p = std::get<LabelVolume>(pred);
        const LabelVolume& g = std::get<LabelVolume>(gt);
        nlohmann::json per_class_dice, per_class_rdice;
        double dice_acc = 0.0, rdice_acc = 0.0;
        std::size_t count = 0;
        for (uint16_t cls = 1; cls < g.num_classes(); ++cls) {
            BinaryMask gm = extract_class(g, uint8_t(cls));
            if (gm.count() == 0) continue;
            BinaryMask pm = extract_class(p, uint8_t(cls));
            double d = dice(pm, gm);
            double rd = rdice(pm, gm, a.rdice_radius);
            per_class_dice[std::to_string(cls)] = d;
            per_class_rdice[std::to_string(cls)] = rd;
            dice_acc += d;
            rdice_acc += rd;
            ++count;
        }
        if (wants("dice")) {
            report["dice"] = count ? nlohmann::json{{"per_class", per_class_dice},
                                                    {"mean", dice_acc / double(count)}}
                                   : nlohmann::json("undefined: empty ground truth");
        }
        if (wants("rdice")) {
            report["rdice"] = count ? nlohmann::json{{"per_class", per_class_rdice},
                                                     {"mean", rdice_acc / double(count)}}
                                    : nlohmann::json("undefined: empty ground truth");
        }
        if (wants("ssim")) report["ssim"] = "unavailable";
        if (wants("rmse")) report["rmse"] = "unavailable";
    }
    if (wants("fid")) report["fid"] = "unavailable";
    if (wants("lpips")) report["lpips"] = "unavailable";

    if (!a.out.empty()) {
        std::ofstream f(a.out, std::ios::trunc);
        if (!f) throw std::runtime_error("cannot write " + a.out);
        f << report.dump(2) << "\n";
    }
    std::cout << report.dump(2) << "\n";
    return kExitOk;
}

int run_pair(const std::string& manifest, bool list_pairs) {
    TemplateLibrary lib = load_template_library(manifest);
    auto pairs = enumerate_bidirectional_pairs(lib.entries.size());
    if (list_pairs)
        for (const auto& [t, r] : pairs) std::cout << t << " " << r << "\n";
    std::cerr << pairs.size() << " ordered pairs from " << lib.entries.size() << " entries\n";
    return kExitOk;
}

int run_validate(const std::string& config) {
    ValidationReport report = validate_config(config);
    for (const auto& err : report.errors) std::cerr << "config error: " << err << "\n";
    if (report.ok()) std::cout << "config ok\n";
    return report.ok() ? kExitOk : kExitConfig;
}

int run_demo(const std::string& config) {
    ValidationReport report = validate_config(config);
    if (!report.ok()) {
        for (const auto& err : report.errors) std::cerr << "config error: " << err << "\n";
        return kExitConfig;
    }
    run_pipeline(config, std::cerr);
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"structvol: template-conditioned 3D volume synthesis pipeline"};
    app.require_subcommand(1);

    MgmArgs mgm_args;
    auto* mgm_cmd = app.add_subcommand("mgm", "Deform a fine-grained mask (affine + non-rigid)");
    mgm_cmd->add_option("--in", mgm_args.in, "input mask .svol")->required();
    mgm_cmd->add_option("--out", mgm_args.out, "output mask .svol")->required();
    mgm_cmd->add_option("--seed", mgm_args.seed, "non-rigid field seed");
    mgm_cmd->add_option("--rot", mgm_args.rot, "rotation radians rx,ry,rz")->delimiter(',')->expected(3);
    mgm_cmd->add_option("--scale", mgm_args.scale, "scale sx,sy,sz")->delimiter(',')->expected(3);
    mgm_cmd->add_option("--shear", mgm_args.shear, "shear xy,xz,yz")->delimiter(',')->expected(3);
    mgm_cmd->add_option("--trans", mgm_args.trans, "translation voxels tx,ty,tz")->delimiter(',')->expected(3);
    mgm_cmd->add_option("--alpha", mgm_args.alpha, "non-rigid amplitude, voxels");
    mgm_cmd->add_option("--zeta", mgm_args.zeta, "non-rigid control grid spacing, voxels >= 2");
    mgm_cmd->add_option("--report", mgm_args.report, "per-class component counts JSON");

    std::string pair_manifest;
    bool list_pairs = false;
    auto* pair_cmd = app.add_subcommand("pair", "Enumerate bidirectional training pairs");
    pair_cmd->add_option("--manifest", pair_manifest, "template library JSON")->required();
    pair_cmd->add_flag("--list-pairs", list_pairs, "print every ordered (template, reference) pair");

    SynthArgs synth_args;
    auto* synth_cmd = app.add_subcommand("synth", "Sample a volume from a raw condition");
    synth_cmd->add_option("--cond", synth_args.cond, "raw condition .svol")->required();
    synth_cmd->add_option("--out", synth_args.out, "output image .svol")->required();
    synth_cmd->add_option("--schedule", synth_args.schedule, "linear:<b0>:<b1>:<T>");
    synth_cmd->add_option("--seed", synth_args.seed, "sampling seed");
    synth_cmd->add_option("--trace", synth_args.trace_spec, "skip-trace spec k=<interval>");
    synth_cmd->add_option("--trace-out", synth_args.trace_out, "directory for decoded trace volumes");
    synth_cmd->add_option("--codec", synth_args.codec, "identity | pool:<factor>");
    synth_cmd->add_option("--denoiser", synth_args.denoiser,
                          "analytic:<mu>:<sigma> | linear:<model.json>");

    std::string ssv_trace_dir, ssv_out;
    auto* ssv_cmd = app.add_subcommand("ssv", "Confidence map from a skip-sampling trace");
    ssv_cmd->add_option("--trace-dir", ssv_trace_dir, "directory of step*.svol volumes")->required();
    ssv_cmd->add_option("--out", ssv_out, "output confidence .svol")->required();

    TrainSegArgs ts_args;
    auto* ts_cmd = app.add_subcommand("train-seg", "Pretrain and finetune the reference segmenter");
    ts_cmd->add_option("--corpus", ts_args.corpus, "synthetic corpus manifest JSON")->required();
    ts_cmd->add_option("--real", ts_args.real, "real corpus manifest JSON")->required();
    ts_cmd->add_option("--cal", ts_args.cal, "on|off: confidence-weighted pretraining")
        ->check(CLI::IsMember({"on", "off"}));
    ts_cmd->add_option("--epochs-pre", ts_args.epochs_pre, "pretraining epochs");
    ts_cmd->add_option("--epochs-fine", ts_args.epochs_fine, "finetuning epochs");
    ts_cmd->add_option("--lr", ts_args.lr, "learning rate");
    ts_cmd->add_option("--batch-size", ts_args.batch, "entries per batch");
    ts_cmd->add_option("--feature-radius", ts_args.radius, "neighborhood feature radius");
    ts_cmd->add_option("--seed", ts_args.seed, "training seed");
    ts_cmd->add_option("--out", ts_args.out, "model JSON output")->required();
    ts_cmd->add_option("--history", ts_args.history, "loss history CSV");

    EvalArgs eval_args;
    auto* eval_cmd = app.add_subcommand("eval", "Reference metrics between two volumes");
    eval_cmd->add_option("--pred", eval_args.pred, "prediction .svol")->required();
    eval_cmd->add_option("--gt", eval_args.gt, "ground truth .svol")->required();
    eval_cmd->add_option("--metrics", eval_args.metrics, "comma list: ssim,rmse,dice,rdice,fid,lpips");
    eval_cmd->add_option("--rdice-radius", eval_args.rdice_radius, "RDice dilation radius");
    eval_cmd->add_option("--ssim-window", eval_args.ssim_window, "SSIM window size (odd)");
    eval_cmd->add_option("--out", eval_args.out, "report JSON path");

    std::string demo_config = "configs/demo.json";
    auto* demo_cmd = app.add_subcommand("demo", "Run the end-to-end pipeline from a config");
    demo_cmd->add_option("--config", demo_config, "pipeline config JSON");

    std::string validate_config_path;
    auto* validate_cmd = app.add_subcommand("validate", "Schema- and range-check a pipeline config");
    validate_cmd->add_option("--config", validate_config_path, "pipeline config JSON")->required();

    CLI11_PARSE(app, argc, argv);

    const std::string stage = app.get_subcommands().front()->get_name();
    try {
        if (mgm_cmd->parsed()) return run_mgm(mgm_args);
        if (pair_cmd->parsed()) return run_pair(pair_manifest, list_pairs);
        if (synth_cmd->parsed()) return run_synth(synth_args);
        if (ssv_cmd->parsed()) return run_ssv(ssv_trace_dir, ssv_out);
        if (ts_cmd->parsed()) return run_train_seg(ts_args);
        if (eval_cmd->parsed()) return run_eval(eval_args);
        if (demo_cmd->parsed()) return run_demo(demo_config);
        if (validate_cmd->parsed()) return run_validate(validate_config_path);
    } catch (const ConfigError& e) {
        for (const auto& issue : e.issues()) std::cerr << "config error: " << issue << "\n";
        return kExitConfig;
    } catch (const StageError& e) {
        std::cerr << "stage " << e.stage() << " failed: " << e.what() << "\n";
        return kExitStage;
    } catch (const SvolFormatError& e) {
        std::cerr << stage << ": format error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::invalid_argument& e) {
        std::cerr << stage << ": invalid argument: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "stage " << stage << " failed: " << e.what() << "\n";
        return kExitStage;
    }
    return kExitOk;
}
