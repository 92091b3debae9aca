#include "structvol/ssv.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "structvol/svol_io.hpp"

namespace structvol {

SkipSchedule skip_schedule(int total_steps, int interval) {
    if (interval < 1) throw std::invalid_argument("skip interval k must be >= 1");
    if (total_steps < 1) throw std::invalid_argument("step count T must be >= 1");
    SkipSchedule s;
    s.total_steps = total_steps;
    s.interval = interval;
    int r = (total_steps - 1) / interval;
    s.steps.reserve(std::size_t(r) + 1);
    for (int i = 0; i <= r; ++i) s.steps.push_back(i * interval);
    return s;
}

void SkipTrace::validate() const {
    if (steps.size() != volumes.size())
        throw std::invalid_argument("trace steps and volumes disagree in length");
    for (std::size_t i = 0; i < volumes.size(); ++i) {
        if (!(volumes[i].dims() == volumes.front().dims()) ||
            volumes[i].channels() != volumes.front().channels())
            throw std::invalid_argument("trace volumes must share one shape");
        if (i > 0 && steps[i] <= steps[i - 1])
            throw std::invalid_argument("trace steps must be strictly increasing");
    }
}

void ConfidenceMap::validate() const {
    if (v.size() != dims.voxels())
        throw std::invalid_argument("confidence buffer length != D*H*W");
    for (float c : v)
        if (!std::isfinite(c) || c < 0.0f || c > 1.0f)
            throw std::invalid_argument("confidence values must lie in [0, 1]");
}

ConfidenceMap confidence_map(const SkipTrace& trace) {
    trace.validate();
    const std::size_t count = trace.volumes.size();
    if (count < 2) throw std::invalid_argument("confidence_map needs a trace of length >= 2");

    const Dims& dims = trace.volumes.front().dims();
    const uint32_t channels = trace.volumes.front().channels();
    const std::size_t n = dims.voxels();
    const double r = double(count - 1);

    // Per-voxel variance, channel-averaged for multi-channel traces.
    std::vector<double> var(n, 0.0);
    for (uint32_t c = 0; c < channels; ++c) {
        for (std::size_t i = 0; i < n; ++i) {
            double mean = 0.0;
            for (const Volume& vol : trace.volumes) mean += vol.values()[std::size_t(c) * n + i];
            mean /= double(count);
            double acc = 0.0;
            for (const Volume& vol : trace.volumes) {
                double d = vol.values()[std::size_t(c) * n + i] - mean;
                acc += d * d;
            }
            var[i] += acc / r;
        }
    }
    if (channels > 1)
        for (double& v : var) v /= double(channels);

    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (double v : var) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }

    ConfidenceMap out(dims);
    if (hi - lo <= 0.0) {
        std::fill(out.v.begin(), out.v.end(), 1.0f);
        return out;
    }
    const double span = hi - lo;
    for (std::size_t i = 0; i < n; ++i)
        out.v[i] = float(std::clamp(1.0 - (var[i] - lo) / span, 0.0, 1.0));
    return out;
}

SyntheticEntry attach_confidence(LabelVolume mask, Volume image, ConfidenceMap cmap) {
    if (!(image.dims() == mask.dims()))
        throw std::invalid_argument("attach_confidence: image dims disagree with mask");
    if (!(cmap.dims == mask.dims()))
        throw std::invalid_argument("attach_confidence: cmap dims disagree with mask");
    cmap.validate();
    return SyntheticEntry{std::move(mask), std::move(image), std::move(cmap)};
}

Volume confidence_to_volume(const ConfidenceMap& cmap, const Spacing& spacing) {
    return Volume(cmap.dims, 1, std::vector<float>(cmap.v), spacing, 0.0f, 1.0f);
}

ConfidenceMap confidence_from_volume(const Volume& v) {
    if (v.channels() != 1)
        throw std::invalid_argument("confidence volumes are single-channel");
    ConfidenceMap out(v.dims());
    out.v = v.values();
    out.validate();
    return out;
}

nlohmann::json save_entry(const std::filesystem::path& dir, const std::string& name,
                          const SyntheticEntry& entry, uint64_t seed,
                          const std::string& schedule_spec, int skip_interval) {
    std::filesystem::create_directories(dir);
    const std::string mask_file = name + "_mask.svol";
    const std::string image_file = name + "_image.svol";
    const std::string cmap_file = name + "_cmap.svol";
    write_svol(dir / mask_file, entry.mask);
    write_svol(dir / image_file, entry.image);
    write_svol(dir / cmap_file, confidence_to_volume(entry.cmap, entry.image.spacing()));
    nlohmann::json j;
    j["mask"] = mask_file;
    j["image"] = image_file;
    j["cmap"] = cmap_file;
    j["seed"] = seed;
    j["schedule"] = schedule_spec;
    j["k"] = skip_interval;
    return j;
}

SyntheticEntry load_entry(const nlohmann::json& manifest_entry, const std::filesystem::path& dir) {
    LabelVolume mask = read_svol_labels(dir / manifest_entry.at("mask").get<std::string>());
    Volume image = read_svol_volume(dir / manifest_entry.at("image").get<std::string>());
    Volume cmap_vol = read_svol_volume(dir / manifest_entry.at("cmap").get<std::string>());
    return attach_confidence(std::move(mask), std::move(image), confidence_from_volume(cmap_vol));
}

}  // namespace structvol
