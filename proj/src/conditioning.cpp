#include "structvol/conditioning.hpp"

#include <cmath>
#include <fstream>

#include "structvol/rng.hpp"
#include "structvol/svol_io.hpp"

namespace structvol {

namespace {
constexpr uint64_t kStreamTemplatePick = 0x74656D706C617465ull;
}

void DataPair::validate() const {
    image.validate();
    mask.validate();
    if (!(image.dims() == mask.dims()))
        throw std::invalid_argument("data pair image and mask dims disagree");
}

TemplateLibrary load_template_library(const std::filesystem::path& manifest_path) {
    std::ifstream f(manifest_path);
    if (!f) throw std::runtime_error("cannot open manifest " + manifest_path.string());
    nlohmann::json j = nlohmann::json::parse(f);
    if (!j.is_array()) throw std::invalid_argument("template manifest must be a JSON array");
    const auto base = manifest_path.parent_path();
    TemplateLibrary lib;
    for (const auto& entry : j) {
        DataPair pair{read_svol_volume(base / entry.at("image").get<std::string>()),
                      read_svol_labels(base / entry.at("mask").get<std::string>())};
        pair.validate();
        lib.entries.push_back(std::move(pair));
    }
    return lib;
}

void ConditionRaw::validate() const {
    if (channels == 0 || binary_channels > channels)
        throw std::invalid_argument("condition channel bookkeeping is inconsistent");
    if (values.size() != std::size_t(channels) * dims.voxels())
        throw std::invalid_argument("condition buffer length != C*D*H*W");
    const std::size_t n = dims.voxels();
    for (std::size_t c = 0; c < binary_channels; ++c)
        for (std::size_t i = 0; i < n; ++i) {
            float v = values[c * n + i];
            if (v != 0.0f && v != 1.0f)
                throw std::invalid_argument("leading condition channels must be binary");
        }
    for (float v : values)
        if (!std::isfinite(v)) throw std::invalid_argument("condition contains non-finite values");
}

ConditionRaw assemble_condition(const LabelVolume& ref_mask, const DataPair& tmpl,
                                const std::vector<uint8_t>& fine_classes) {
    tmpl.validate();
    if (!(ref_mask.dims() == tmpl.image.dims()))
        throw std::invalid_argument("assemble_condition: reference and template dims disagree");

    BinaryChannelMask ref_bin = binarize(filter_fine_grained(ref_mask, fine_classes), fine_classes);
    BinaryChannelMask tmpl_bin =
        binarize(filter_fine_grained(tmpl.mask, fine_classes), fine_classes);

    ConditionRaw raw;
    raw.dims = ref_mask.dims();
    raw.binary_channels = ref_bin.channels() + tmpl_bin.channels();
    raw.channels = raw.binary_channels + tmpl.image.channels();
    const std::size_t n = raw.dims.voxels();
    raw.values.resize(std::size_t(raw.channels) * n);

    float* dst = raw.values.data();
    for (uint8_t b : ref_bin.values()) *dst++ = float(b);
    for (uint8_t b : tmpl_bin.values()) *dst++ = float(b);
    for (float v : tmpl.image.values()) *dst++ = v;
    return raw;
}

Volume condition_to_volume(const ConditionRaw& raw, const Spacing& spacing) {
    raw.validate();
    // The binary channel count rides in the intensity-range field so the raw
    // condition survives an SVOL round-trip.
    return Volume(raw.dims, raw.channels, raw.values, spacing, 0.0f, float(raw.binary_channels));
}

ConditionRaw condition_from_volume(const Volume& v, uint32_t binary_channels) {
    ConditionRaw raw;
    raw.dims = v.dims();
    raw.channels = v.channels();
    raw.binary_channels = binary_channels;
    raw.values = v.values();
    raw.validate();
    return raw;
}

CondEncoderParams CondEncoderParams::identity(uint32_t channels) {
    CondEncoderParams p;
    p.out_channels = channels;
    p.weight.assign(std::size_t(channels) * channels, 0.0f);
    for (uint32_t c = 0; c < channels; ++c) p.weight[std::size_t(c) * channels + c] = 1.0f;
    p.bias.assign(channels, 0.0f);
    return p;
}

CondEncoderParams CondEncoderParams::mean_mix(uint32_t in_channels, uint32_t out_channels) {
    CondEncoderParams p;
    p.out_channels = out_channels;
    p.weight.assign(std::size_t(out_channels) * in_channels, 1.0f / float(in_channels));
    p.bias.assign(out_channels, 0.0f);
    return p;
}

CondEncoderParams CondEncoderParams::seeded(uint32_t in_channels, uint32_t out_channels,
                                            uint64_t seed) {
    CondEncoderParams p;
    p.out_channels = out_channels;
    p.weight.resize(std::size_t(out_channels) * in_channels);
    p.bias.assign(out_channels, 0.0f);
    for (std::size_t i = 0; i < p.weight.size(); ++i)
        p.weight[i] = float(rng::normal(seed, 0x65637472ull, i) / std::sqrt(double(in_channels)));
    return p;
}

ConditionFeature encode_condition(const ConditionRaw& raw, uint32_t codec_factor,
                                  const CondEncoderParams& params) {
    raw.validate();
    if (codec_factor < 1) throw std::invalid_argument("codec factor must be >= 1");
    if (raw.dims.d % codec_factor || raw.dims.h % codec_factor || raw.dims.w % codec_factor)
        throw std::invalid_argument("encode_condition: dims must be divisible by the codec factor");
    if (params.out_channels == 0 ||
        params.weight.size() != std::size_t(params.out_channels) * raw.channels ||
        params.bias.size() != params.out_channels)
        throw std::invalid_argument("encode_condition: parameter block shape disagrees");

    const Dims ld{raw.dims.d / codec_factor, raw.dims.h / codec_factor,
                  raw.dims.w / codec_factor};
    const std::size_t n_in = raw.dims.voxels();
    const std::size_t n_out = ld.voxels();

    // Pool once per input channel, then mix.
    std::vector<double> pooled(std::size_t(raw.channels) * n_out, 0.0);
    const double inv = 1.0 / (double(codec_factor) * codec_factor * codec_factor);
    for (uint32_t c = 0; c < raw.channels; ++c)
        for (uint32_t z = 0; z < ld.d; ++z)
            for (uint32_t y = 0; y < ld.h; ++y)
                for (uint32_t x = 0; x < ld.w; ++x) {
                    double acc = 0.0;
                    for (uint32_t oz = 0; oz < codec_factor; ++oz)
                        for (uint32_t oy = 0; oy < codec_factor; ++oy)
                            for (uint32_t ox = 0; ox < codec_factor; ++ox)
                                acc += raw.values[std::size_t(c) * n_in +
                                                  voxel_index(raw.dims, z * codec_factor + oz,
                                                              y * codec_factor + oy,
                                                              x * codec_factor + ox)];
                    pooled[std::size_t(c) * n_out + voxel_index(ld, z, y, x)] = acc * inv;
                }

    ConditionFeature feat;
    feat.channels = params.out_channels;
    feat.dims = ld;
    feat.values.assign(std::size_t(params.out_channels) * n_out, 0.0f);
    for (uint32_t o = 0; o < params.out_channels; ++o)
        for (std::size_t i = 0; i < n_out; ++i) {
            double acc = params.bias[o];
            for (uint32_t c = 0; c < raw.channels; ++c)
                acc += double(params.weight[std::size_t(o) * raw.channels + c]) *
                       pooled[std::size_t(c) * n_out + i];
            feat.values[std::size_t(o) * n_out + i] = float(acc);
        }
    return feat;
}

std::vector<std::pair<std::size_t, std::size_t>> enumerate_bidirectional_pairs(
    std::size_t dataset_size) {
    if (dataset_size == 0)
        throw std::invalid_argument("enumerate_bidirectional_pairs: empty dataset");
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    pairs.reserve(dataset_size * dataset_size);
    for (std::size_t t = 0; t < dataset_size; ++t)
        for (std::size_t r = 0; r < dataset_size; ++r) pairs.emplace_back(t, r);
    return pairs;
}

double bidirectional_loss(double loss_ab, double loss_ba) {
    if (!std::isfinite(loss_ab) || !std::isfinite(loss_ba))
        throw TrainingDiverged("bidirectional loss received a non-finite directional loss", 0);
    return loss_ab + loss_ba;
}

const DataPair& sample_template(const TemplateLibrary& lib, uint64_t seed) {
    if (lib.entries.empty()) throw std::invalid_argument("sample_template: empty library");
    return lib.entries[rng::uniform_index(seed, kStreamTemplatePick, 0, lib.entries.size())];
}

}  // namespace structvol
