#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "structvol/diffusion.hpp"
#include "structvol/volume.hpp"

namespace structvol {

struct DataPair {
    Volume image;
    LabelVolume mask;

    void validate() const;
};

struct TemplateLibrary {
    std::vector<DataPair> entries;
};

// Manifest: JSON list of {"image": path.svol, "mask": path.svol}, paths
// relative to the manifest location.
TemplateLibrary load_template_library(const std::filesystem::path& manifest_path);

// Raw condition grid: [binarized reference mask | binarized template mask |
// template image] stacked along channels at image resolution.
struct ConditionRaw {
    uint32_t channels = 0;
    uint32_t binary_channels = 0;  // leading channels that must stay 0/1
    Dims dims;
    std::vector<float> values;

    void validate() const;
};

ConditionRaw assemble_condition(const LabelVolume& ref_mask, const DataPair& tmpl,
                                const std::vector<uint8_t>& fine_classes);

Volume condition_to_volume(const ConditionRaw& raw, const Spacing& spacing);
ConditionRaw condition_from_volume(const Volume& v, uint32_t binary_channels);

// Reference control encoder: average-pool by the codec factor, then a
// per-voxel linear channel mix. Stands in for the trainable control network.
struct CondEncoderParams {
    uint32_t out_channels = 0;
    std::vector<float> weight;  // out_channels x in_channels, row-major
    std::vector<float> bias;    // out_channels

    static CondEncoderParams identity(uint32_t channels);
    // Equal-weight average of all input channels into each output channel.
    static CondEncoderParams mean_mix(uint32_t in_channels, uint32_t out_channels);
    static CondEncoderParams seeded(uint32_t in_channels, uint32_t out_channels, uint64_t seed);
};

ConditionFeature encode_condition(const ConditionRaw& raw, uint32_t codec_factor,
                                  const CondEncoderParams& params);

// All ordered (template_index, reference_index) pairs over a dataset of the
// given size, self-pairs included: n^2 entries, both orientations present.
std::vector<std::pair<std::size_t, std::size_t>> enumerate_bidirectional_pairs(
    std::size_t dataset_size);

// Sum of the two directional losses. Propagates a divergence error on
// non-finite input.
double bidirectional_loss(double loss_ab, double loss_ba);

// Uniform seeded pick; deterministic per seed.
const DataPair& sample_template(const TemplateLibrary& lib, uint64_t seed);

}  // namespace structvol
