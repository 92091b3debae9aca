#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <nlohmann/json.hpp>

#include "structvol/volume.hpp"

namespace structvol {

// Staggered sampling steps {0, k, ..., rk} with r = floor((T-1)/k).
struct SkipSchedule {
    int total_steps = 0;  // T
    int interval = 1;     // k
    std::vector<int> steps;

    int repeats() const { return int(steps.size()) - 1; }  // r
};

SkipSchedule skip_schedule(int total_steps, int interval);

// Decoded intermediate volumes, ascending by step.
struct SkipTrace {
    std::vector<int> steps;
    std::vector<Volume> volumes;

    void validate() const;
};

// Per-voxel reals in [0, 1]; 1 marks stable generation.
struct ConfidenceMap {
    Dims dims;
    std::vector<float> v;

    ConfidenceMap() = default;
    explicit ConfidenceMap(Dims dims_, float fill = 1.0f) : dims(dims_), v(dims_.voxels(), fill) {}

    float at(uint32_t z, uint32_t y, uint32_t x) const { return v[voxel_index(dims, z, y, x)]; }
    void validate() const;
};

// C_map = 1 - Norm(sum_i (I_i - mean)^2 / r) with the (r+1)-term sum divided
// by r and Norm = global min-max over voxels. A constant variance field
// normalizes to zero, so a perfectly stable trace yields C_map == 1.
// Requires at least two volumes.
ConfidenceMap confidence_map(const SkipTrace& trace);

struct SyntheticEntry {
    LabelVolume mask;
    Volume image;
    ConfidenceMap cmap;
};

// Validates that all three members share dims; the error names the first
// offending member.
SyntheticEntry attach_confidence(LabelVolume mask, Volume image, ConfidenceMap cmap);

// Persists the triple as three SVOL files under dir and returns the manifest
// entry {mask, image, cmap, seed, schedule, k} with paths relative to dir.
nlohmann::json save_entry(const std::filesystem::path& dir, const std::string& name,
                          const SyntheticEntry& entry, uint64_t seed,
                          const std::string& schedule_spec, int skip_interval);

SyntheticEntry load_entry(const nlohmann::json& manifest_entry, const std::filesystem::path& dir);

Volume confidence_to_volume(const ConfidenceMap& cmap, const Spacing& spacing);
ConfidenceMap confidence_from_volume(const Volume& v);

}  // namespace structvol
