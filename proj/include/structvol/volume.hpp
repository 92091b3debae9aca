#pragma once

#include <cstdint>
#include <vector>

#include "structvol/common.hpp"

namespace structvol {

// Multi-channel 3D grid of 32-bit reals, channel-major (c, z, y, x).
// Intensities are stored unnormalized; the declared intensity range rides
// along for metrics that need a dynamic range (SSIM's L).
class Volume {
public:
    Volume() = default;
    Volume(Dims dims, uint32_t channels, Spacing spacing = {},
           float range_lo = 0.0f, float range_hi = 1.0f);
    Volume(Dims dims, uint32_t channels, std::vector<float> values, Spacing spacing = {},
           float range_lo = 0.0f, float range_hi = 1.0f);

    const Dims& dims() const { return dims_; }
    uint32_t channels() const { return channels_; }
    const Spacing& spacing() const { return spacing_; }
    float range_lo() const { return range_lo_; }
    float range_hi() const { return range_hi_; }

    const std::vector<float>& values() const { return values_; }
    std::vector<float>& values() { return values_; }

    float at(uint32_t c, uint32_t z, uint32_t y, uint32_t x) const {
        return values_[grid_index(dims_, c, z, y, x)];
    }
    float& at(uint32_t c, uint32_t z, uint32_t y, uint32_t x) {
        return values_[grid_index(dims_, c, z, y, x)];
    }

    // Throws invalid_argument on non-finite values, size mismatch, or
    // non-positive spacing.
    void validate() const;

private:
    Dims dims_;
    uint32_t channels_ = 1;
    Spacing spacing_;
    float range_lo_ = 0.0f;
    float range_hi_ = 1.0f;
    std::vector<float> values_;
};

// Integer-labeled mask. Labels are 8-bit: the pipeline works with 8
// foreground classes plus background.
class LabelVolume {
public:
    static constexpr uint16_t kDefaultNumClasses = 9;  // 0 = background, 1..8 fine-grained

    LabelVolume() = default;
    LabelVolume(Dims dims, Spacing spacing = {}, uint16_t num_classes = kDefaultNumClasses);
    LabelVolume(Dims dims, std::vector<uint8_t> labels, Spacing spacing = {},
                uint16_t num_classes = kDefaultNumClasses);

    const Dims& dims() const { return dims_; }
    const Spacing& spacing() const { return spacing_; }
    uint16_t num_classes() const { return num_classes_; }

    const std::vector<uint8_t>& labels() const { return labels_; }
    std::vector<uint8_t>& labels() { return labels_; }

    uint8_t at(uint32_t z, uint32_t y, uint32_t x) const {
        return labels_[voxel_index(dims_, z, y, x)];
    }
    uint8_t& at(uint32_t z, uint32_t y, uint32_t x) {
        return labels_[voxel_index(dims_, z, y, x)];
    }

    void validate() const;

private:
    Dims dims_;
    Spacing spacing_;
    uint16_t num_classes_ = kDefaultNumClasses;
    std::vector<uint8_t> labels_;
};

// Single-class binary grid, values exactly 0 or 1.
struct BinaryMask {
    Dims dims;
    std::vector<uint8_t> v;

    BinaryMask() = default;
    explicit BinaryMask(Dims dims_) : dims(dims_), v(dims_.voxels(), 0) {}

    uint8_t at(uint32_t z, uint32_t y, uint32_t x) const { return v[voxel_index(dims, z, y, x)]; }
    uint8_t& at(uint32_t z, uint32_t y, uint32_t x) { return v[voxel_index(dims, z, y, x)]; }

    std::size_t count() const;
    void validate() const;
};

// Channel-wise binarization of a LabelVolume; channel j corresponds to
// class_ids[j].
class BinaryChannelMask {
public:
    BinaryChannelMask() = default;
    BinaryChannelMask(Dims dims, std::vector<uint8_t> class_ids);

    const Dims& dims() const { return dims_; }
    uint32_t channels() const { return uint32_t(class_ids_.size()); }
    const std::vector<uint8_t>& class_ids() const { return class_ids_; }

    const std::vector<uint8_t>& values() const { return v_; }
    std::vector<uint8_t>& values() { return v_; }

    uint8_t at(uint32_t c, uint32_t z, uint32_t y, uint32_t x) const {
        return v_[grid_index(dims_, c, z, y, x)];
    }
    uint8_t& at(uint32_t c, uint32_t z, uint32_t y, uint32_t x) {
        return v_[grid_index(dims_, c, z, y, x)];
    }

    BinaryMask channel(uint32_t c) const;
    void validate() const;

private:
    Dims dims_;
    std::vector<uint8_t> class_ids_;
    std::vector<uint8_t> v_;
};

enum class ResampleMode { Trilinear, Nearest };

// Channel j voxel v == 1 iff mask(v) == classes[j]. Class ids must be known
// to the mask, non-empty and duplicate-free.
BinaryChannelMask binarize(const LabelVolume& mask, const std::vector<uint8_t>& classes);

// Zeroes every voxel whose label is not in fine_classes. Empty set yields an
// all-background mask.
LabelVolume filter_fine_grained(const LabelVolume& mask, const std::vector<uint8_t>& fine_classes);

// Voxel-center aligned resampling: voxel i sits at (i + 0.5) / N in
// normalized coordinates. Spacing is rescaled by the dims ratio.
Volume resample(const Volume& vol, Dims target_dims, ResampleMode mode);
LabelVolume resample(const LabelVolume& vol, Dims target_dims, ResampleMode mode);

// Extracts class `id` as a binary mask.
BinaryMask extract_class(const LabelVolume& mask, uint8_t id);

}  // namespace structvol
