#include "structvol/volume.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace structvol {

namespace {

void check_dims(const Dims& dims) {
    if (dims.d == 0 || dims.h == 0 || dims.w == 0)
        throw std::invalid_argument("dims must be positive");
}

void check_spacing(const Spacing& s) {
    if (!(s.sx > 0.0f) || !(s.sy > 0.0f) || !(s.sz > 0.0f))
        throw std::invalid_argument("spacing components must be positive");
}

}  // namespace

Volume::Volume(Dims dims, uint32_t channels, Spacing spacing, float range_lo, float range_hi)
    : Volume(dims, channels, std::vector<float>(std::size_t(channels) * dims.voxels(), 0.0f),
             spacing, range_lo, range_hi) {}

Volume::Volume(Dims dims, uint32_t channels, std::vector<float> values, Spacing spacing,
               float range_lo, float range_hi)
    : dims_(dims),
      channels_(channels),
      spacing_(spacing),
      range_lo_(range_lo),
      range_hi_(range_hi),
      values_(std::move(values)) {
    validate();
}

void Volume::validate() const {
    check_dims(dims_);
    check_spacing(spacing_);
    if (channels_ < 1) throw std::invalid_argument("volume needs at least one channel");
    if (values_.size() != std::size_t(channels_) * dims_.voxels())
        throw std::invalid_argument("value buffer length != C*D*H*W");
    for (float v : values_)
        if (!std::isfinite(v)) throw std::invalid_argument("volume contains non-finite values");
    if (!std::isfinite(range_lo_) || !std::isfinite(range_hi_) || range_hi_ < range_lo_)
        throw std::invalid_argument("invalid intensity range");
}

LabelVolume::LabelVolume(Dims dims, Spacing spacing, uint16_t num_classes)
    : LabelVolume(dims, std::vector<uint8_t>(dims.voxels(), 0), spacing, num_classes) {}

LabelVolume::LabelVolume(Dims dims, std::vector<uint8_t> labels, Spacing spacing,
                         uint16_t num_classes)
    : dims_(dims), spacing_(spacing), num_classes_(num_classes), labels_(std::move(labels)) {
    validate();
}

void LabelVolume::validate() const {
    check_dims(dims_);
    check_spacing(spacing_);
    if (num_classes_ < 1) throw std::invalid_argument("num_classes must be >= 1");
    if (labels_.size() != dims_.voxels())
        throw std::invalid_argument("label buffer length != D*H*W");
    for (uint8_t l : labels_)
        if (l >= num_classes_) throw std::invalid_argument("label out of range");
}

std::size_t BinaryMask::count() const {
    return std::size_t(std::accumulate(v.begin(), v.end(), std::size_t(0)));
}

void BinaryMask::validate() const {
    check_dims(dims);
    if (v.size() != dims.voxels()) throw std::invalid_argument("mask buffer length != D*H*W");
    for (uint8_t b : v)
        if (b > 1) throw std::invalid_argument("mask values must be 0 or 1");
}

BinaryChannelMask::BinaryChannelMask(Dims dims, std::vector<uint8_t> class_ids)
    : dims_(dims), class_ids_(std::move(class_ids)), v_(class_ids_.size() * dims.voxels(), 0) {
    check_dims(dims_);
    if (class_ids_.empty()) throw std::invalid_argument("class list must be non-empty");
}

BinaryMask BinaryChannelMask::channel(uint32_t c) const {
    if (c >= channels()) throw std::invalid_argument("channel index out of range");
    BinaryMask out(dims_);
    std::copy(v_.begin() + std::size_t(c) * dims_.voxels(),
              v_.begin() + std::size_t(c + 1) * dims_.voxels(), out.v.begin());
    return out;
}

void BinaryChannelMask::validate() const {
    check_dims(dims_);
    if (class_ids_.empty()) throw std::invalid_argument("class list must be non-empty");
    if (v_.size() != std::size_t(channels()) * dims_.voxels())
        throw std::invalid_argument("mask buffer length != C*D*H*W");
    for (uint8_t b : v_)
        if (b > 1) throw std::invalid_argument("mask values must be 0 or 1");
}

BinaryChannelMask binarize(const LabelVolume& mask, const std::vector<uint8_t>& classes) {
    if (classes.empty()) throw std::invalid_argument("binarize: class list is empty");
    std::set<uint8_t> seen;
    for (uint8_t id : classes) {
        if (id >= mask.num_classes())
            throw std::invalid_argument("binarize: unknown class id " + std::to_string(id));
        if (!seen.insert(id).second)
            throw std::invalid_argument("binarize: duplicate class id " + std::to_string(id));
    }
    BinaryChannelMask out(mask.dims(), classes);
    const std::size_t n = mask.dims().voxels();
    const auto& labels = mask.labels();
    for (uint32_t c = 0; c < out.channels(); ++c) {
        const uint8_t id = classes[c];
        uint8_t* dst = out.values().data() + std::size_t(c) * n;
        for (std::size_t i = 0; i < n; ++i) dst[i] = labels[i] == id ? 1 : 0;
    }
    return out;
}

LabelVolume filter_fine_grained(const LabelVolume& mask, const std::vector<uint8_t>& fine_classes) {
    bool keep[256] = {};
    for (uint8_t id : fine_classes) {
        if (id >= mask.num_classes())
            throw std::invalid_argument("filter_fine_grained: unknown class id " + std::to_string(id));
        keep[id] = true;
    }
    std::vector<uint8_t> out = mask.labels();
    for (auto& l : out)
        if (!keep[l]) l = 0;
    return LabelVolume(mask.dims(), std::move(out), mask.spacing(), mask.num_classes());
}

namespace {

// Source index-space coordinate of target voxel j under voxel-center
// alignment; identity when n_src == n_dst.
inline double center_coord(uint32_t j, uint32_t n_dst, uint32_t n_src) {
    return (double(j) + 0.5) * double(n_src) / double(n_dst) - 0.5;
}

struct LinearWeight {
    uint32_t i0, i1;
    double f;  // weight of i1
};

inline LinearWeight linear_weight(double coord, uint32_t n) {
    double clamped = std::clamp(coord, 0.0, double(n - 1));
    double fl = std::floor(clamped);
    LinearWeight lw;
    lw.i0 = uint32_t(fl);
    lw.i1 = std::min(lw.i0 + 1, n - 1);
    lw.f = clamped - fl;
    return lw;
}

inline uint32_t nearest_index(double coord, uint32_t n) {
    long r = std::lround(coord);
    return uint32_t(std::clamp<long>(r, 0, long(n) - 1));
}

Spacing rescale_spacing(const Spacing& s, const Dims& src, const Dims& dst) {
    return Spacing{s.sx * float(double(src.w) / dst.w), s.sy * float(double(src.h) / dst.h),
                   s.sz * float(double(src.d) / dst.d)};
}

}  // namespace

Volume resample(const Volume& vol, Dims target_dims, ResampleMode mode) {
    check_dims(target_dims);
    const Dims& sd = vol.dims();
    Volume out(target_dims, vol.channels(), rescale_spacing(vol.spacing(), sd, target_dims),
               vol.range_lo(), vol.range_hi());
    for (uint32_t c = 0; c < vol.channels(); ++c) {
        parallel_for(target_dims.d, [&](std::size_t z0, std::size_t z1) {
            for (std::size_t z = z0; z < z1; ++z) {
                double cz = center_coord(uint32_t(z), target_dims.d, sd.d);
                for (uint32_t y = 0; y < target_dims.h; ++y) {
                    double cy = center_coord(y, target_dims.h, sd.h);
                    for (uint32_t x = 0; x < target_dims.w; ++x) {
                        double cx = center_coord(x, target_dims.w, sd.w);
                        float value;
                        if (mode == ResampleMode::Nearest) {
                            value = vol.at(c, nearest_index(cz, sd.d), nearest_index(cy, sd.h),
                                           nearest_index(cx, sd.w));
                        } else {
                            auto wz = linear_weight(cz, sd.d);
                            auto wy = linear_weight(cy, sd.h);
                            auto wx = linear_weight(cx, sd.w);
                            double acc = 0.0;
                            for (int iz = 0; iz < 2; ++iz)
                                for (int iy = 0; iy < 2; ++iy)
                                    for (int ix = 0; ix < 2; ++ix) {
                                        double wgt = (iz ? wz.f : 1.0 - wz.f) *
                                                     (iy ? wy.f : 1.0 - wy.f) *
                                                     (ix ? wx.f : 1.0 - wx.f);
                                        acc += wgt * vol.at(c, iz ? wz.i1 : wz.i0,
                                                            iy ? wy.i1 : wy.i0,
                                                            ix ? wx.i1 : wx.i0);
                                    }
                            value = float(acc);
                        }
                        out.at(c, uint32_t(z), y, x) = value;
                    }
                }
            }
        });
    }
    return out;
}

LabelVolume resample(const LabelVolume& vol, Dims target_dims, ResampleMode mode) {
    if (mode != ResampleMode::Nearest)
        throw std::invalid_argument("resample: label volumes require nearest mode");
    check_dims(target_dims);
    const Dims& sd = vol.dims();
    LabelVolume out(target_dims, rescale_spacing(vol.spacing(), sd, target_dims),
                    vol.num_classes());
    for (uint32_t z = 0; z < target_dims.d; ++z) {
        uint32_t iz = nearest_index(center_coord(z, target_dims.d, sd.d), sd.d);
        for (uint32_t y = 0; y < target_dims.h; ++y) {
            uint32_t iy = nearest_index(center_coord(y, target_dims.h, sd.h), sd.h);
            for (uint32_t x = 0; x < target_dims.w; ++x) {
                uint32_t ix = nearest_index(center_coord(x, target_dims.w, sd.w), sd.w);
                out.at(z, y, x) = vol.at(iz, iy, ix);
            }
        }
    }
    return out;
}

BinaryMask extract_class(const LabelVolume& mask, uint8_t id) {
    BinaryMask out(mask.dims());
    const auto& labels = mask.labels();
    for (std::size_t i = 0; i < labels.size(); ++i) out.v[i] = labels[i] == id ? 1 : 0;
    return out;
}

}  // namespace structvol
