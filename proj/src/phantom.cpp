#include "structvol/phantom.hpp"

#include <algorithm>
#include <cmath>

#include "structvol/rng.hpp"

namespace structvol {

namespace {
constexpr uint64_t kStreamCenter = 0x70682D63656E7472ull;
constexpr uint64_t kStreamNoise = 0x70682D6E6F697365ull;
constexpr uint64_t kStreamCorrupt = 0x70682D636F727275ull;
constexpr double kPi = 3.14159265358979323846;
}  // namespace

LabelVolume make_tube_phantom(Dims dims, uint8_t class_id, double radius, double bend_amplitude) {
    if (class_id == 0) throw std::invalid_argument("tube class id must be a foreground class");
    LabelVolume out(dims);
    if (class_id >= out.num_classes())
        out = LabelVolume(dims, {}, uint16_t(class_id) + 1);

    // Sample the centerline densely, then mark spheres around it.
    const int samples = int(dims.w) * 8;
    const double cy = (double(dims.h) - 1.0) / 2.0;
    const double cz = (double(dims.d) - 1.0) / 2.0;
    const double r2 = radius * radius;
    for (int s = 0; s <= samples; ++s) {
        double t = double(s) / double(samples);
        double px = t * (double(dims.w) - 1.0);
        double py = cy + bend_amplitude * std::sin(2.0 * kPi * t);
        double pz = cz + bend_amplitude * std::cos(2.0 * kPi * t) - bend_amplitude;
        long zlo = std::max<long>(0, long(std::floor(pz - radius)));
        long zhi = std::min<long>(long(dims.d) - 1, long(std::ceil(pz + radius)));
        long ylo = std::max<long>(0, long(std::floor(py - radius)));
        long yhi = std::min<long>(long(dims.h) - 1, long(std::ceil(py + radius)));
        long xlo = std::max<long>(0, long(std::floor(px - radius)));
        long xhi = std::min<long>(long(dims.w) - 1, long(std::ceil(px + radius)));
        for (long z = zlo; z <= zhi; ++z)
            for (long y = ylo; y <= yhi; ++y)
                for (long x = xlo; x <= xhi; ++x) {
                    double dz = double(z) - pz, dy = double(y) - py, dx = double(x) - px;
                    if (dz * dz + dy * dy + dx * dx <= r2)
                        out.at(uint32_t(z), uint32_t(y), uint32_t(x)) = class_id;
                }
    }
    return out;
}

DataPair make_two_class_phantom(const TwoClassPhantomOptions& opt) {
    const Dims& dims = opt.dims;
    double min_extent = double(std::min({dims.d, dims.h, dims.w}));
    double radius = opt.radius_scale * min_extent;
    double cx = (double(dims.w) - 1.0) / 2.0;
    double cy = (double(dims.h) - 1.0) / 2.0;
    double cz = (double(dims.d) - 1.0) / 2.0;
    if (opt.center_jitter > 0.0) {
        cx += rng::uniform_range(opt.seed, kStreamCenter, 0, -opt.center_jitter, opt.center_jitter);
        cy += rng::uniform_range(opt.seed, kStreamCenter, 1, -opt.center_jitter, opt.center_jitter);
        cz += rng::uniform_range(opt.seed, kStreamCenter, 2, -opt.center_jitter, opt.center_jitter);
    }

    LabelVolume mask(dims, {}, 2);
    float lo = float(std::min(opt.bg_intensity, opt.fg_intensity));
    float hi = float(std::max(opt.bg_intensity, opt.fg_intensity));
    Volume image(dims, 1, {}, lo, hi == lo ? lo + 1.0f : hi);
    const double r2 = radius * radius;
    for (uint32_t z = 0; z < dims.d; ++z)
        for (uint32_t y = 0; y < dims.h; ++y)
            for (uint32_t x = 0; x < dims.w; ++x) {
                double dz = double(z) - cz, dy = double(y) - cy, dx = double(x) - cx;
                bool inside = dz * dz + dy * dy + dx * dx <= r2;
                std::size_t v = voxel_index(dims, z, y, x);
                mask.labels()[v] = inside ? 1 : 0;
                double intensity = inside ? opt.fg_intensity : opt.bg_intensity;
                if (opt.noise_sigma > 0.0)
                    intensity += opt.noise_sigma * rng::normal(opt.seed, kStreamNoise, v);
                image.values()[v] = float(intensity);
            }
    return DataPair{std::move(image), std::move(mask)};
}

SyntheticEntry corrupt_phantom(const DataPair& clean, double corrupt_fraction, double fg_intensity,
                               double bg_intensity, uint64_t seed) {
    if (corrupt_fraction < 0.0 || corrupt_fraction > 1.0)
        throw std::invalid_argument("corrupt fraction must lie in [0, 1]");
    Volume image = clean.image;
    ConfidenceMap cmap(clean.mask.dims(), 1.0f);
    const std::size_t n = clean.mask.dims().voxels();
    for (std::size_t v = 0; v < n; ++v) {
        if (rng::uniform01(seed, kStreamCorrupt, v) >= corrupt_fraction) continue;
        bool fg = clean.mask.labels()[v] != 0;
        image.values()[v] = float(fg ? bg_intensity : fg_intensity);  // swapped
        cmap.v[v] = 0.0f;
    }
    return attach_confidence(clean.mask, std::move(image), std::move(cmap));
}

DataPair make_demo_pair(Dims dims, uint64_t seed) {
    // Chamber blob (class 1) with a seeded center plus a vessel tube
    // (class 8) bending around it.
    TwoClassPhantomOptions blob;
    blob.dims = dims;
    blob.radius_scale = 0.28;
    blob.center_jitter = double(std::min({dims.d, dims.h, dims.w})) * 0.08;
    blob.seed = seed;
    DataPair base = make_two_class_phantom(blob);

    double bend = double(dims.d) * 0.12 +
                  rng::uniform_range(seed, kStreamCenter, 7, 0.0, double(dims.d) * 0.08);
    LabelVolume tube = make_tube_phantom(dims, 8, 1.5, bend);

    LabelVolume mask(dims);
    Volume image(dims, 1, {}, 0.0f, 1.0f);
    const std::size_t n = dims.voxels();
    for (std::size_t v = 0; v < n; ++v) {
        uint8_t label = tube.labels()[v] ? 8 : (base.mask.labels()[v] ? 1 : 0);
        mask.labels()[v] = label;
        double intensity = label == 8 ? 0.9 : (label == 1 ? 0.55 : 0.1);
        intensity += 0.03 * rng::normal(seed, kStreamNoise, v);
        image.values()[v] = float(std::clamp(intensity, 0.0, 1.0));
    }
    return DataPair{std::move(image), std::move(mask)};
}

}  // namespace structvol
