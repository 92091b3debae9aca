#pragma once

#include <cstdint>

#include "structvol/volume.hpp"

namespace structvol {

struct SsimConfig {
    uint32_t window = 7;  // odd
    double k1 = 0.01;
    double k2 = 0.03;
    double dynamic_range = 1.0;  // L; C1 = (k1*L)^2, C2 = (k2*L)^2

    void validate() const;
    static SsimConfig for_volume(const Volume& reference);
};

// Mean over all w^3 sliding windows (stride 1, fully inside the grid) of the
// luminance/contrast/structure ratio with window-local statistics. Volumes
// smaller than the window fall back to one window covering the whole grid.
double ssim(const Volume& x, const Volume& y, const SsimConfig& cfg);

double rmse(const Volume& x, const Volume& y);

// 2|P and Q| / (|P| + |Q|); 1.0 when both masks are empty.
double dice(const BinaryMask& p, const BinaryMask& q);

// Dilation-tolerant variant: Q' = dilate(q, radius, 26-neighborhood ball),
// P' = P intersect Q', result = 2|P' and Q| / (|P'| + |Q|).
double rdice(const BinaryMask& p, const BinaryMask& q, uint32_t dilation_radius = 1);

BinaryMask dilate(const BinaryMask& b, uint32_t radius);

}  // namespace structvol
