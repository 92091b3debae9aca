#pragma once

#include <cstdint>

#include "structvol/conditioning.hpp"
#include "structvol/ssv.hpp"
#include "structvol/volume.hpp"

namespace structvol {

// Synthetic inputs for the demo pipeline and the verification suites.

// Curved tube of the given class through an otherwise empty volume. The
// centerline runs along x with a sinusoidal offset in y and z.
LabelVolume make_tube_phantom(Dims dims, uint8_t class_id, double radius, double bend_amplitude);

// Two-class phantom: an ellipsoidal blob of class 1 (fraction of the volume
// controlled by the radius scale) with intensity fg on class 1 and bg
// elsewhere, plus optional seeded Gaussian intensity noise.
struct TwoClassPhantomOptions {
    Dims dims{16, 16, 16};
    double radius_scale = 0.35;  // blob radius as a fraction of the smallest extent
    double center_jitter = 0.0;  // seeded center offset in voxels
    double fg_intensity = 1.0;
    double bg_intensity = 0.0;
    double noise_sigma = 0.0;
    uint64_t seed = 0;
};

DataPair make_two_class_phantom(const TwoClassPhantomOptions& opt);

// Swaps fg/bg intensity on a seeded fraction of voxels and zeroes the
// confidence there; clean voxels keep confidence 1. Labels stay truthful, so
// corrupted voxels carry a misleading intensity.
SyntheticEntry corrupt_phantom(const DataPair& clean, double corrupt_fraction, double fg_intensity,
                               double bg_intensity, uint64_t seed);

// Demo heart-like pair: class 1 chamber blob plus a class 8 vessel tube,
// with a per-class intensity pattern and seeded texture noise.
DataPair make_demo_pair(Dims dims, uint64_t seed);

}  // namespace structvol
