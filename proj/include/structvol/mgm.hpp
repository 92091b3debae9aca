#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "structvol/volume.hpp"

namespace structvol {

// Row-major 4x4 homogeneous transform over (x, y, z, 1) column vectors.
struct Mat4 {
    std::array<double, 16> m{};

    static Mat4 identity();
    Mat4 operator*(const Mat4& rhs) const;
    std::array<double, 3> apply(double x, double y, double z) const;
    double det3() const;          // determinant of the upper 3x3 block
    Mat4 inverse_affine() const;  // throws invalid_argument when det3 ~ 0

    double& at(int r, int c) { return m[std::size_t(r) * 4 + c]; }
    double at(int r, int c) const { return m[std::size_t(r) * 4 + c]; }
};

struct AffineParams {
    std::array<double, 3> rotation{};     // radians about x, y, z
    std::array<double, 3> scale{1, 1, 1};  // per-axis factors, positive
    std::array<double, 3> shear{};        // xy, xz, yz upper-triangular terms
    std::array<double, 3> translation{};  // voxels

    void validate() const;
};

struct NonRigidParams {
    double amplitude = 0.0;   // max displacement per component, voxels
    uint32_t smoothness = 4;  // control-grid spacing in voxels, >= 2

    void validate() const;
};

// Affine matrix plus per-voxel displacements, both in voxel coordinates.
// Displacement components are bounded by the amplitude that generated them.
struct DeformationField {
    Mat4 omega;
    Dims dims;
    std::vector<float> dx, dy, dz;
    double amplitude = 0.0;

    void validate() const;
};

// Builds T(translation) * R(rotation) * Shear * Scale about the volume
// center. Identity parameters give the identity matrix.
Mat4 make_affine(const AffineParams& p, const Dims& dims);

// Seeded random control grid (spacing = smoothness) with displacements
// uniform in [-amplitude, amplitude]^3, interpolated trilinearly to every
// voxel. Deterministic per (params, dims, seed).
DeformationField make_nonrigid(const NonRigidParams& p, const Dims& dims, uint64_t seed);

DeformationField make_deformation(const AffineParams& ap, const NonRigidParams& np,
                                  const Dims& dims, uint64_t seed);

// Pull-back warp with nearest-neighbor rounding:
//   output(v) = input(round(omega^-1 * (v - psi(v)))), out-of-range reads 0.
// The rounding is what produces the micro-fractures the closing step repairs.
BinaryMask warp_class(const BinaryMask& class_mask, const DeformationField& field);

// 2x2x2 max-pool, stride 1, zero padded: output(v) = max over offsets in
// {0,1}^3 of input(v + o). Fills every single-voxel axis-aligned gap and
// grows the mask by at most one voxel.
BinaryMask close_class(const BinaryMask& b);

// Per class i in 1..8: extract, warp, close, then union. On overlap the
// higher class index wins so fine structures are not swallowed by large
// neighbors. Input must already be filtered to fine-grained labels (0..8).
LabelVolume generate_mask(const LabelVolume& m, const AffineParams& ap, const NonRigidParams& np,
                          uint64_t seed);

enum class Connectivity : int { Six = 6, TwentySix = 26 };

std::size_t component_count(const BinaryMask& b, Connectivity connectivity);

}  // namespace structvol
