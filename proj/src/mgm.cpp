#include "structvol/mgm.hpp"

#include <cmath>
#include <limits>

#include "structvol/rng.hpp"

namespace structvol {

namespace {
constexpr uint64_t kControlGridStream = 0x6D676D'6E72ull;  // mgm non-rigid draws
constexpr double kDetEps = 1e-8;
}  // namespace

Mat4 Mat4::identity() {
    Mat4 out;
    out.m = {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1};
    return out;
}

Mat4 Mat4::operator*(const Mat4& rhs) const {
    Mat4 out;
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) {
            double acc = 0.0;
            for (int k = 0; k < 4; ++k) acc += at(r, k) * rhs.at(k, c);
            out.at(r, c) = acc;
        }
    return out;
}

std::array<double, 3> Mat4::apply(double x, double y, double z) const {
    return {at(0, 0) * x + at(0, 1) * y + at(0, 2) * z + at(0, 3),
            at(1, 0) * x + at(1, 1) * y + at(1, 2) * z + at(1, 3),
            at(2, 0) * x + at(2, 1) * y + at(2, 2) * z + at(2, 3)};
}

double Mat4::det3() const {
    return at(0, 0) * (at(1, 1) * at(2, 2) - at(1, 2) * at(2, 1)) -
           at(0, 1) * (at(1, 0) * at(2, 2) - at(1, 2) * at(2, 0)) +
           at(0, 2) * (at(1, 0) * at(2, 1) - at(1, 1) * at(2, 0));
}

Mat4 Mat4::inverse_affine() const {
    double det = det3();
    if (std::abs(det) <= kDetEps)
        throw std::invalid_argument("affine matrix is not invertible (|det| <= 1e-8)");
    Mat4 inv = Mat4::identity();
    // Adjugate of the upper 3x3.
    inv.at(0, 0) = (at(1, 1) * at(2, 2) - at(1, 2) * at(2, 1)) / det;
    inv.at(0, 1) = (at(0, 2) * at(2, 1) - at(0, 1) * at(2, 2)) / det;
    inv.at(0, 2) = (at(0, 1) * at(1, 2) - at(0, 2) * at(1, 1)) / det;
    inv.at(1, 0) = (at(1, 2) * at(2, 0) - at(1, 0) * at(2, 2)) / det;
    inv.at(1, 1) = (at(0, 0) * at(2, 2) - at(0, 2) * at(2, 0)) / det;
    inv.at(1, 2) = (at(0, 2) * at(1, 0) - at(0, 0) * at(1, 2)) / det;
    inv.at(2, 0) = (at(1, 0) * at(2, 1) - at(1, 1) * at(2, 0)) / det;
    inv.at(2, 1) = (at(0, 1) * at(2, 0) - at(0, 0) * at(2, 1)) / det;
    inv.at(2, 2) = (at(0, 0) * at(1, 1) - at(0, 1) * at(1, 0)) / det;
    for (int r = 0; r < 3; ++r) {
        double t = 0.0;
        for (int k = 0; k < 3; ++k) t += inv.at(r, k) * at(k, 3);
        inv.at(r, 3) = -t;
    }
    return inv;
}

void AffineParams::validate() const {
    for (double s : scale)
        if (!(s > 0.0) || !std::isfinite(s))
            throw std::invalid_argument("affine scale factors must be positive and finite");
    for (const auto& group : {rotation, shear, translation})
        for (double v : group)
            if (!std::isfinite(v)) throw std::invalid_argument("affine parameters must be finite");
}

void NonRigidParams::validate() const {
    if (!(amplitude >= 0.0) || !std::isfinite(amplitude))
        throw std::invalid_argument("non-rigid amplitude must be >= 0");
    if (smoothness < 2) throw std::invalid_argument("non-rigid smoothness must be >= 2");
}

void DeformationField::validate() const {
    if (std::abs(omega.det3()) <= kDetEps)
        throw std::invalid_argument("deformation affine is not invertible");
    const std::size_t n = dims.voxels();
    if (dx.size() != n || dy.size() != n || dz.size() != n)
        throw std::invalid_argument("displacement field length != D*H*W");
    const double bound = amplitude + 1e-6;
    for (const auto* comp : {&dx, &dy, &dz})
        for (float v : *comp)
            if (!std::isfinite(v) || std::abs(v) > bound)
                throw std::invalid_argument("displacement exceeds amplitude bound");
}

namespace {

Mat4 translation_matrix(double tx, double ty, double tz) {
    Mat4 t = Mat4::identity();
    t.at(0, 3) = tx;
    t.at(1, 3) = ty;
    t.at(2, 3) = tz;
    return t;
}

Mat4 rotation_matrix(const std::array<double, 3>& r) {
    double cx = std::cos(r[0]), sx = std::sin(r[0]);
    double cy = std::cos(r[1]), sy = std::sin(r[1]);
    double cz = std::cos(r[2]), sz = std::sin(r[2]);
    Mat4 rx = Mat4::identity();
    rx.at(1, 1) = cx;
    rx.at(1, 2) = -sx;
    rx.at(2, 1) = sx;
    rx.at(2, 2) = cx;
    Mat4 ry = Mat4::identity();
    ry.at(0, 0) = cy;
    ry.at(0, 2) = sy;
    ry.at(2, 0) = -sy;
    ry.at(2, 2) = cy;
    Mat4 rz = Mat4::identity();
    rz.at(0, 0) = cz;
    rz.at(0, 1) = -sz;
    rz.at(1, 0) = sz;
    rz.at(1, 1) = cz;
    return rz * ry * rx;
}

Mat4 shear_matrix(const std::array<double, 3>& s) {
    Mat4 sh = Mat4::identity();
    sh.at(0, 1) = s[0];  // x += s_xy * y
    sh.at(0, 2) = s[1];  // x += s_xz * z
    sh.at(1, 2) = s[2];  // y += s_yz * z
    return sh;
}

Mat4 scale_matrix(const std::array<double, 3>& s) {
    Mat4 sc = Mat4::identity();
    sc.at(0, 0) = s[0];
    sc.at(1, 1) = s[1];
    sc.at(2, 2) = s[2];
    return sc;
}

}  // namespace

Mat4 make_affine(const AffineParams& p, const Dims& dims) {
    p.validate();
    double cx = (double(dims.w) - 1.0) / 2.0;
    double cy = (double(dims.h) - 1.0) / 2.0;
    double cz = (double(dims.d) - 1.0) / 2.0;
    Mat4 core = translation_matrix(p.translation[0], p.translation[1], p.translation[2]) *
                rotation_matrix(p.rotation) * shear_matrix(p.shear) * scale_matrix(p.scale);
    Mat4 omega = translation_matrix(cx, cy, cz) * core * translation_matrix(-cx, -cy, -cz);
    if (std::abs(omega.det3()) <= kDetEps)
        throw std::invalid_argument("affine parameters produce a degenerate matrix");
    return omega;
}

DeformationField make_nonrigid(const NonRigidParams& p, const Dims& dims, uint64_t seed) {
    p.validate();
    DeformationField field;
    field.omega = Mat4::identity();
    field.dims = dims;
    field.amplitude = p.amplitude;
    const std::size_t n = dims.voxels();
    field.dx.assign(n, 0.0f);
    field.dy.assign(n, 0.0f);
    field.dz.assign(n, 0.0f);
    if (p.amplitude == 0.0) return field;

    const uint32_t zeta = p.smoothness;
    // Control points at multiples of zeta, covering [0, N-1].
    auto grid_count = [zeta](uint32_t extent) {
        return (extent - 1) / zeta + 2;
    };
    const uint32_t gd = grid_count(dims.d), gh = grid_count(dims.h), gw = grid_count(dims.w);
    const std::size_t gn = std::size_t(gd) * gh * gw;
    std::vector<float> cx(gn), cy(gn), cz(gn);
    for (std::size_t i = 0; i < gn; ++i) {
        cx[i] = float(rng::uniform_range(seed, kControlGridStream, 3 * i + 0, -p.amplitude, p.amplitude));
        cy[i] = float(rng::uniform_range(seed, kControlGridStream, 3 * i + 1, -p.amplitude, p.amplitude));
        cz[i] = float(rng::uniform_range(seed, kControlGridStream, 3 * i + 2, -p.amplitude, p.amplitude));
    }
    auto cidx = [gh, gw](uint32_t z, uint32_t y, uint32_t x) {
        return (std::size_t(z) * gh + y) * gw + x;
    };

    parallel_for(dims.d, [&](std::size_t z0, std::size_t z1) {
        for (std::size_t z = z0; z < z1; ++z) {
            uint32_t iz = uint32_t(z) / zeta;
            double fz = double(z) / zeta - iz;
            for (uint32_t y = 0; y < dims.h; ++y) {
                uint32_t iy = y / zeta;
                double fy = double(y) / zeta - iy;
                for (uint32_t x = 0; x < dims.w; ++x) {
                    uint32_t ix = x / zeta;
                    double fx = double(x) / zeta - ix;
                    double ax = 0, ay = 0, az = 0;
                    for (int oz = 0; oz < 2; ++oz)
                        for (int oy = 0; oy < 2; ++oy)
                            for (int ox = 0; ox < 2; ++ox) {
                                double wgt = (oz ? fz : 1.0 - fz) * (oy ? fy : 1.0 - fy) *
                                             (ox ? fx : 1.0 - fx);
                                std::size_t ci = cidx(iz + oz, iy + oy, ix + ox);
                                ax += wgt * cx[ci];
                                ay += wgt * cy[ci];
                                az += wgt * cz[ci];
                            }
                    std::size_t vi = voxel_index(dims, uint32_t(z), y, x);
                    field.dx[vi] = float(ax);
                    field.dy[vi] = float(ay);
                    field.dz[vi] = float(az);
                }
            }
        }
    });
    return field;
}

DeformationField make_deformation(const AffineParams& ap, const NonRigidParams& np,
                                  const Dims& dims, uint64_t seed) {
    DeformationField field = make_nonrigid(np, dims, seed);
    field.omega = make_affine(ap, dims);
    return field;
}

BinaryMask warp_class(const BinaryMask& class_mask, const DeformationField& field) {
    if (!(class_mask.dims == field.dims))
        throw std::invalid_argument("warp_class: mask and field shapes disagree");
    const Dims& dims = class_mask.dims;
    Mat4 inv = field.omega.inverse_affine();
    BinaryMask out(dims);
    parallel_for(dims.d, [&](std::size_t z0, std::size_t z1) {
        for (std::size_t z = z0; z < z1; ++z) {
            for (uint32_t y = 0; y < dims.h; ++y) {
                for (uint32_t x = 0; x < dims.w; ++x) {
                    std::size_t vi = voxel_index(dims, uint32_t(z), y, x);
                    auto src = inv.apply(double(x) - field.dx[vi], double(y) - field.dy[vi],
                                         double(z) - field.dz[vi]);
                    long sx = std::lround(src[0]);
                    long sy = std::lround(src[1]);
                    long sz = std::lround(src[2]);
                    if (sx < 0 || sy < 0 || sz < 0 || sx >= long(dims.w) || sy >= long(dims.h) ||
                        sz >= long(dims.d))
                        continue;
                    out.v[vi] = class_mask.at(uint32_t(sz), uint32_t(sy), uint32_t(sx));
                }
            }
        }
    });
    return out;
}

BinaryMask close_class(const BinaryMask& b) {
    const Dims& dims = b.dims;
    BinaryMask out(dims);
    parallel_for(dims.d, [&](std::size_t z0, std::size_t z1) {
        for (std::size_t z = z0; z < z1; ++z) {
            for (uint32_t y = 0; y < dims.h; ++y) {
                for (uint32_t x = 0; x < dims.w; ++x) {
                    uint8_t m = 0;
                    for (uint32_t oz = 0; oz < 2 && !m; ++oz)
                        for (uint32_t oy = 0; oy < 2 && !m; ++oy)
                            for (uint32_t ox = 0; ox < 2 && !m; ++ox) {
                                uint32_t zz = uint32_t(z) + oz, yy = y + oy, xx = x + ox;
                                if (zz < dims.d && yy < dims.h && xx < dims.w)
                                    m = b.at(zz, yy, xx);
                            }
                    out.at(uint32_t(z), y, x) = m;
                }
            }
        }
    });
    return out;
}

LabelVolume generate_mask(const LabelVolume& m, const AffineParams& ap, const NonRigidParams& np,
                          uint64_t seed) {
    for (uint8_t l : m.labels())
        if (l > 8)
            throw std::invalid_argument(
                "generate_mask: input must be filtered to fine-grained labels 0..8");
    DeformationField field = make_deformation(ap, np, m.dims(), seed);
    LabelVolume out(m.dims(), m.spacing(), m.num_classes());
    for (uint8_t cls = 1; cls <= 8; ++cls) {
        BinaryMask part = extract_class(m, cls);
        if (part.count() == 0) continue;
        BinaryMask closed = close_class(warp_class(part, field));
        for (std::size_t i = 0; i < closed.v.size(); ++i)
            if (closed.v[i]) out.labels()[i] = cls;  // ascending loop: higher class wins
    }
    return out;
}

std::size_t component_count(const BinaryMask& b, Connectivity connectivity) {
    const Dims& dims = b.dims;
    const std::size_t n = dims.voxels();
    std::vector<uint8_t> visited(n, 0);
    std::vector<std::size_t> stack;
    std::size_t components = 0;

    auto neighbors = [&](std::size_t idx, auto&& push) {
        uint32_t x = uint32_t(idx % dims.w);
        uint32_t y = uint32_t((idx / dims.w) % dims.h);
        uint32_t z = uint32_t(idx / (std::size_t(dims.w) * dims.h));
        for (int dz = -1; dz <= 1; ++dz)
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    if (dz == 0 && dy == 0 && dx == 0) continue;
                    if (connectivity == Connectivity::Six &&
                        std::abs(dz) + std::abs(dy) + std::abs(dx) != 1)
                        continue;
                    long zz = long(z) + dz, yy = long(y) + dy, xx = long(x) + dx;
                    if (zz < 0 || yy < 0 || xx < 0 || zz >= long(dims.d) || yy >= long(dims.h) ||
                        xx >= long(dims.w))
                        continue;
                    push(voxel_index(dims, uint32_t(zz), uint32_t(yy), uint32_t(xx)));
                }
    };

    for (std::size_t i = 0; i < n; ++i) {
        if (!b.v[i] || visited[i]) continue;
        ++components;
        visited[i] = 1;
        stack.push_back(i);
        while (!stack.empty()) {
            std::size_t cur = stack.back();
            stack.pop_back();
            neighbors(cur, [&](std::size_t nb) {
                if (b.v[nb] && !visited[nb]) {
                    visited[nb] = 1;
                    stack.push_back(nb);
                }
            });
        }
    }
    return components;
}

}  // namespace structvol
