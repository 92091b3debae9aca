#include "structvol/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace structvol {

void SsimConfig::validate() const {
    if (window < 1 || window % 2 == 0)
        throw std::invalid_argument("SSIM window size must be odd and >= 1");
    if (!(dynamic_range > 0.0)) throw std::invalid_argument("SSIM dynamic range must be > 0");
}

SsimConfig SsimConfig::for_volume(const Volume& reference) {
    SsimConfig cfg;
    double range = double(reference.range_hi()) - double(reference.range_lo());
    cfg.dynamic_range = range > 0.0 ? range : 1.0;
    return cfg;
}

namespace {

void require_same_grid(const Volume& x, const Volume& y, const char* op) {
    if (!(x.dims() == y.dims()) || x.channels() != y.channels())
        throw std::invalid_argument(std::string(op) + ": volume shapes disagree");
}

}  // namespace

double ssim(const Volume& x, const Volume& y, const SsimConfig& cfg) {
    cfg.validate();
    require_same_grid(x, y, "ssim");
    if (x.channels() != 1) throw std::invalid_argument("ssim: single-channel volumes only");

    const Dims& dims = x.dims();
    uint32_t wd = std::min(cfg.window, dims.d);
    uint32_t wh = std::min(cfg.window, dims.h);
    uint32_t ww = std::min(cfg.window, dims.w);

    const double c1 = (cfg.k1 * cfg.dynamic_range) * (cfg.k1 * cfg.dynamic_range);
    const double c2 = (cfg.k2 * cfg.dynamic_range) * (cfg.k2 * cfg.dynamic_range);
    const double n = double(wd) * wh * ww;

    double total = 0.0;
    std::size_t windows = 0;
    for (uint32_t z = 0; z + wd <= dims.d; ++z) {
        for (uint32_t yy = 0; yy + wh <= dims.h; ++yy) {
            for (uint32_t xx = 0; xx + ww <= dims.w; ++xx) {
                double sum_x = 0.0, sum_y = 0.0;
                for (uint32_t dz = 0; dz < wd; ++dz)
                    for (uint32_t dy = 0; dy < wh; ++dy)
                        for (uint32_t dx = 0; dx < ww; ++dx) {
                            sum_x += x.at(0, z + dz, yy + dy, xx + dx);
                            sum_y += y.at(0, z + dz, yy + dy, xx + dx);
                        }
                double mu_x = sum_x / n, mu_y = sum_y / n;
                double var_x = 0.0, var_y = 0.0, cov = 0.0;
                for (uint32_t dz = 0; dz < wd; ++dz)
                    for (uint32_t dy = 0; dy < wh; ++dy)
                        for (uint32_t dx = 0; dx < ww; ++dx) {
                            double ex = x.at(0, z + dz, yy + dy, xx + dx) - mu_x;
                            double ey = y.at(0, z + dz, yy + dy, xx + dx) - mu_y;
                            var_x += ex * ex;
                            var_y += ey * ey;
                            cov += ex * ey;
                        }
                var_x /= n;
                var_y /= n;
                cov /= n;
                double num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2);
                double den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2);
                total += num / den;
                ++windows;
            }
        }
    }
    return total / double(windows);
}

double rmse(const Volume& x, const Volume& y) {
    require_same_grid(x, y, "rmse");
    const auto& xv = x.values();
    const auto& yv = y.values();
    double acc = 0.0;
    for (std::size_t i = 0; i < xv.size(); ++i) {
        double d = double(xv[i]) - double(yv[i]);
        acc += d * d;
    }
    return std::sqrt(acc / double(xv.size()));
}

namespace {

void require_same_dims(const BinaryMask& p, const BinaryMask& q, const char* op) {
    if (!(p.dims == q.dims)) throw std::invalid_argument(std::string(op) + ": mask dims disagree");
}

}  // namespace

double dice(const BinaryMask& p, const BinaryMask& q) {
    require_same_dims(p, q, "dice");
    std::size_t inter = 0, np = 0, nq = 0;
    for (std::size_t i = 0; i < p.v.size(); ++i) {
        np += p.v[i];
        nq += q.v[i];
        inter += std::size_t(p.v[i] & q.v[i]);
    }
    if (np + nq == 0) return 1.0;
    return 2.0 * double(inter) / double(np + nq);
}

BinaryMask dilate(const BinaryMask& b, uint32_t radius) {
    const Dims& dims = b.dims;
    BinaryMask out(dims);
    const long r = long(radius);
    for (uint32_t z = 0; z < dims.d; ++z)
        for (uint32_t y = 0; y < dims.h; ++y)
            for (uint32_t x = 0; x < dims.w; ++x) {
                uint8_t m = 0;
                for (long dz = -r; dz <= r && !m; ++dz)
                    for (long dy = -r; dy <= r && !m; ++dy)
                        for (long dx = -r; dx <= r && !m; ++dx) {
                            long zz = long(z) + dz, yy = long(y) + dy, xx = long(x) + dx;
                            if (zz < 0 || yy < 0 || xx < 0 || zz >= long(dims.d) ||
                                yy >= long(dims.h) || xx >= long(dims.w))
                                continue;
                            m = b.at(uint32_t(zz), uint32_t(yy), uint32_t(xx));
                        }
                out.at(z, y, x) = m;
            }
    return out;
}

double rdice(const BinaryMask& p, const BinaryMask& q, uint32_t dilation_radius) {
    require_same_dims(p, q, "rdice");
    if (dilation_radius < 1) throw std::invalid_argument("rdice: dilation radius must be >= 1");
    BinaryMask q_exp = dilate(q, dilation_radius);
    std::size_t n_pp = 0, n_q = 0, inter = 0;
    for (std::size_t i = 0; i < p.v.size(); ++i) {
        uint8_t pp = p.v[i] & q_exp.v[i];  // P' = P intersect Q'
        n_pp += pp;
        n_q += q.v[i];
        inter += std::size_t(pp & q.v[i]);
    }
    if (n_pp + n_q == 0) return 1.0;
    return 2.0 * double(inter) / double(n_pp + n_q);
}

}  // namespace structvol
