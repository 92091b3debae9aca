#pragma once

// Shared fixtures and independent oracles for the test suites. Everything in
// here stays deliberately separate from the library implementation paths it
// checks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "structvol/rng.hpp"
#include "structvol/volume.hpp"

namespace testsup {

using structvol::Dims;
using structvol::LabelVolume;
using structvol::Volume;

inline Volume random_volume(Dims dims, uint32_t channels, uint64_t seed, float lo = -1.0f,
                            float hi = 1.0f) {
    std::vector<float> values(std::size_t(channels) * dims.voxels());
    for (std::size_t i = 0; i < values.size(); ++i)
        values[i] = float(structvol::rng::uniform_range(seed, 0xABCDull, i, lo, hi));
    return Volume(dims, channels, std::move(values), {}, lo, hi);
}

inline LabelVolume random_labels(Dims dims, uint16_t num_classes, uint64_t seed) {
    std::vector<uint8_t> labels(dims.voxels());
    for (std::size_t i = 0; i < labels.size(); ++i)
        labels[i] = uint8_t(structvol::rng::uniform_index(seed, 0xBCDEull, i, num_classes));
    return LabelVolume(dims, std::move(labels), {}, num_classes);
}

// Mean and standard deviation of a sample (population std).
struct Moments {
    double mean = 0.0;
    double stddev = 0.0;
};

inline Moments moments(const std::vector<double>& xs) {
    double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / double(xs.size());
    double acc = 0.0;
    for (double x : xs) acc += (x - mean) * (x - mean);
    return {mean, std::sqrt(acc / double(xs.size()))};
}

inline double normal_cdf(double x, double mu, double sigma) {
    return 0.5 * std::erfc(-(x - mu) / (sigma * std::sqrt(2.0)));
}

// Kolmogorov-Smirnov statistic of a sample against N(mu, sigma^2).
inline double ks_statistic(std::vector<double> xs, double mu, double sigma) {
    std::sort(xs.begin(), xs.end());
    const double n = double(xs.size());
    double d = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        double cdf = normal_cdf(xs[i], mu, sigma);
        d = std::max(d, std::abs(cdf - double(i) / n));
        d = std::max(d, std::abs(double(i + 1) / n - cdf));
    }
    return d;
}

// Spearman rank correlation with average ranks for ties.
inline std::vector<double> ranks(const std::vector<double>& xs) {
    std::vector<std::size_t> idx(xs.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
    std::vector<double> r(xs.size());
    std::size_t i = 0;
    while (i < idx.size()) {
        std::size_t j = i;
        while (j + 1 < idx.size() && xs[idx[j + 1]] == xs[idx[i]]) ++j;
        double avg = (double(i) + double(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
        i = j + 1;
    }
    return r;
}

inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
    std::vector<double> ra = ranks(a), rb = ranks(b);
    double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / double(ra.size());
    double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / double(rb.size());
    double num = 0.0, da = 0.0, db = 0.0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        num += (ra[i] - ma) * (rb[i] - mb);
        da += (ra[i] - ma) * (ra[i] - ma);
        db += (rb[i] - mb) * (rb[i] - mb);
    }
    return num / std::sqrt(da * db);
}

}  // namespace testsup
