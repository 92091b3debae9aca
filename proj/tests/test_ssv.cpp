#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "structvol/ssv.hpp"
#include "support.hpp"

using namespace structvol;

namespace {

Volume constant_volume(Dims dims, float value) {
    return Volume(dims, 1, std::vector<float>(dims.voxels(), value), {}, -10.0f, 10.0f);
}

// Trace whose per-voxel noise magnitude follows a known field g.
SkipTrace noisy_trace(Dims dims, const std::vector<double>& g, std::size_t count, uint64_t seed) {
    SkipTrace trace;
    for (std::size_t i = 0; i < count; ++i) {
        Volume v = constant_volume(dims, 0.0f);
        for (std::size_t j = 0; j < g.size(); ++j)
            v.values()[j] = float(g[j] * rng::normal(seed, 100 + i, j));
        trace.steps.push_back(int(i));
        trace.volumes.push_back(std::move(v));
    }
    return trace;
}

}  // namespace

TEST_SUITE_BEGIN("ssv");

TEST_CASE("skip schedules follow r = floor((T-1)/k)") {
    SkipSchedule s = skip_schedule(1000, 100);
    CHECK(s.repeats() == 9);
    CHECK(s.steps.front() == 0);
    CHECK(s.steps.back() == 900);

    CHECK(skip_schedule(10, 3).steps == std::vector<int>{0, 3, 6, 9});
    CHECK(skip_schedule(5, 10).steps == std::vector<int>{0});
    CHECK_THROWS_AS(skip_schedule(10, 0), std::invalid_argument);
    CHECK_THROWS_AS(skip_schedule(0, 1), std::invalid_argument);
}

TEST_CASE("identical trace volumes give full confidence exactly") {
    Dims dims{3, 3, 3};
    SkipTrace trace;
    for (int i = 0; i < 4; ++i) {
        trace.steps.push_back(i);
        trace.volumes.push_back(constant_volume(dims, 0.75f));
    }
    // Same value everywhere: variance is identically zero.
    ConfidenceMap cmap = confidence_map(trace);
    for (float v : cmap.v) CHECK(v == 1.0f);
}

TEST_CASE("two-volume toy case reproduces the variance formula") {
    // Voxel a sees {0, 2}; voxel b sees {0, 0}: var a = 2 (sum/r with r = 1),
    // var b = 0, so after min-max normalization C(a) = 0 and C(b) = 1.
    Dims dims{1, 1, 2};
    Volume v0 = constant_volume(dims, 0.0f);
    Volume v1 = constant_volume(dims, 0.0f);
    v1.values()[0] = 2.0f;
    SkipTrace trace;
    trace.steps = {0, 1};
    trace.volumes = {v0, v1};
    ConfidenceMap cmap = confidence_map(trace);
    CHECK(cmap.v[0] == 0.0f);
    CHECK(cmap.v[1] == 1.0f);
}

TEST_CASE("confidence ranks anti-correlate with the noise field") {
    Dims dims{10, 10, 10};
    std::vector<double> g(dims.voxels());
    for (std::size_t i = 0; i < g.size(); ++i)
        g[i] = 0.01 * std::pow(100.0, double(i) / double(g.size() - 1));  // 0.01 .. 1
    SkipTrace trace = noisy_trace(dims, g, 10, 77);
    ConfidenceMap cmap = confidence_map(trace);

    std::vector<double> conf(cmap.v.begin(), cmap.v.end());
    std::vector<double> neg_g(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) neg_g[i] = -g[i];
    CHECK(testsup::spearman(conf, neg_g) >= 0.9);
}

TEST_CASE("confidence map range spans [0, 1] when variances differ") {
    Dims dims{4, 4, 4};
    std::vector<double> g(dims.voxels(), 0.1);
    g[0] = 1.0;
    SkipTrace trace = noisy_trace(dims, g, 6, 5);
    ConfidenceMap cmap = confidence_map(trace);
    CHECK(*std::min_element(cmap.v.begin(), cmap.v.end()) == 0.0f);
    CHECK(*std::max_element(cmap.v.begin(), cmap.v.end()) == 1.0f);
}

TEST_CASE("confidence is invariant to order, shift, and scale of the trace") {
    Dims dims{4, 4, 4};
    std::vector<double> g(dims.voxels());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = 0.05 + 0.02 * double(i % 7);
    SkipTrace base = noisy_trace(dims, g, 5, 31);
    ConfidenceMap ref = confidence_map(base);

    SkipTrace permuted = base;
    std::swap(permuted.volumes[0], permuted.volumes[3]);
    std::swap(permuted.volumes[1], permuted.volumes[4]);
    ConfidenceMap perm = confidence_map(permuted);
    for (std::size_t i = 0; i < ref.v.size(); ++i) CHECK(perm.v[i] == ref.v[i]);

    SkipTrace shifted = base;
    for (Volume& v : shifted.volumes)
        for (float& x : v.values()) x += 3.25f;
    ConfidenceMap shift = confidence_map(shifted);
    for (std::size_t i = 0; i < ref.v.size(); ++i)
        CHECK(std::abs(shift.v[i] - ref.v[i]) <= 1e-6f);

    SkipTrace scaled = base;
    for (Volume& v : scaled.volumes)
        for (float& x : v.values()) x *= -2.0f;
    ConfidenceMap scale = confidence_map(scaled);
    for (std::size_t i = 0; i < ref.v.size(); ++i)
        CHECK(std::abs(scale.v[i] - ref.v[i]) <= 1e-6f);
}

TEST_CASE("confidence_map rejects traces shorter than two") {
    SkipTrace trace;
    trace.steps = {0};
    trace.volumes = {constant_volume(Dims{2, 2, 2}, 0.0f)};
    CHECK_THROWS_AS(confidence_map(trace), std::invalid_argument);
}

TEST_CASE("attach_confidence names the offending member") {
    Dims dims{3, 3, 3};
    LabelVolume mask(dims);
    Volume image = constant_volume(dims, 0.5f);
    ConfidenceMap cmap(dims, 1.0f);
    SyntheticEntry entry = attach_confidence(mask, image, cmap);
    CHECK(entry.image.dims() == dims);

    Volume bad_image = constant_volume(Dims{3, 3, 4}, 0.5f);
    CHECK_THROWS_WITH_AS(attach_confidence(mask, bad_image, cmap),
                         "attach_confidence: image dims disagree with mask",
                         std::invalid_argument);
    ConfidenceMap bad_cmap(Dims{2, 3, 3}, 1.0f);
    CHECK_THROWS_WITH_AS(attach_confidence(mask, image, bad_cmap),
                         "attach_confidence: cmap dims disagree with mask",
                         std::invalid_argument);
}

TEST_CASE("entries survive the manifest round trip") {
    auto dir = std::filesystem::temp_directory_path() / "structvol_entry_test";
    std::filesystem::remove_all(dir);
    Dims dims{4, 4, 4};
    LabelVolume mask = testsup::random_labels(dims, 9, 3);
    Volume image = testsup::random_volume(dims, 1, 4, 0.0f, 1.0f);
    ConfidenceMap cmap(dims, 1.0f);
    cmap.v[7] = 0.25f;
    SyntheticEntry entry = attach_confidence(mask, image, cmap);

    nlohmann::json j = save_entry(dir, "case0", entry, 42, "linear:1e-4:0.02:100", 10);
    CHECK(j.at("seed") == 42);
    CHECK(j.at("k") == 10);
    SyntheticEntry back = load_entry(j, dir);
    CHECK(back.mask.labels() == entry.mask.labels());
    CHECK(back.image.values() == entry.image.values());
    CHECK(back.cmap.v == entry.cmap.v);
    std::filesystem::remove_all(dir);
}

TEST_SUITE_END();
