#include <doctest.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "structvol/conditioning.hpp"
#include "structvol/svol_io.hpp"
#include "support.hpp"

using namespace structvol;

namespace {

const std::vector<uint8_t> kFineClasses{1, 2, 3, 4, 5, 6, 7, 8};

DataPair make_pair(Dims dims, uint64_t seed) {
    return DataPair{testsup::random_volume(dims, 1, seed, 0.0f, 1.0f),
                    testsup::random_labels(dims, 9, seed + 1000)};
}

}  // namespace

TEST_SUITE_BEGIN("conditioning");

TEST_CASE("condition channel arithmetic: 8 + 8 + image channels") {
    DataPair tmpl = make_pair(Dims{8, 8, 8}, 1);
    LabelVolume ref = testsup::random_labels(Dims{8, 8, 8}, 9, 2);
    ConditionRaw raw = assemble_condition(ref, tmpl, kFineClasses);
    CHECK(raw.channels == 17);
    CHECK(raw.binary_channels == 16);
    raw.validate();
}

TEST_CASE("self-template duplicates the binary blocks") {
    DataPair tmpl = make_pair(Dims{4, 4, 4}, 3);
    ConditionRaw raw = assemble_condition(tmpl.mask, tmpl, kFineClasses);
    const std::size_t block = std::size_t(8) * raw.dims.voxels();
    for (std::size_t i = 0; i < block; ++i) CHECK(raw.values[i] == raw.values[block + i]);
}

TEST_CASE("all-background reference zeroes the first block only") {
    DataPair tmpl = make_pair(Dims{4, 4, 4}, 4);
    LabelVolume empty(Dims{4, 4, 4});
    ConditionRaw raw = assemble_condition(empty, tmpl, kFineClasses);
    const std::size_t block = std::size_t(8) * raw.dims.voxels();
    for (std::size_t i = 0; i < block; ++i) CHECK(raw.values[i] == 0.0f);
    // Template image block is passed through untouched.
    const float* img = raw.values.data() + 2 * block;
    for (std::size_t i = 0; i < raw.dims.voxels(); ++i)
        CHECK(img[i] == tmpl.image.values()[i]);
}

TEST_CASE("assemble_condition rejects dim mismatches") {
    DataPair tmpl = make_pair(Dims{4, 4, 4}, 5);
    LabelVolume ref = testsup::random_labels(Dims{4, 4, 5}, 9, 6);
    CHECK_THROWS_AS(assemble_condition(ref, tmpl, kFineClasses), std::invalid_argument);
}

TEST_CASE("encode_condition is linear with zero bias") {
    DataPair tmpl = make_pair(Dims{4, 4, 4}, 7);
    LabelVolume ref = testsup::random_labels(Dims{4, 4, 4}, 9, 8);
    ConditionRaw raw = assemble_condition(ref, tmpl, kFineClasses);
    CondEncoderParams params = CondEncoderParams::seeded(raw.channels, 4, 11);

    ConditionRaw zero = raw;
    std::fill(zero.values.begin(), zero.values.end(), 0.0f);
    ConditionFeature f0 = encode_condition(zero, 2, params);
    for (float v : f0.values) CHECK(v == 0.0f);

    // encode(a + b) == encode(a) + encode(b)
    ConditionRaw sum = raw;
    ConditionRaw other = raw;
    std::reverse(other.values.begin(), other.values.end());
    other.binary_channels = 0;  // reversed buffer is no longer channel-aligned
    sum.binary_channels = 0;
    for (std::size_t i = 0; i < sum.values.size(); ++i) sum.values[i] += other.values[i];
    ConditionFeature fa = encode_condition(raw, 2, params);
    ConditionFeature fb = encode_condition(other, 2, params);
    ConditionFeature fs = encode_condition(sum, 2, params);
    for (std::size_t i = 0; i < fs.values.size(); ++i)
        CHECK(double(fs.values[i]) ==
              doctest::Approx(double(fa.values[i]) + double(fb.values[i])).epsilon(1e-6));
}

TEST_CASE("identity mix at factor 1 reproduces the raw condition") {
    DataPair tmpl = make_pair(Dims{4, 4, 4}, 9);
    ConditionRaw raw = assemble_condition(tmpl.mask, tmpl, kFineClasses);
    ConditionFeature f = encode_condition(raw, 1, CondEncoderParams::identity(raw.channels));
    CHECK(f.channels == raw.channels);
    CHECK(f.values == raw.values);
}

TEST_CASE("constant raw condition encodes to the hand-mixed constants") {
    ConditionRaw raw;
    raw.dims = Dims{4, 4, 4};
    raw.channels = 2;
    raw.binary_channels = 1;
    raw.values.assign(2 * raw.dims.voxels(), 0.0f);
    std::fill_n(raw.values.begin(), raw.dims.voxels(), 1.0f);             // channel 0 = 1
    std::fill_n(raw.values.begin() + raw.dims.voxels(), raw.dims.voxels(), 0.5f);  // channel 1

    CondEncoderParams params;
    params.out_channels = 1;
    params.weight = {2.0f, 4.0f};
    params.bias = {0.25f};
    ConditionFeature f = encode_condition(raw, 2, params);
    // Pooling preserves constants: 2*1 + 4*0.5 + 0.25 = 4.25 everywhere.
    CHECK(f.dims == Dims{2, 2, 2});
    for (float v : f.values) CHECK(v == doctest::Approx(4.25));
}

TEST_CASE("encode_condition rejects indivisible dims") {
    ConditionRaw raw;
    raw.dims = Dims{3, 4, 4};
    raw.channels = 1;
    raw.values.assign(raw.dims.voxels(), 0.0f);
    CHECK_THROWS_AS(encode_condition(raw, 2, CondEncoderParams::identity(1)),
                    std::invalid_argument);
}

TEST_CASE("bidirectional pair enumeration is exactly N^2, both orientations") {
    CHECK(enumerate_bidirectional_pairs(1) ==
          std::vector<std::pair<std::size_t, std::size_t>>{{0, 0}});
    CHECK(enumerate_bidirectional_pairs(3).size() == 9);

    auto pairs = enumerate_bidirectional_pairs(4);
    CHECK(pairs.size() == 16);
    std::set<std::pair<std::size_t, std::size_t>> unique(pairs.begin(), pairs.end());
    CHECK(unique.size() == 16);
    CHECK(unique.count({1, 2}) == 1);
    CHECK(unique.count({2, 1}) == 1);
    CHECK(unique.count({2, 2}) == 1);

    CHECK_THROWS_AS(enumerate_bidirectional_pairs(0), std::invalid_argument);
}

TEST_CASE("bidirectional loss adds the two directions") {
    CHECK(bidirectional_loss(0.0, 0.0) == 0.0);
    CHECK(bidirectional_loss(0.3, 0.7) == doctest::Approx(1.0));
    CHECK(bidirectional_loss(0.3, 0.7) == bidirectional_loss(0.7, 0.3));
    CHECK_THROWS_AS(bidirectional_loss(std::nan(""), 0.0), TrainingDiverged);
}

TEST_CASE("template sampling is uniform and seeded") {
    TemplateLibrary lib;
    for (uint64_t i = 0; i < 4; ++i) lib.entries.push_back(make_pair(Dims{2, 2, 2}, 100 + i));

    const DataPair& a = sample_template(lib, 5);
    const DataPair& b = sample_template(lib, 5);
    CHECK(&a == &b);

    TemplateLibrary single;
    single.entries.push_back(make_pair(Dims{2, 2, 2}, 1));
    CHECK(&sample_template(single, 999) == &single.entries[0]);

    std::array<int, 4> counts{};
    for (uint64_t seed = 0; seed < 10000; ++seed) {
        const DataPair* p = &sample_template(lib, seed);
        counts[std::size_t(p - lib.entries.data())]++;
    }
    for (int c : counts) CHECK(double(c) / 10000.0 == doctest::Approx(0.25).epsilon(0.02 / 0.25));

    TemplateLibrary empty;
    CHECK_THROWS_AS(sample_template(empty, 0), std::invalid_argument);
}

TEST_CASE("template manifests load relative to their location") {
    auto dir = std::filesystem::temp_directory_path() / "structvol_manifest_test";
    std::filesystem::create_directories(dir);
    DataPair pair = make_pair(Dims{3, 3, 3}, 55);
    write_svol(dir / "img0.svol", pair.image);
    write_svol(dir / "mask0.svol", pair.mask);
    {
        std::ofstream f(dir / "lib.json");
        f << R"([{"image": "img0.svol", "mask": "mask0.svol"}])";
    }
    TemplateLibrary lib = load_template_library(dir / "lib.json");
    REQUIRE(lib.entries.size() == 1);
    CHECK(lib.entries[0].image.values() == pair.image.values());
    CHECK(lib.entries[0].mask.labels() == pair.mask.labels());
    std::filesystem::remove_all(dir);
}

TEST_SUITE_END();
