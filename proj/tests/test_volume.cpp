#include <doctest.h>

#include <algorithm>
#include <set>

#include "structvol/svol_io.hpp"
#include "structvol/volume.hpp"
#include "support.hpp"

using namespace structvol;

TEST_SUITE_BEGIN("volume");

TEST_CASE("binarize matches the per-class definition") {
    // 2x2x1 grid, rows [0,1] and [2,0].
    LabelVolume m(Dims{1, 2, 2}, {0, 1, 2, 0}, {}, 3);
    BinaryChannelMask b = binarize(m, {1, 2});
    CHECK(b.channels() == 2);
    CHECK(b.at(0, 0, 0, 0) == 0);
    CHECK(b.at(0, 0, 0, 1) == 1);
    CHECK(b.at(0, 0, 1, 0) == 0);
    CHECK(b.at(0, 0, 1, 1) == 0);
    CHECK(b.at(1, 0, 0, 0) == 0);
    CHECK(b.at(1, 0, 0, 1) == 0);
    CHECK(b.at(1, 0, 1, 0) == 1);
    CHECK(b.at(1, 0, 1, 1) == 0);
}

TEST_CASE("binarize of all-background labels is all-zero") {
    LabelVolume m(Dims{2, 2, 2});
    BinaryChannelMask b = binarize(m, {1});
    CHECK(b.channels() == 1);
    CHECK(std::all_of(b.values().begin(), b.values().end(), [](uint8_t v) { return v == 0; }));
}

TEST_CASE("binarize over all foreground classes is one-hot (brute force)") {
    LabelVolume m = testsup::random_labels(Dims{8, 8, 8}, 9, 42);
    std::vector<uint8_t> classes{1, 2, 3, 4, 5, 6, 7, 8};
    BinaryChannelMask b = binarize(m, classes);
    for (uint32_t z = 0; z < 8; ++z)
        for (uint32_t y = 0; y < 8; ++y)
            for (uint32_t x = 0; x < 8; ++x) {
                int sum = 0;
                for (uint32_t c = 0; c < 8; ++c) {
                    uint8_t bit = b.at(c, z, y, x);
                    CHECK(bit == (m.at(z, y, x) == classes[c] ? 1 : 0));
                    sum += bit;
                }
                CHECK(sum == (m.at(z, y, x) != 0 ? 1 : 0));
            }
}

TEST_CASE("binarize rejects bad class lists") {
    LabelVolume m(Dims{2, 2, 2});
    CHECK_THROWS_AS(binarize(m, {}), std::invalid_argument);
    CHECK_THROWS_AS(binarize(m, {200}), std::invalid_argument);
    CHECK_THROWS_AS(binarize(m, {1, 1}), std::invalid_argument);
}

TEST_CASE("filter_fine_grained keeps only the fine set") {
    LabelVolume m(Dims{1, 1, 4}, {1, 5, 9, 11}, {}, 12);
    LabelVolume f = filter_fine_grained(m, {1, 2, 3, 4, 5, 6, 7, 8});
    CHECK(f.labels() == std::vector<uint8_t>{1, 5, 0, 0});

    LabelVolume all = filter_fine_grained(m, {1, 5, 9, 11});
    CHECK(all.labels() == m.labels());

    LabelVolume none = filter_fine_grained(m, {});
    CHECK(std::all_of(none.labels().begin(), none.labels().end(),
                      [](uint8_t v) { return v == 0; }));
}

TEST_CASE("binarize then argmax reconstructs the filtered labels") {
    LabelVolume m = testsup::random_labels(Dims{6, 5, 4}, 9, 7);
    std::vector<uint8_t> classes{2, 3, 7};
    LabelVolume filtered = filter_fine_grained(m, classes);
    BinaryChannelMask b = binarize(filtered, classes);
    for (uint32_t z = 0; z < 6; ++z)
        for (uint32_t y = 0; y < 5; ++y)
            for (uint32_t x = 0; x < 4; ++x) {
                uint8_t rebuilt = 0;
                for (uint32_t c = 0; c < b.channels(); ++c)
                    if (b.at(c, z, y, x)) rebuilt = b.class_ids()[c];
                CHECK(rebuilt == filtered.at(z, y, x));
            }
}

TEST_CASE("resample preserves constants exactly") {
    Volume v(Dims{3, 3, 3}, 1, std::vector<float>(27, 0.625f), {}, 0.0f, 1.0f);
    Volume up = resample(v, Dims{7, 5, 9}, ResampleMode::Trilinear);
    for (float x : up.values()) CHECK(x == 0.625f);
}

TEST_CASE("resample to identical dims is a bitwise copy") {
    Volume v = testsup::random_volume(Dims{4, 5, 6}, 2, 11);
    Volume same = resample(v, v.dims(), ResampleMode::Trilinear);
    CHECK(same.values() == v.values());
    CHECK(same.spacing() == v.spacing());
}

TEST_CASE("trilinear upsample matches the closed form on a ramp") {
    // f(z, y, x) = 2x + 3y - z is trilinear, so interpolation reproduces it
    // exactly at the mapped (clamped) source coordinates.
    Dims src{4, 4, 4};
    std::vector<float> vals(src.voxels());
    for (uint32_t z = 0; z < 4; ++z)
        for (uint32_t y = 0; y < 4; ++y)
            for (uint32_t x = 0; x < 4; ++x)
                vals[voxel_index(src, z, y, x)] = float(2.0 * x + 3.0 * y - 1.0 * z);
    Volume v(src, 1, std::move(vals), {}, -3.0f, 15.0f);
    Volume up = resample(v, Dims{8, 8, 8}, ResampleMode::Trilinear);

    auto mapped = [](uint32_t j) {
        double c = (double(j) + 0.5) * 4.0 / 8.0 - 0.5;
        return std::clamp(c, 0.0, 3.0);
    };
    for (uint32_t p = 0; p < 8; ++p) {  // probe along the main diagonal
        double expect = 2.0 * mapped(p) + 3.0 * mapped(p) - mapped(p);
        CHECK(double(up.at(0, p, p, p)) == doctest::Approx(expect).epsilon(1e-6));
    }
}

TEST_CASE("nearest resampling never invents labels") {
    LabelVolume m = testsup::random_labels(Dims{5, 6, 7}, 9, 13);
    std::set<uint8_t> input_set(m.labels().begin(), m.labels().end());
    LabelVolume r = resample(m, Dims{9, 4, 11}, ResampleMode::Nearest);
    for (uint8_t l : r.labels()) CHECK(input_set.count(l) == 1);
}

TEST_CASE("label volumes reject trilinear resampling") {
    LabelVolume m(Dims{2, 2, 2});
    CHECK_THROWS_AS(resample(m, Dims{4, 4, 4}, ResampleMode::Trilinear), std::invalid_argument);
}

TEST_SUITE_END();

TEST_SUITE_BEGIN("svol");

TEST_CASE("header of a 2x2x2 single-channel volume matches the format") {
    Volume v(Dims{2, 2, 2}, 1, std::vector<float>(8, 0.0f), {}, 0.0f, 1.0f);
    std::vector<uint8_t> bytes = serialize_svol(v);
    REQUIRE(bytes.size() == 46 + 8 * 4);
    CHECK(bytes[0] == 'S');
    CHECK(bytes[1] == 'V');
    CHECK(bytes[2] == 'O');
    CHECK(bytes[3] == 'L');
    CHECK(bytes[4] == 1);  // version u32 = 1, little-endian
    CHECK(bytes[5] == 0);
    CHECK(bytes[8] == 0);   // kind: real volume
    CHECK(bytes[9] == 0);   // dtype: real32
    CHECK(bytes[10] == 1);  // channels
    CHECK(bytes[14] == 2);  // D
    CHECK(bytes[18] == 2);  // H
    CHECK(bytes[22] == 2);  // W
}

TEST_CASE("write-read round trip is byte identical") {
    for (uint64_t seed = 0; seed < 25; ++seed) {
        Dims dims{uint32_t(1 + seed % 4), uint32_t(1 + (seed / 2) % 4), uint32_t(1 + (seed / 3) % 4)};
        Volume v = testsup::random_volume(dims, uint32_t(1 + seed % 3), seed);
        auto bytes = serialize_svol(v);
        AnyVolume round = parse_svol(bytes);
        CHECK(serialize_svol(std::get<Volume>(round)) == bytes);
    }
    for (uint64_t seed = 0; seed < 25; ++seed) {
        LabelVolume m = testsup::random_labels(Dims{3, 2, 4}, uint16_t(2 + seed % 8), seed);
        auto bytes = serialize_svol(m);
        AnyVolume round = parse_svol(bytes);
        CHECK(serialize_svol(std::get<LabelVolume>(round)) == bytes);
    }
}

TEST_CASE("file round trip, plain and gz") {
    auto dir = std::filesystem::temp_directory_path() / "svol_io_test";
    std::filesystem::create_directories(dir);
    Volume v = testsup::random_volume(Dims{3, 4, 5}, 2, 99);
    for (const char* name : {"a.svol", "a.svol.gz"}) {
        auto path = dir / name;
        write_svol(path, v);
        Volume back = read_svol_volume(path);
        CHECK(back.values() == v.values());
        CHECK(back.dims() == v.dims());
        CHECK(back.spacing() == v.spacing());
        CHECK(back.range_lo() == v.range_lo());
        CHECK(back.range_hi() == v.range_hi());
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("label num_classes survives the round trip") {
    LabelVolume m(Dims{2, 2, 2}, {0, 1, 2, 3, 4, 5, 6, 7}, {}, 11);
    auto round = std::get<LabelVolume>(parse_svol(serialize_svol(m)));
    CHECK(round.num_classes() == 11);
    CHECK(round.labels() == m.labels());
}

TEST_CASE("format errors carry byte offsets") {
    Volume v(Dims{2, 2, 2}, 1, std::vector<float>(8, 0.5f), {}, 0.0f, 1.0f);
    auto bytes = serialize_svol(v);

    SUBCASE("bad magic") {
        bytes[0] = 'X';
        CHECK_THROWS_WITH_AS(parse_svol(bytes), "bad magic (at byte 0)", SvolFormatError);
    }
    SUBCASE("bad dtype code") {
        bytes[9] = 7;
        try {
            parse_svol(bytes);
            FAIL("expected SvolFormatError");
        } catch (const SvolFormatError& e) {
            CHECK(e.byte_offset() == 9);
            CHECK(std::string(e.what()).find("dtype") != std::string::npos);
        }
    }
    SUBCASE("truncated payload names expected vs actual length") {
        bytes.resize(bytes.size() - 10);
        try {
            parse_svol(bytes);
            FAIL("expected SvolFormatError");
        } catch (const SvolFormatError& e) {
            CHECK(e.byte_offset() == 46);
            std::string msg = e.what();
            CHECK(msg.find("expected 32 bytes") != std::string::npos);
            CHECK(msg.find("22 available") != std::string::npos);
        }
    }
}

TEST_SUITE_END();
