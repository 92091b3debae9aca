#include "structvol/svol_io.hpp"

#include <zlib.h>

#include <algorithm>
#include <cstring>
#include <fstream>

namespace structvol {

namespace {

constexpr char kMagic[4] = {'S', 'V', 'O', 'L'};
constexpr uint32_t kVersion = 1;

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(uint8_t(v & 0xFF));
    out.push_back(uint8_t((v >> 8) & 0xFF));
    out.push_back(uint8_t((v >> 16) & 0xFF));
    out.push_back(uint8_t((v >> 24) & 0xFF));
}

void put_f32(std::vector<uint8_t>& out, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

struct Reader {
    const std::vector<uint8_t>& bytes;
    std::size_t pos = 0;

    void need(std::size_t n, const char* what) const {
        if (pos + n > bytes.size())
            throw SvolFormatError(std::string("truncated ") + what + ": expected " +
                                      std::to_string(n) + " bytes, " +
                                      std::to_string(bytes.size() - pos) + " available",
                                  pos);
    }
    uint8_t u8(const char* what) {
        need(1, what);
        return bytes[pos++];
    }
    uint32_t u32(const char* what) {
        need(4, what);
        uint32_t v = uint32_t(bytes[pos]) | uint32_t(bytes[pos + 1]) << 8 |
                     uint32_t(bytes[pos + 2]) << 16 | uint32_t(bytes[pos + 3]) << 24;
        pos += 4;
        return v;
    }
    float f32(const char* what) {
        uint32_t bits = u32(what);
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
};

std::vector<uint8_t> serialize_header(uint8_t kind, uint8_t dtype, uint32_t channels,
                                      const Dims& dims, const Spacing& spacing, float lo,
                                      float hi) {
    std::vector<uint8_t> out;
    out.insert(out.end(), kMagic, kMagic + 4);
    put_u32(out, kVersion);
    out.push_back(kind);
    out.push_back(dtype);
    put_u32(out, channels);
    put_u32(out, dims.d);
    put_u32(out, dims.h);
    put_u32(out, dims.w);
    put_f32(out, spacing.sx);
    put_f32(out, spacing.sy);
    put_f32(out, spacing.sz);
    put_f32(out, lo);
    put_f32(out, hi);
    return out;
}

bool is_gz(const std::filesystem::path& path) {
    return path.extension() == ".gz";
}

std::vector<uint8_t> read_file(const std::filesystem::path& path) {
    if (is_gz(path)) {
        gzFile f = gzopen(path.string().c_str(), "rb");
        if (!f) throw std::runtime_error("cannot open " + path.string());
        std::vector<uint8_t> out;
        uint8_t buf[1 << 16];
        int n;
        while ((n = gzread(f, buf, sizeof(buf))) > 0) out.insert(out.end(), buf, buf + n);
        bool bad = n < 0;
        gzclose(f);
        if (bad) throw std::runtime_error("deflate stream error in " + path.string());
        return out;
    }
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path.string());
    return std::vector<uint8_t>(std::istreambuf_iterator<char>(f),
                                std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, const std::vector<uint8_t>& bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    if (is_gz(path)) {
        gzFile f = gzopen(path.string().c_str(), "wb");
        if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
        std::size_t done = 0;
        while (done < bytes.size()) {
            unsigned chunk = unsigned(std::min<std::size_t>(bytes.size() - done, 1u << 20));
            if (gzwrite(f, bytes.data() + done, chunk) != int(chunk)) {
                gzclose(f);
                throw std::runtime_error("deflate write error in " + path.string());
            }
            done += chunk;
        }
        gzclose(f);
        return;
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!f) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace

std::vector<uint8_t> serialize_svol(const Volume& v) {
    v.validate();
    auto out = serialize_header(0, 0, v.channels(), v.dims(), v.spacing(), v.range_lo(),
                                v.range_hi());
    out.reserve(out.size() + v.values().size() * 4);
    for (float x : v.values()) put_f32(out, x);
    return out;
}

std::vector<uint8_t> serialize_svol(const LabelVolume& v) {
    v.validate();
    auto out = serialize_header(1, 1, 1, v.dims(), v.spacing(), 0.0f, float(v.num_classes()));
    out.insert(out.end(), v.labels().begin(), v.labels().end());
    return out;
}

AnyVolume parse_svol(const std::vector<uint8_t>& bytes) {
    Reader r{bytes};
    r.need(4, "magic");
    if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw SvolFormatError("bad magic", 0);
    r.pos = 4;
    uint32_t version = r.u32("version");
    if (version != kVersion)
        throw SvolFormatError("unsupported version " + std::to_string(version), 4);
    std::size_t kind_off = r.pos;
    uint8_t kind = r.u8("kind");
    std::size_t dtype_off = r.pos;
    uint8_t dtype = r.u8("dtype");
    uint32_t channels = r.u32("channels");
    Dims dims{r.u32("dims"), r.u32("dims"), r.u32("dims")};
    Spacing spacing{0, 0, 0};
    spacing.sx = r.f32("spacing");
    spacing.sy = r.f32("spacing");
    spacing.sz = r.f32("spacing");
    float lo = r.f32("intensity range");
    float hi = r.f32("intensity range");

    if (kind == 0) {
        if (dtype != 0)
            throw SvolFormatError("bad dtype code " + std::to_string(dtype) + " for real volume",
                                  dtype_off);
        std::size_t n = std::size_t(channels) * dims.voxels();
        r.need(n * 4, "payload");
        std::vector<float> values(n);
        for (std::size_t i = 0; i < n; ++i) values[i] = r.f32("payload");
        if (r.pos != bytes.size())
            throw SvolFormatError("trailing bytes after payload", r.pos);
        try {
            return Volume(dims, channels, std::move(values), spacing, lo, hi);
        } catch (const std::invalid_argument& e) {
            throw SvolFormatError(std::string("invalid volume: ") + e.what(), kind_off);
        }
    }
    if (kind == 1) {
        if (dtype != 1)
            throw SvolFormatError("bad dtype code " + std::to_string(dtype) + " for label volume",
                                  dtype_off);
        if (channels != 1)
            throw SvolFormatError("label volumes are single-channel", kind_off);
        std::size_t n = dims.voxels();
        r.need(n, "payload");
        std::vector<uint8_t> labels(bytes.begin() + long(r.pos), bytes.begin() + long(r.pos + n));
        r.pos += n;
        if (r.pos != bytes.size())
            throw SvolFormatError("trailing bytes after payload", r.pos);
        uint16_t num_classes = uint16_t(hi);
        try {
            return LabelVolume(dims, std::move(labels), spacing, num_classes);
        } catch (const std::invalid_argument& e) {
            throw SvolFormatError(std::string("invalid label volume: ") + e.what(), kind_off);
        }
    }
    throw SvolFormatError("bad kind code " + std::to_string(kind), kind_off);
}

void write_svol(const std::filesystem::path& path, const Volume& v) {
    write_file(path, serialize_svol(v));
}

void write_svol(const std::filesystem::path& path, const LabelVolume& v) {
    write_file(path, serialize_svol(v));
}

AnyVolume read_svol(const std::filesystem::path& path) {
    return parse_svol(read_file(path));
}

Volume read_svol_volume(const std::filesystem::path& path) {
    AnyVolume any = read_svol(path);
    if (auto* v = std::get_if<Volume>(&any)) return std::move(*v);
    throw std::invalid_argument(path.string() + " holds a label volume, expected real volume");
}

LabelVolume read_svol_labels(const std::filesystem::path& path) {
    AnyVolume any = read_svol(path);
    if (auto* v = std::get_if<LabelVolume>(&any)) return std::move(*v);
    throw std::invalid_argument(path.string() + " holds a real volume, expected label volume");
}

}  // namespace structvol
