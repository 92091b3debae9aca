#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "structvol/volume.hpp"

namespace structvol {

// SVOL container, little-endian:
//   magic "SVOL" | version u32=1 | kind u8 (0=real, 1=label) | dtype u8
//   (0=real32, 1=uint8) | channels u32 | dims u32x3 (D,H,W) | spacing f32x3
//   | intensity-range f32x2 | raw channel-major payload.
// Label volumes are stored with kind=1, dtype=1, channels=1; their
// intensity-range field carries (0, num_classes). A ".svol.gz" path holds
// the same stream, deflate-compressed.

class SvolFormatError : public std::runtime_error {
public:
    SvolFormatError(const std::string& what, std::size_t byte_offset)
        : std::runtime_error(what + " (at byte " + std::to_string(byte_offset) + ")"),
          byte_offset_(byte_offset) {}

    std::size_t byte_offset() const { return byte_offset_; }

private:
    std::size_t byte_offset_;
};

using AnyVolume = std::variant<Volume, LabelVolume>;

std::vector<uint8_t> serialize_svol(const Volume& v);
std::vector<uint8_t> serialize_svol(const LabelVolume& v);
AnyVolume parse_svol(const std::vector<uint8_t>& bytes);

void write_svol(const std::filesystem::path& path, const Volume& v);
void write_svol(const std::filesystem::path& path, const LabelVolume& v);
AnyVolume read_svol(const std::filesystem::path& path);

// Convenience accessors that throw invalid_argument when the file holds the
// other kind.
Volume read_svol_volume(const std::filesystem::path& path);
LabelVolume read_svol_labels(const std::filesystem::path& path);

}  // namespace structvol
