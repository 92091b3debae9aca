#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>

namespace structvol {

// Voxel counts along (z, y, x). Memory layout everywhere is channel-major
// (c, z, y, x) with x fastest.
struct Dims {
    uint32_t d = 0;
    uint32_t h = 0;
    uint32_t w = 0;

    std::size_t voxels() const { return std::size_t(d) * h * w; }
    bool operator==(const Dims&) const = default;
};

// Millimeters per voxel along x, y, z. Must stay positive.
struct Spacing {
    float sx = 1.0f;
    float sy = 1.0f;
    float sz = 1.0f;

    bool operator==(const Spacing&) const = default;
};

inline std::size_t voxel_index(const Dims& dims, uint32_t z, uint32_t y, uint32_t x) {
    return (std::size_t(z) * dims.h + y) * dims.w + x;
}

inline std::size_t grid_index(const Dims& dims, uint32_t c, uint32_t z, uint32_t y, uint32_t x) {
    return (std::size_t(c) * dims.d + z) * dims.h * dims.w + std::size_t(y) * dims.w + x;
}

// Raised when an optimization loop produces a non-finite loss.
class TrainingDiverged : public std::runtime_error {
public:
    TrainingDiverged(const std::string& what, std::size_t step)
        : std::runtime_error(what + " (step " + std::to_string(step) + ")"), step_(step) {}

    std::size_t step() const { return step_; }

private:
    std::size_t step_;
};

// Worker cap for data-parallel voxel loops. Reads STRUCTVOL_THREADS once;
// defaults to the hardware thread count.
unsigned thread_count();

// Splits [0, n) into contiguous chunks, one thread per chunk. The body must
// only write elements inside its own range so results do not depend on the
// thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body);

}  // namespace structvol
