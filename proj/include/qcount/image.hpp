#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

namespace qcount {

/// RGB image, row-major HWC, values in [0, 1].
struct Image {
    int height = 0;
    int width = 0;
    std::vector<float> data;

    Image() = default;
    Image(int h, int w, float fill = 0.0f)
        : height(h), width(w), data(static_cast<std::size_t>(h) * static_cast<std::size_t>(w) * 3, fill) {}

    float& at(int y, int x, int c) { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    float at(int y, int x, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
};

/// Nonnegative per-cell object density; its sum is the count.
struct DensityMap {
    int height = 0;
    int width = 0;
    std::vector<float> values;

    DensityMap() = default;
    DensityMap(int h, int w) : height(h), width(w), values(static_cast<std::size_t>(h) * w, 0.0f) {}

    float& at(int y, int x) { return values[static_cast<std::size_t>(y) * width + x]; }
    float at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
};

/// Exact (compensated) sum of all cells.
double count(const DensityMap& d);

}  // namespace qcount
