#pragma once

#include "qcount/image.hpp"

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace qcount {

class InfeasiblePackingError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Object centre in image pixel coordinates (continuous, origin at the
/// top-left corner of the top-left pixel).
struct Point {
    double y = 0;
    double x = 0;

    bool operator==(const Point&) const = default;
};

struct SceneSpec {
    std::string category = "circles";
    int count = 0;
    int height = 64;
    int width = 64;
    double radius_min = 2.0;
    double radius_max = 3.5;
    std::uint64_t seed = 0;
};

struct Scene {
    Image image;
    std::vector<Point> points;
    std::vector<double> radii;
};

/// One training or evaluation example.
struct Sample {
    std::string id;
    std::string category;
    int count = 0;
    Image image;
    DensityMap density;
    std::vector<Point> points;
};

constexpr int kMaxPlacementAttempts = 10000;
constexpr double kMinSpacing = 1.2;

/// Renders `count` non-overlapping instances on a noisy gray background.
/// Pixel values are multiples of 1/255 so 8-bit PNG storage is lossless.
Scene gen_scene(const SceneSpec& spec);

/// Sum of unit-mass truncated Gaussians (+-3 sigma, sigma in output cells)
/// at output resolution out_h x out_w; points are given in the pixel frame
/// of an image_h x image_w image.
DensityMap render_density(const std::vector<Point>& points, int out_h, int out_w, double sigma, int image_h,
                          int image_w);

/// Sample with its density rendered at `density_size` from a scene spec.
Sample make_sample(const SceneSpec& spec, int density_size, double sigma, const std::string& id = {});

/// Horizontal flip (p = 0.5) and brightness scaling in [0.9, 1.1]; the
/// density is re-rendered from the moved points.
Sample augment(const Sample& s, std::mt19937_64& rng, double sigma);

Point flip_horizontal(const Point& p, int image_width);

/// Per-scene seed derived from a base seed, a split name and an index, so
/// splits never share scenes.
std::uint64_t scene_seed(std::uint64_t base, const std::string& split, int index);

/// Generation recipe for one split.
struct SplitSpec {
    std::string name;
    std::vector<std::string> categories;
    int scenes = 0;
    int min_count = 0;
    int max_count = 0;
    int image_size = 64;
    int density_size = 32;
    double sigma = 1.5;
    double radius_min = 2.0;
    double radius_max = 3.5;
    std::uint64_t seed = 0;
};

std::vector<SceneSpec> split_scene_specs(const SplitSpec& split);
std::vector<Sample> generate_split(const SplitSpec& split);

}  // namespace qcount
