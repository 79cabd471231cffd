#include "qcount/data.hpp"

#include <algorithm>
#include <cmath>

namespace qcount {

double count(const DensityMap& d) {
    double sum = 0, c = 0;
    for (float v : d.values) {
        const double y = static_cast<double>(v) - c;
        const double t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    return sum;
}

namespace {

float quantize(double v) {
    return static_cast<float>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)) / 255.0f;
}

// Centres snap to 1/256 px so mirrored coordinates stay exact.
double snap(double v) { return std::round(v * 256.0) / 256.0; }

bool covers(const std::string& category, double dy, double dx, double r) {
    if (category == "squares") return std::abs(dy) <= r && std::abs(dx) <= r;
    return dy * dy + dx * dx <= r * r;
}

}  // namespace

Scene gen_scene(const SceneSpec& spec) {
    if (spec.count < 0) throw std::invalid_argument("gen_scene: count must be nonnegative");
    if (spec.height <= 0 || spec.width <= 0) throw std::invalid_argument("gen_scene: empty image");
    if (!(spec.radius_min > 0 && spec.radius_min <= spec.radius_max))
        throw std::invalid_argument("gen_scene: invalid radius range");
    if (spec.category != "circles" && spec.category != "squares")
        throw std::invalid_argument("gen_scene: unknown category '" + spec.category + "'");

    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Scene scene;

    int attempts = 0;
    while (static_cast<int>(scene.points.size()) < spec.count) {
        if (attempts++ >= kMaxPlacementAttempts)
            throw InfeasiblePackingError("gen_scene: could not place " + std::to_string(spec.count) + " instances in " +
                                         std::to_string(kMaxPlacementAttempts) + " attempts (placed " +
                                         std::to_string(scene.points.size()) + ")");
        const double r = spec.radius_min + (spec.radius_max - spec.radius_min) * unit(rng);
        if (2 * r >= spec.height || 2 * r >= spec.width) continue;
        const Point p{snap(r + (spec.height - 2 * r) * unit(rng)), snap(r + (spec.width - 2 * r) * unit(rng))};
        if (p.y - r < 0 || p.y + r > spec.height || p.x - r < 0 || p.x + r > spec.width) continue;
        bool ok = true;
        for (std::size_t i = 0; i < scene.points.size() && ok; ++i) {
            const double dy = p.y - scene.points[i].y, dx = p.x - scene.points[i].x;
            const double min_d = kMinSpacing * (r + scene.radii[i]);
            ok = dy * dy + dx * dx >= min_d * min_d;
        }
        if (!ok) continue;
        scene.points.push_back(p);
        scene.radii.push_back(r);
    }

    // Background: one gray level per scene plus per-pixel noise.
    Image& img = scene.image;
    img = Image(spec.height, spec.width);
    std::normal_distribution<double> noise(0.0, 0.04);
    const double gray = 0.25 + 0.2 * unit(rng);
    for (int y = 0; y < spec.height; ++y)
        for (int x = 0; x < spec.width; ++x) {
            const float v = quantize(gray + noise(rng));
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = v;
        }

    // Shared scene hue with per-instance jitter.
    double base[3];
    for (double& b : base) b = 0.55 + 0.45 * unit(rng);
    base[static_cast<int>(unit(rng) * 3) % 3] *= 0.4;
    for (std::size_t i = 0; i < scene.points.size(); ++i) {
        float color[3];
        for (int c = 0; c < 3; ++c) color[c] = quantize(base[c] + 0.16 * (unit(rng) - 0.5));
        const Point& p = scene.points[i];
        const double r = scene.radii[i];
        const int y0 = std::max(0, static_cast<int>(std::floor(p.y - r)));
        const int y1 = std::min(spec.height - 1, static_cast<int>(std::ceil(p.y + r)));
        const int x0 = std::max(0, static_cast<int>(std::floor(p.x - r)));
        const int x1 = std::min(spec.width - 1, static_cast<int>(std::ceil(p.x + r)));
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x)
                if (covers(spec.category, y + 0.5 - p.y, x + 0.5 - p.x, r))
                    for (int c = 0; c < 3; ++c) img.at(y, x, c) = color[c];
    }
    return scene;
}

DensityMap render_density(const std::vector<Point>& points, int out_h, int out_w, double sigma, int image_h,
                          int image_w) {
    if (out_h <= 0 || out_w <= 0 || image_h <= 0 || image_w <= 0)
        throw std::invalid_argument("render_density: empty resolution");
    if (!(sigma > 0)) throw std::invalid_argument("render_density: sigma must be positive");
    const double sy = static_cast<double>(out_h) / image_h;
    const double sx = static_cast<double>(out_w) / image_w;
    const double support = 3 * sigma;

    std::vector<double> acc(static_cast<std::size_t>(out_h) * out_w, 0.0);
    std::vector<double> kernel;
    for (const Point& p : points) {
        if (!(p.y >= 0 && p.y <= image_h && p.x >= 0 && p.x <= image_w))
            throw std::invalid_argument("render_density: point outside the frame");
        const double cy = p.y * sy, cx = p.x * sx;
        const int y0 = std::max(0, static_cast<int>(std::ceil(cy - 0.5 - support)));
        const int y1 = std::min(out_h - 1, static_cast<int>(std::floor(cy - 0.5 + support)));
        const int x0 = std::max(0, static_cast<int>(std::ceil(cx - 0.5 - support)));
        const int x1 = std::min(out_w - 1, static_cast<int>(std::floor(cx - 0.5 + support)));
        kernel.assign(static_cast<std::size_t>(y1 - y0 + 1) * (x1 - x0 + 1), 0.0);
        double total = 0;
        std::size_t k = 0;
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x, ++k) {
                const double dy = y + 0.5 - cy, dx = x + 0.5 - cx;
                kernel[k] = std::exp(-(dy * dy + dx * dx) / (2 * sigma * sigma));
                total += kernel[k];
            }
        k = 0;
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x, ++k) acc[static_cast<std::size_t>(y) * out_w + x] += kernel[k] / total;
    }

    DensityMap d(out_h, out_w);
    for (std::size_t i = 0; i < acc.size(); ++i) d.values[i] = static_cast<float>(acc[i]);
    return d;
}

Sample make_sample(const SceneSpec& spec, int density_size, double sigma, const std::string& id) {
    Scene scene = gen_scene(spec);
    Sample s;
    s.id = id;
    s.category = spec.category;
    s.count = spec.count;
    s.density = render_density(scene.points, density_size, density_size, sigma, spec.height, spec.width);
    s.image = std::move(scene.image);
    s.points = std::move(scene.points);
    return s;
}

Point flip_horizontal(const Point& p, int image_width) { return {p.y, image_width - p.x}; }

Sample augment(const Sample& s, std::mt19937_64& rng, double sigma) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const bool flip = unit(rng) < 0.5;
    const double brightness = 0.9 + 0.2 * unit(rng);

    Sample out = s;
    const int h = s.image.height, w = s.image.width;
    if (flip) {
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                for (int c = 0; c < 3; ++c) out.image.at(y, x, c) = s.image.at(y, w - 1 - x, c);
        for (Point& p : out.points) p = flip_horizontal(p, w);
        out.density = render_density(out.points, s.density.height, s.density.width, sigma, h, w);
    }
    for (float& v : out.image.data) v = static_cast<float>(std::clamp(v * brightness, 0.0, 1.0));
    return out;
}

std::uint64_t scene_seed(std::uint64_t base, const std::string& split, int index) {
    std::uint64_t h = 1469598103934665603ull ^ base;
    auto mix = [&h](std::uint64_t v) {
        for (int i = 0; i < 8; ++i) {
            h ^= (v >> (8 * i)) & 0xff;
            h *= 1099511628211ull;
        }
    };
    for (char c : split) mix(static_cast<unsigned char>(c));
    mix(static_cast<std::uint64_t>(index));
    return h;
}

std::vector<SceneSpec> split_scene_specs(const SplitSpec& split) {
    if (split.categories.empty()) throw std::invalid_argument("split '" + split.name + "' has no categories");
    if (split.min_count < 0 || split.max_count < split.min_count)
        throw std::invalid_argument("split '" + split.name + "': invalid count range");
    std::vector<SceneSpec> specs;
    for (int i = 0; i < split.scenes; ++i) {
        const std::uint64_t seed = scene_seed(split.seed, split.name, i);
        std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
        SceneSpec s;
        s.category = split.categories[static_cast<std::size_t>(i) % split.categories.size()];
        s.count = std::uniform_int_distribution<int>(split.min_count, split.max_count)(rng);
        s.height = s.width = split.image_size;
        s.radius_min = split.radius_min;
        s.radius_max = split.radius_max;
        s.seed = seed;
        specs.push_back(s);
    }
    return specs;
}

std::vector<Sample> generate_split(const SplitSpec& split) {
    std::vector<Sample> out;
    const auto specs = split_scene_specs(split);
    out.reserve(specs.size());
    for (std::size_t i = 0; i < specs.size(); ++i) {
        std::string num = std::to_string(i);
        num.insert(0, num.size() < 5 ? 5 - num.size() : 0, '0');
        out.push_back(make_sample(specs[i], split.density_size, split.sigma, split.name + "_" + num));
    }
    return out;
}

}  // namespace qcount
