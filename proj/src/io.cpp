#include "qcount/io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>

namespace qcount {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void put_u64(std::vector<unsigned char>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}

template <typename U, typename F>
U bits_of(F f) {
    static_assert(sizeof(U) == sizeof(F));
    U u;
    std::memcpy(&u, &f, sizeof u);
    return u;
}

template <typename F, typename U>
F from_bits(U u) {
    static_assert(sizeof(U) == sizeof(F));
    F f;
    std::memcpy(&f, &u, sizeof f);
    return f;
}

std::vector<unsigned char> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, const std::vector<unsigned char>& bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for '" + path + "'");
}

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void png_write(const std::string& path, int height, int width, int color_type, int channels,
               const std::vector<unsigned char>& pixels) {
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw IoError("cannot open '" + path + "' for writing");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw IoError("png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("libpng error while writing '" + path + "'");
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, color_type,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < height; ++y)
        png_write_row(png, const_cast<png_bytep>(pixels.data() + static_cast<std::size_t>(y) * width * channels));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

// Decodes to 8-bit with the requested channel count (1 = gray, 3 = RGB).
std::vector<unsigned char> png_read(const std::string& path, int channels, int& height, int& width) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw IoError("cannot open '" + path + "' for reading");
    unsigned char sig[8];
    if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8)) throw IoError("'" + path + "' is not a PNG");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw IoError("png_create_info_struct failed");
    }
    std::vector<unsigned char> pixels;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("libpng error while reading '" + path + "'");
    }
    png_init_io(png, fp.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    width = static_cast<int>(png_get_image_width(png, info));
    height = static_cast<int>(png_get_image_height(png, info));
    const int color = png_get_color_type(png, info);
    const int depth = png_get_bit_depth(png, info);
    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color & PNG_COLOR_MASK_ALPHA || png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
    const bool is_gray = color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA;
    if (channels == 3 && is_gray) png_set_gray_to_rgb(png);
    if (channels == 1 && !is_gray) png_set_rgb_to_gray_fixed(png, 1, -1, -1);
    png_read_update_info(png, info);
    if (static_cast<int>(png_get_rowbytes(png, info)) != width * channels) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("unsupported PNG layout in '" + path + "'");
    }
    pixels.resize(static_cast<std::size_t>(height) * width * channels);
    for (int y = 0; y < height; ++y)
        png_read_row(png, pixels.data() + static_cast<std::size_t>(y) * width * channels, nullptr);
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return pixels;
}

}  // namespace

// ---- QDM

std::vector<unsigned char> encode_qdm(const DensityMap& d) {
    if (d.values.size() != static_cast<std::size_t>(d.height) * d.width)
        throw IoError("encode_qdm: value count does not match shape");
    std::vector<unsigned char> out{'Q', 'D', 'M', '1'};
    out.reserve(12 + 4 * d.values.size());
    put_u32(out, static_cast<std::uint32_t>(d.height));
    put_u32(out, static_cast<std::uint32_t>(d.width));
    for (float v : d.values) put_u32(out, bits_of<std::uint32_t>(v));
    return out;
}

DensityMap decode_qdm(const std::vector<unsigned char>& bytes) {
    if (bytes.size() < 12 || std::memcmp(bytes.data(), "QDM1", 4) != 0) throw IoError("not a QDM1 density file");
    const std::uint32_t h = get_u32(bytes.data() + 4), w = get_u32(bytes.data() + 8);
    const std::size_t n = static_cast<std::size_t>(h) * w;
    if (bytes.size() != 12 + 4 * n) throw IoError("QDM file size does not match its header");
    DensityMap d(static_cast<int>(h), static_cast<int>(w));
    for (std::size_t i = 0; i < n; ++i) d.values[i] = from_bits<float>(get_u32(bytes.data() + 12 + 4 * i));
    return d;
}

void write_qdm(const std::string& path, const DensityMap& d) { write_file(path, encode_qdm(d)); }

DensityMap read_qdm(const std::string& path) { return decode_qdm(read_file(path)); }

// ---- PNG

void write_png_rgb(const std::string& path, const Image& img) {
    std::vector<unsigned char> px(img.data.size());
    for (std::size_t i = 0; i < px.size(); ++i)
        px[i] = static_cast<unsigned char>(std::lround(std::clamp(img.data[i], 0.0f, 1.0f) * 255.0f));
    png_write(path, img.height, img.width, PNG_COLOR_TYPE_RGB, 3, px);
}

Image read_png_rgb(const std::string& path) {
    int h = 0, w = 0;
    const auto px = png_read(path, 3, h, w);
    Image img(h, w);
    for (std::size_t i = 0; i < px.size(); ++i) img.data[i] = static_cast<float>(px[i]) / 255.0f;
    return img;
}

std::vector<unsigned char> heatmap_pixels(const DensityMap& d) {
    float peak = 0;
    for (float v : d.values) peak = std::max(peak, v);
    std::vector<unsigned char> px(d.values.size(), 0);
    if (!(peak > 0) || !std::isfinite(peak)) return px;
    for (std::size_t i = 0; i < px.size(); ++i) {
        const double v = std::max(0.0f, d.values[i]) / static_cast<double>(peak);
        px[i] = static_cast<unsigned char>(std::lround(std::min(1.0, v) * 255.0));
    }
    return px;
}

void write_heatmap_png(const std::string& path, const DensityMap& d) {
    png_write(path, d.height, d.width, PNG_COLOR_TYPE_GRAY, 1, heatmap_pixels(d));
}

std::vector<unsigned char> read_png_gray(const std::string& path, int& height, int& width) {
    return png_read(path, 1, height, width);
}

// ---- Manifests

std::string write_split(const std::string& dir, const SplitSpec& split) {
    const fs::path root(dir);
    fs::create_directories(root / split.name);
    const auto samples = generate_split(split);
    const auto specs = split_scene_specs(split);

    json scenes = json::array();
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const Sample& s = samples[i];
        const SceneSpec& spec = specs[i];
        const std::string image = split.name + "/" + s.id + ".png";
        const std::string density = split.name + "/" + s.id + ".qdm";
        write_png_rgb((root / image).string(), s.image);
        write_qdm((root / density).string(), s.density);
        json pts = json::array();
        for (const Point& p : s.points) pts.push_back({p.y, p.x});
        scenes.push_back({{"id", s.id},
                          {"category", spec.category},
                          {"count", spec.count},
                          {"height", spec.height},
                          {"width", spec.width},
                          {"radius_min", spec.radius_min},
                          {"radius_max", spec.radius_max},
                          {"seed", spec.seed},
                          {"image", image},
                          {"density", density},
                          {"points", pts}});
    }
    const json doc{{"split", split.name},
                   {"density_size", split.density_size},
                   {"sigma", split.sigma},
                   {"scenes", scenes}};
    const std::string path = (root / (split.name + ".json")).string();
    std::ofstream out(path);
    if (!out) throw IoError("cannot write manifest '" + path + "'");
    out << doc.dump(1) << "\n";
    return path;
}

Manifest read_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest '" + path + "'");
    Manifest m;
    try {
        const json doc = json::parse(in);
        m.split = doc.at("split").get<std::string>();
        m.density_size = doc.at("density_size").get<int>();
        m.sigma = doc.at("sigma").get<double>();
        for (const auto& s : doc.at("scenes")) {
            ManifestEntry e;
            e.id = s.at("id").get<std::string>();
            e.spec.category = s.at("category").get<std::string>();
            e.spec.count = s.at("count").get<int>();
            e.spec.height = s.at("height").get<int>();
            e.spec.width = s.at("width").get<int>();
            e.spec.radius_min = s.at("radius_min").get<double>();
            e.spec.radius_max = s.at("radius_max").get<double>();
            e.spec.seed = s.at("seed").get<std::uint64_t>();
            e.image = s.at("image").get<std::string>();
            e.density = s.at("density").get<std::string>();
            for (const auto& p : s.at("points")) e.points.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
            if (static_cast<int>(e.points.size()) != e.spec.count)
                throw IoError("manifest scene '" + e.id + "' lists " + std::to_string(e.points.size()) +
                              " points for count " + std::to_string(e.spec.count));
            m.entries.push_back(std::move(e));
        }
    } catch (const json::exception& ex) {
        throw IoError("malformed manifest '" + path + "': " + ex.what());
    }
    m.directory = fs::path(path).parent_path().string();
    return m;
}

std::vector<Sample> load_samples(const Manifest& m) {
    std::vector<Sample> out;
    out.reserve(m.entries.size());
    const fs::path root(m.directory);
    for (const auto& e : m.entries) {
        Sample s;
        s.id = e.id;
        s.category = e.spec.category;
        s.count = e.spec.count;
        s.points = e.points;
        s.image = read_png_rgb((root / e.image).string());
        s.density = read_qdm((root / e.density).string());
        if (s.image.height != e.spec.height || s.image.width != e.spec.width)
            throw IoError("image size of '" + e.id + "' does not match the manifest");
        if (s.density.height != m.density_size || s.density.width != m.density_size)
            throw IoError("density size of '" + e.id + "' does not match the manifest");
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<Sample> load_samples(const std::string& manifest_path) { return load_samples(read_manifest(manifest_path)); }

// ---- Checkpoints

void to_json(json& j, const EpochRecord& r) {
    j = json{{"epoch", r.epoch},           {"loss_density", r.loss_density}, {"loss_enc", r.loss_enc},
             {"loss_dec", r.loss_dec},     {"loss_total", r.loss_total},     {"val_mae", r.val_mae},
             {"val_rmse", r.val_rmse}};
}

void from_json(const json& j, EpochRecord& r) {
    j.at("epoch").get_to(r.epoch);
    j.at("loss_density").get_to(r.loss_density);
    j.at("loss_enc").get_to(r.loss_enc);
    j.at("loss_dec").get_to(r.loss_dec);
    j.at("loss_total").get_to(r.loss_total);
    j.at("val_mae").get_to(r.val_mae);
    j.at("val_rmse").get_to(r.val_rmse);
}

namespace {

constexpr char kCheckpointMagic[8] = {'Q', 'C', 'K', 'P', 'T', '0', '0', '1'};

template <typename T>
const char* scalar_name() {
    return sizeof(T) == 4 ? "float32" : "float64";
}

struct RawCheckpoint {
    json header;
    std::vector<unsigned char> bytes;
    std::size_t data_offset = 0;
};

RawCheckpoint read_raw(const std::string& path) {
    RawCheckpoint raw;
    raw.bytes = read_file(path);
    if (raw.bytes.size() < 16 || std::memcmp(raw.bytes.data(), kCheckpointMagic, 8) != 0)
        throw IoError("'" + path + "' is not a checkpoint");
    const std::uint64_t n = get_u64(raw.bytes.data() + 8);
    if (16 + n > raw.bytes.size()) throw IoError("checkpoint header of '" + path + "' is truncated");
    try {
        raw.header = json::parse(raw.bytes.begin() + 16, raw.bytes.begin() + 16 + static_cast<std::ptrdiff_t>(n));
    } catch (const json::exception& ex) {
        throw IoError("malformed checkpoint header in '" + path + "': " + ex.what());
    }
    raw.data_offset = 16 + n;
    return raw;
}

CheckpointMeta meta_of(const json& header) {
    CheckpointMeta meta;
    meta.config = header.at("config").get<TrainConfig>();
    meta.epoch = header.at("epoch").get<int>();
    meta.history = header.at("history").get<std::vector<EpochRecord>>();
    return meta;
}

}  // namespace

template <typename T>
void save_checkpoint(const std::string& path, const ParameterStore<T>& store, const CheckpointMeta& meta) {
    json tensors = json::array();
    std::size_t offset = 0;
    for (std::size_t i = 0; i < store.size(); ++i) {
        const auto& p = store[i];
        tensors.push_back({{"name", p.name},
                           {"group", p.group},
                           {"rows", p.value.rows()},
                           {"cols", p.value.cols()},
                           {"offset", offset}});
        offset += static_cast<std::size_t>(p.value.size()) * sizeof(T);
    }
    const json header{{"format", 1},          {"scalar", scalar_name<T>()}, {"config", meta.config},
                      {"epoch", meta.epoch},  {"history", meta.history},    {"tensors", tensors},
                      {"param_hash", store.hash()}};
    const std::string text = header.dump();

    std::vector<unsigned char> out(kCheckpointMagic, kCheckpointMagic + 8);
    put_u64(out, text.size());
    out.insert(out.end(), text.begin(), text.end());
    out.reserve(out.size() + offset);
    for (std::size_t i = 0; i < store.size(); ++i) {
        const auto& v = store[i].value;
        for (Index k = 0; k < v.size(); ++k) {
            if constexpr (sizeof(T) == 4)
                put_u32(out, bits_of<std::uint32_t>(v.data()[k]));
            else
                put_u64(out, bits_of<std::uint64_t>(v.data()[k]));
        }
    }
    const fs::path parent = fs::path(path).parent_path();
    if (!parent.empty()) fs::create_directories(parent);
    const std::string tmp = path + ".tmp";
    write_file(tmp, out);
    fs::rename(tmp, path);
}

CheckpointMeta read_checkpoint_meta(const std::string& path) { return meta_of(read_raw(path).header); }

template <typename T>
CheckpointMeta load_checkpoint(const std::string& path, ParameterStore<T>& store) {
    const RawCheckpoint raw = read_raw(path);
    CheckpointMeta meta;
    try {
        meta = meta_of(raw.header);
        const std::string scalar = raw.header.at("scalar").get<std::string>();
        if (scalar != "float32" && scalar != "float64") throw IoError("unknown checkpoint scalar type " + scalar);
        const std::size_t width = scalar == "float32" ? 4 : 8;
        const auto& tensors = raw.header.at("tensors");
        if (tensors.size() != store.size())
            throw IoError("checkpoint has " + std::to_string(tensors.size()) + " tensors, model has " +
                          std::to_string(store.size()));
        for (const auto& t : tensors) {
            const std::string name = t.at("name").get<std::string>();
            Parameter<T>* p = store.find(name);
            if (!p) throw IoError("checkpoint tensor '" + name + "' has no matching parameter");
            const Index rows = t.at("rows").get<Index>(), cols = t.at("cols").get<Index>();
            if (rows != p->value.rows() || cols != p->value.cols())
                throw IoError("shape mismatch for '" + name + "'");
            const std::size_t begin = raw.data_offset + t.at("offset").get<std::size_t>();
            if (begin + static_cast<std::size_t>(rows * cols) * width > raw.bytes.size())
                throw IoError("checkpoint data for '" + name + "' is truncated");
            for (Index k = 0; k < rows * cols; ++k) {
                const unsigned char* b = raw.bytes.data() + begin + static_cast<std::size_t>(k) * width;
                p->value.data()[k] = width == 4 ? static_cast<T>(from_bits<float>(get_u32(b)))
                                                : static_cast<T>(from_bits<double>(get_u64(b)));
            }
        }
    } catch (const json::exception& ex) {
        throw IoError("malformed checkpoint '" + path + "': " + ex.what());
    }
    return meta;
}

template void save_checkpoint(const std::string&, const ParameterStore<float>&, const CheckpointMeta&);
template void save_checkpoint(const std::string&, const ParameterStore<double>&, const CheckpointMeta&);
template CheckpointMeta load_checkpoint(const std::string&, ParameterStore<float>&);
template CheckpointMeta load_checkpoint(const std::string&, ParameterStore<double>&);

}  // namespace qcount
