#pragma once

#include "qcount/config.hpp"
#include "qcount/data.hpp"
#include "qcount/image.hpp"
#include "qcount/params.hpp"

#include <json.hpp>

#include <stdexcept>
#include <string>
#include <vector>

namespace qcount {

class IoError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// ---- QDM density files: "QDM1", u32 LE height, u32 LE width, f32 LE data.

void write_qdm(const std::string& path, const DensityMap& d);
DensityMap read_qdm(const std::string& path);
std::vector<unsigned char> encode_qdm(const DensityMap& d);
DensityMap decode_qdm(const std::vector<unsigned char>& bytes);

// ---- PNG

/// Writes an 8-bit RGB PNG; values are clamped to [0,1] and rounded.
void write_png_rgb(const std::string& path, const Image& img);
/// Reads any 8-bit PNG as RGB in [0,1] (gray is replicated, alpha dropped).
Image read_png_rgb(const std::string& path);
/// Grayscale heatmap scaled so the maximum cell is 255.
std::vector<unsigned char> heatmap_pixels(const DensityMap& d);
void write_heatmap_png(const std::string& path, const DensityMap& d);
/// Raw 8-bit grayscale pixels of a PNG file.
std::vector<unsigned char> read_png_gray(const std::string& path, int& height, int& width);

// ---- Dataset manifests

struct ManifestEntry {
    std::string id;
    SceneSpec spec;
    std::string image;    // relative to the manifest directory
    std::string density;  // relative to the manifest directory
    std::vector<Point> points;
};

struct Manifest {
    std::string split;
    int density_size = 32;
    double sigma = 1.5;
    std::vector<ManifestEntry> entries;
    std::string directory;  // set on load
};

/// Generates a split and writes images, densities and the manifest under
/// `dir`. Returns the manifest path.
std::string write_split(const std::string& dir, const SplitSpec& split);
Manifest read_manifest(const std::string& path);
std::vector<Sample> load_samples(const Manifest& m);
std::vector<Sample> load_samples(const std::string& manifest_path);

// ---- Checkpoints

struct EpochRecord {
    int epoch = 0;
    double loss_density = 0;
    double loss_enc = 0;
    double loss_dec = 0;
    double loss_total = 0;
    double val_mae = 0;
    double val_rmse = 0;
};

void to_json(nlohmann::json& j, const EpochRecord& r);
void from_json(const nlohmann::json& j, EpochRecord& r);

struct CheckpointMeta {
    TrainConfig config;
    int epoch = 0;
    std::vector<EpochRecord> history;
};

/// Binary checkpoint: magic, u64 LE header size, JSON header, then every
/// parameter's raw little-endian values in store order.
template <typename T>
void save_checkpoint(const std::string& path, const ParameterStore<T>& store, const CheckpointMeta& meta);

/// Metadata only; cheap enough to choose the precision before loading.
CheckpointMeta read_checkpoint_meta(const std::string& path);

/// Restores parameter values by name. Every stored tensor must match a
/// parameter of the same shape and vice versa.
template <typename T>
CheckpointMeta load_checkpoint(const std::string& path, ParameterStore<T>& store);

}  // namespace qcount
