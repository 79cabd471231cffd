#pragma once

#include <json.hpp>

#include <array>
#include <stdexcept>
#include <string>
#include <vector>

namespace qcount {

class ConfigError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

struct TextEncoderConfig {
    int num_layers = 12;
    int width = 32;
    int num_heads = 4;
    int prompt_depth = 9;
    int prompt_length = 2;
    int mlp_ratio = 4;
    int max_seq_len = 8;
};

struct VisionEncoderConfig {
    int image_size = 64;
    int patch_size = 8;
    int num_layers = 12;
    int width = 48;
    int num_heads = 4;
    int mlp_ratio = 4;
    std::array<int, 2> skip_stage_indices{4, 8};

    int grid() const { return image_size / patch_size; }
};

struct DecoderConfig {
    int width = 32;  // d_g
    int window = 4;
    int num_heads = 4;
    int mlp_ratio = 4;
    bool guidance = true;
    bool halve_channels = true;

    /// Channel width after upsampling stage r (0 = aggregation width).
    int stage_width(int r) const { return halve_channels ? width >> r : width; }
};

struct ModelConfig {
    TextEncoderConfig text;
    VisionEncoderConfig vision;
    DecoderConfig decoder;
    std::vector<std::string> categories{"circles", "squares"};
    int max_count = 512;
    bool freeze_backbone = false;
    bool shared_vg = false;
    double head_bias_init = 0.0;
    double head_weight_scale = 1.0;

    int density_size() const { return 4 * vision.grid(); }
    void validate() const;
};

/// Training and run configuration; JSON keys mirror the field names.
struct TrainConfig {
    double learning_rate = 1e-4;
    double weight_decay = 1e-2;
    int epochs = 50;
    int batch_size = 8;
    int K = 5;
    double lambda_1 = 0.1;
    double lambda_2 = 0.05;
    double beta = 0.1;
    int prompt_depth = 9;
    int prompt_length = 2;
    unsigned long long seed = 0;
    bool freeze_backbone = false;
    std::string precision = "single";

    bool shared_vg = false;
    bool augment = true;
    int max_steps = 0;  // 0 = run all epochs
    int eval_every = 1;
    double density_sigma = 1.5;
    std::string train_manifest;
    std::string val_manifest;
    ModelConfig model;

    /// Model config with the top-level prompt/freeze knobs applied.
    ModelConfig resolved_model() const;
    bool uses_quantity_path() const { return !(K == 1 && lambda_1 == 0.0 && lambda_2 == 0.0); }
    void validate() const;
};

/// Reduced-depth configuration used for CPU-scale training runs.
TrainConfig toy_config();

void to_json(nlohmann::json& j, const TextEncoderConfig& c);
void from_json(const nlohmann::json& j, TextEncoderConfig& c);
void to_json(nlohmann::json& j, const VisionEncoderConfig& c);
void from_json(const nlohmann::json& j, VisionEncoderConfig& c);
void to_json(nlohmann::json& j, const DecoderConfig& c);
void from_json(const nlohmann::json& j, DecoderConfig& c);
void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

TrainConfig load_config(const std::string& path);

}  // namespace qcount
