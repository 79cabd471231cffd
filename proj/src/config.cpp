#include "qcount/config.hpp"

#include <filesystem>
#include <fstream>
#include <set>

namespace qcount {

using nlohmann::json;

namespace {

void check(bool cond, const std::string& msg) {
    if (!cond) throw ConfigError(msg);
}

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.count(it.key())) throw ConfigError("unknown key '" + it.key() + "' in " + where);
}

template <typename V>
void read(const json& j, const char* key, V& out) {
    if (j.contains(key)) j.at(key).get_to(out);
}

}  // namespace

void ModelConfig::validate() const {
    check(text.num_layers >= 1, "text.num_layers must be >= 1");
    check(text.prompt_depth >= 0 && text.prompt_depth <= text.num_layers,
          "prompt_depth must satisfy 0 <= L <= text.num_layers");
    check(text.prompt_depth <= vision.num_layers, "prompt_depth exceeds vision.num_layers");
    check(text.prompt_length >= 1, "prompt_length must be >= 1");
    check(text.width > 0 && text.num_heads > 0 && text.width % text.num_heads == 0,
          "text.width must be divisible by text.num_heads");
    check(text.max_seq_len >= 1, "text.max_seq_len must be >= 1");
    check(vision.patch_size > 0 && vision.image_size % vision.patch_size == 0,
          "image_size must be divisible by patch_size");
    check(vision.width > 0 && vision.num_heads > 0 && vision.width % vision.num_heads == 0,
          "vision.width must be divisible by vision.num_heads");
    const auto& s = vision.skip_stage_indices;
    check(s[0] >= 0 && s[0] < s[1] && s[1] < vision.num_layers,
          "skip_stage_indices must be strictly increasing and < vision.num_layers");
    check(decoder.window >= 1, "decoder.window must be >= 1");
    for (int r = 0; r <= 2; ++r)
        check(decoder.stage_width(r) >= decoder.num_heads && decoder.stage_width(r) >= 1,
              "decoder width too small for channel halving");
    check(decoder.width % decoder.num_heads == 0, "decoder.width must be divisible by decoder.num_heads");
    check(!categories.empty(), "at least one category is required");
    check(max_count >= 1, "max_count must be >= 1");
}

ModelConfig TrainConfig::resolved_model() const {
    ModelConfig m = model;
    m.text.prompt_depth = prompt_depth;
    m.text.prompt_length = prompt_length;
    m.freeze_backbone = freeze_backbone;
    m.shared_vg = shared_vg;
    return m;
}

void TrainConfig::validate() const {
    check(learning_rate > 0, "learning_rate must be > 0");
    check(weight_decay >= 0, "weight_decay must be >= 0");
    check(epochs >= 1, "epochs must be >= 1");
    check(batch_size >= 1, "batch_size must be >= 1");
    check(K >= 1 && K % 2 == 1, "K must be odd and >= 1");
    check(lambda_1 >= 0 && lambda_2 >= 0 && beta >= 0, "loss weights must be nonnegative");
    check(precision == "single" || precision == "double", "precision must be 'single' or 'double'");
    check(max_steps >= 0, "max_steps must be >= 0");
    check(eval_every >= 1, "eval_every must be >= 1");
    check(density_sigma > 0, "density_sigma must be > 0");
    resolved_model().validate();
}

TrainConfig toy_config() {
    TrainConfig c;
    c.epochs = 50;
    c.learning_rate = 1e-3;
    c.prompt_depth = 3;
    c.model.text.num_layers = 4;
    c.model.vision.num_layers = 4;
    c.model.vision.skip_stage_indices = {1, 2};
    // Start near a plausible count instead of ~100x too high.
    c.model.head_bias_init = 0.02;
    c.model.head_weight_scale = 0.05;
    return c;
}

void to_json(json& j, const TextEncoderConfig& c) {
    j = json{{"num_layers", c.num_layers}, {"width", c.width},     {"num_heads", c.num_heads},
             {"mlp_ratio", c.mlp_ratio},   {"max_seq_len", c.max_seq_len}};
}

void from_json(const json& j, TextEncoderConfig& c) {
    reject_unknown(j, {"num_layers", "width", "num_heads", "mlp_ratio", "max_seq_len"}, "model.text");
    read(j, "num_layers", c.num_layers);
    read(j, "width", c.width);
    read(j, "num_heads", c.num_heads);
    read(j, "mlp_ratio", c.mlp_ratio);
    read(j, "max_seq_len", c.max_seq_len);
}

void to_json(json& j, const VisionEncoderConfig& c) {
    j = json{{"image_size", c.image_size}, {"patch_size", c.patch_size}, {"num_layers", c.num_layers},
             {"width", c.width},           {"num_heads", c.num_heads},   {"mlp_ratio", c.mlp_ratio},
             {"skip_stage_indices", c.skip_stage_indices}};
}

void from_json(const json& j, VisionEncoderConfig& c) {
    reject_unknown(j, {"image_size", "patch_size", "num_layers", "width", "num_heads", "mlp_ratio", "skip_stage_indices"},
                   "model.vision");
    read(j, "image_size", c.image_size);
    read(j, "patch_size", c.patch_size);
    read(j, "num_layers", c.num_layers);
    read(j, "width", c.width);
    read(j, "num_heads", c.num_heads);
    read(j, "mlp_ratio", c.mlp_ratio);
    if (j.contains("skip_stage_indices")) {
        const auto v = j.at("skip_stage_indices").get<std::vector<int>>();
        check(v.size() == 2, "skip_stage_indices must list exactly 2 layers");
        c.skip_stage_indices = {v[0], v[1]};
    }
}

void to_json(json& j, const DecoderConfig& c) {
    j = json{{"width", c.width},         {"window", c.window},     {"num_heads", c.num_heads},
             {"mlp_ratio", c.mlp_ratio}, {"guidance", c.guidance}, {"halve_channels", c.halve_channels}};
}

void from_json(const json& j, DecoderConfig& c) {
    reject_unknown(j, {"width", "window", "num_heads", "mlp_ratio", "guidance", "halve_channels"}, "model.decoder");
    read(j, "width", c.width);
    read(j, "window", c.window);
    read(j, "num_heads", c.num_heads);
    read(j, "mlp_ratio", c.mlp_ratio);
    read(j, "guidance", c.guidance);
    read(j, "halve_channels", c.halve_channels);
}

void to_json(json& j, const ModelConfig& c) {
    j = json{{"text", c.text},
             {"vision", c.vision},
             {"decoder", c.decoder},
             {"categories", c.categories},
             {"max_count", c.max_count},
             {"head_bias_init", c.head_bias_init}, {"head_weight_scale", c.head_weight_scale}};
}

void from_json(const json& j, ModelConfig& c) {
    reject_unknown(j, {"text", "vision", "decoder", "categories", "max_count", "head_bias_init", "head_weight_scale"}, "model");
    read(j, "text", c.text);
    read(j, "vision", c.vision);
    read(j, "decoder", c.decoder);
    read(j, "categories", c.categories);
    read(j, "max_count", c.max_count);
    read(j, "head_bias_init", c.head_bias_init);
    read(j, "head_weight_scale", c.head_weight_scale);
}

void to_json(json& j, const TrainConfig& c) {
    j = json{{"learning_rate", c.learning_rate},
             {"weight_decay", c.weight_decay},
             {"epochs", c.epochs},
             {"batch_size", c.batch_size},
             {"K", c.K},
             {"lambda_1", c.lambda_1},
             {"lambda_2", c.lambda_2},
             {"beta", c.beta},
             {"prompt_depth", c.prompt_depth},
             {"prompt_length", c.prompt_length},
             {"seed", c.seed},
             {"freeze_backbone", c.freeze_backbone},
             {"precision", c.precision},
             {"shared_vg", c.shared_vg},
             {"augment", c.augment},
             {"max_steps", c.max_steps},
             {"eval_every", c.eval_every},
             {"density_sigma", c.density_sigma},
             {"train_manifest", c.train_manifest},
             {"val_manifest", c.val_manifest},
             {"model", c.model}};
}

void from_json(const json& j, TrainConfig& c) {
    reject_unknown(j,
                   {"learning_rate", "weight_decay", "epochs", "batch_size", "K", "lambda_1", "lambda_2", "beta",
                    "prompt_depth", "prompt_length", "seed", "freeze_backbone", "precision", "shared_vg", "augment",
                    "max_steps", "eval_every", "density_sigma", "train_manifest", "val_manifest", "model"},
                   "config");
    read(j, "learning_rate", c.learning_rate);
    read(j, "weight_decay", c.weight_decay);
    read(j, "epochs", c.epochs);
    read(j, "batch_size", c.batch_size);
    read(j, "K", c.K);
    read(j, "lambda_1", c.lambda_1);
    read(j, "lambda_2", c.lambda_2);
    read(j, "beta", c.beta);
    read(j, "prompt_depth", c.prompt_depth);
    read(j, "prompt_length", c.prompt_length);
    read(j, "seed", c.seed);
    read(j, "freeze_backbone", c.freeze_backbone);
    read(j, "precision", c.precision);
    read(j, "shared_vg", c.shared_vg);
    read(j, "augment", c.augment);
    read(j, "max_steps", c.max_steps);
    read(j, "eval_every", c.eval_every);
    read(j, "density_sigma", c.density_sigma);
    read(j, "train_manifest", c.train_manifest);
    read(j, "val_manifest", c.val_manifest);
    read(j, "model", c.model);
}

TrainConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw ConfigError("invalid JSON in " + path + ": " + e.what());
    }
    TrainConfig c = j.get<TrainConfig>();
    // Manifest paths are relative to the config file.
    const std::filesystem::path base = std::filesystem::path(path).parent_path();
    for (std::string* m : {&c.train_manifest, &c.val_manifest})
        if (!m->empty() && std::filesystem::path(*m).is_relative()) *m = (base / *m).lexically_normal().string();
    c.validate();
    return c;
}

}  // namespace qcount
