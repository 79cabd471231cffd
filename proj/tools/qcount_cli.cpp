#include "qcount/gradcheck.hpp"
#include "qcount/io.hpp"
#include "qcount/train.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>

using namespace qcount;
namespace fs = std::filesystem;

namespace {

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',') {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

// Runs `fn` with a model of the checkpoint's precision, loaded from disk.
template <typename Fn>
void with_checkpoint(const std::string& path, Fn&& fn) {
    const CheckpointMeta meta = read_checkpoint_meta(path);
    const ModelConfig mcfg = meta.config.resolved_model();
    if (meta.config.precision == "double") {
        CountingModel<double> model(mcfg, meta.config.seed);
        load_checkpoint(path, model.params());
        fn(model);
    } else {
        CountingModel<float> model(mcfg, meta.config.seed);
        load_checkpoint(path, model.params());
        fn(model);
    }
}

int run_gen_data(const std::string& out, const std::string& splits, const std::string& categories, int min_count,
                 int max_count, int scenes, int image_size, double sigma, std::uint64_t seed) {
    const auto cats = split_list(categories);
    for (const auto& name : split_list(splits)) {
        SplitSpec s;
        s.name = name;
        s.categories = cats;
        s.scenes = scenes;
        s.min_count = min_count;
        s.max_count = max_count;
        s.image_size = image_size;
        s.density_size = image_size / 2;
        s.sigma = sigma;
        s.seed = seed;
        const std::string path = write_split(out, s);
        std::printf("%s: %d scenes -> %s\n", name.c_str(), scenes, path.c_str());
    }
    return 0;
}

template <typename T>
int train_with(const TrainConfig& cfg, const std::string& out) {
    if (cfg.train_manifest.empty()) throw ConfigError("config does not name a train_manifest");
    const auto train_set = load_samples(cfg.train_manifest);
    const std::vector<Sample> val_set = cfg.val_manifest.empty() ? std::vector<Sample>{} : load_samples(cfg.val_manifest);
    CountingModel<T> model(cfg.resolved_model(), cfg.seed);
    std::printf("model: %zu parameters, %zu train / %zu val scenes, quantity path %s\n",
                model.params().scalar_count(), train_set.size(), val_set.size(),
                cfg.uses_quantity_path() ? "on" : "off");
    TrainOptions opts;
    opts.out_dir = out;
    opts.on_epoch = [](const EpochRecord& r) {
        std::printf("epoch %3d  loss %.4f (density %.4f enc %.4f dec %.4f)  val MAE %.3f RMSE %.3f\n", r.epoch,
                    r.loss_total, r.loss_density, r.loss_enc, r.loss_dec, r.val_mae, r.val_rmse);
        std::fflush(stdout);
    };
    const TrainResult res = train(model, cfg, train_set, val_set, opts);
    std::printf("best val MAE %.3f at epoch %d after %ld steps; checkpoints in %s\n", res.best_val_mae,
                res.best_epoch, res.steps, out.c_str());
    return 0;
}

int run_train(const std::string& config_path, const std::string& out) {
    const TrainConfig cfg = load_config(config_path);
    fs::create_directories(out);
    std::ofstream(fs::path(out) / "config.json") << nlohmann::json(cfg).dump(2) << "\n";
    return cfg.precision == "double" ? train_with<double>(cfg, out) : train_with<float>(cfg, out);
}

int run_eval(const std::string& ckpt, const std::string& manifest) {
    const auto samples = load_samples(manifest);
    with_checkpoint(ckpt, [&](const auto& model) {
        const Metrics m = evaluate(model, samples);
        std::printf("scenes %zu  MAE %.4f  RMSE %.4f\n", samples.size(), m.mae, m.rmse);
    });
    return 0;
}

int run_predict(const std::string& ckpt, const std::string& image_path, const std::string& text,
                const std::string& out) {
    const Image image = read_png_rgb(image_path);
    with_checkpoint(ckpt, [&](const auto& model) {
        const DensityMap d = model.predict(image, text);
        fs::create_directories(out);
        const std::string stem = fs::path(image_path).stem().string();
        write_qdm((fs::path(out) / (stem + ".qdm")).string(), d);
        write_heatmap_png((fs::path(out) / (stem + "_heatmap.png")).string(), d);
        std::printf("%.2f\n", count(d));
    });
    return 0;
}

int run_gradcheck(const std::string& config_path, bool no_guard, const std::string& report_path) {
    const TrainConfig cfg = load_config(config_path);
    GradcheckOptions opt;
    opt.kink_guard = !no_guard;
    opt.seed = cfg.seed;
    const GradcheckReport r = gradcheck(cfg, opt);
    for (const auto& g : r.groups) {
        std::printf("%-20s checked %3d  kinks skipped %2d  flagged %2zu  max rel err %.3e  %s\n", g.group.c_str(),
                    g.checked, g.skipped_kinks, g.flagged.size(), g.max_rel_error, g.pass ? "ok" : "FAIL");
        for (const auto& c : g.flagged)
            std::printf("    kink crossing %s[%ld]: analytic %.6e numeric %.6e\n", c.parameter.c_str(), c.index,
                        c.analytic, c.numeric);
    }
    std::printf("gradcheck %s in %.1f s\n", r.pass ? "passed" : "FAILED", r.seconds);
    if (!report_path.empty()) std::ofstream(report_path) << r.to_json().dump(2) << "\n";
    return r.pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"qcount: zero-shot object counting at toy scale"};
    app.require_subcommand(1);

    auto* gen = app.add_subcommand("gen-data", "generate synthetic counting scenes");
    std::string gen_out, gen_splits = "train,val,test", gen_categories = "circles";
    int min_count = 5, max_count = 30, scenes = 64, image_size = 64;
    double sigma = 1.5;
    std::uint64_t gen_seed = 0;
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_option("--splits", gen_splits, "comma-separated split names")->capture_default_str();
    gen->add_option("--category", gen_categories, "comma-separated categories, cycled over scenes")
        ->capture_default_str();
    gen->add_option("--min-count", min_count)->capture_default_str();
    gen->add_option("--max-count", max_count)->capture_default_str();
    gen->add_option("--scenes", scenes, "scenes per split")->capture_default_str()->check(CLI::NonNegativeNumber);
    gen->add_option("--image-size", image_size)->capture_default_str();
    gen->add_option("--sigma", sigma, "density kernel sigma in output cells")->capture_default_str();
    gen->add_option("--seed", gen_seed)->capture_default_str();

    auto* tr = app.add_subcommand("train", "train a model from a JSON config");
    std::string config_path, train_out;
    tr->add_option("--config", config_path)->required()->check(CLI::ExistingFile);
    tr->add_option("--out", train_out, "run directory")->required();

    auto* ev = app.add_subcommand("eval", "MAE/RMSE of a checkpoint on a manifest");
    std::string ckpt, manifest;
    ev->add_option("--ckpt", ckpt)->required()->check(CLI::ExistingFile);
    ev->add_option("--manifest", manifest)->required()->check(CLI::ExistingFile);

    auto* pr = app.add_subcommand("predict", "density map and count for one image");
    std::string pr_ckpt, image, text, pr_out;
    pr->add_option("--ckpt", pr_ckpt)->required()->check(CLI::ExistingFile);
    pr->add_option("--image", image)->required()->check(CLI::ExistingFile);
    pr->add_option("--text", text, "category prompt, e.g. \"a photo of circles\"")->required();
    pr->add_option("--out", pr_out)->required();

    auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every trainable group");
    std::string gc_config, gc_report;
    bool no_guard = false;
    gc->add_option("--config", gc_config)->required()->check(CLI::ExistingFile);
    gc->add_flag("--no-kink-guard", no_guard, "keep coordinates whose perturbation crosses a kink");
    gc->add_option("--report", gc_report, "write the JSON report here");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*gen)
            return run_gen_data(gen_out, gen_splits, gen_categories, min_count, max_count, scenes, image_size, sigma,
                                gen_seed);
        if (*tr) return run_train(config_path, train_out);
        if (*ev) return run_eval(ckpt, manifest);
        if (*pr) return run_predict(pr_ckpt, image, text, pr_out);
        if (*gc) return run_gradcheck(gc_config, no_guard, gc_report);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
