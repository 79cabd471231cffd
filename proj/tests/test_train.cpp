#include "qcount/gradcheck.hpp"
#include "qcount/train.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include <unistd.h>

using namespace qcount;
namespace fs = std::filesystem;

namespace {

TrainConfig tiny_train() {
    TrainConfig c = toy_config();
    c.model = qtest::tiny_model();
    c.prompt_depth = 2;
    c.batch_size = 2;
    c.epochs = 1;
    c.augment = false;
    return c;
}

std::vector<Sample> scenes(int n, std::uint64_t seed = 0) {
    SplitSpec s{"unit", {"circles"}, n, 3, 12};
    s.seed = seed;
    return generate_split(s);
}

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("qcount_test_train_" + std::to_string(::getpid())) / name;
    fs::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("count metrics: worked examples and random oracle") {
    auto m = count_metrics({5, 5}, {5, 5});
    CHECK(m.mae == 0.0);
    CHECK(m.rmse == 0.0);
    m = count_metrics({12, 8}, {10, 10});
    CHECK(m.mae == 2.0);
    CHECK(m.rmse == 2.0);
    m = count_metrics({10, 13}, {10, 10});
    CHECK(m.mae == 1.5);
    CHECK(std::abs(m.rmse - std::sqrt(4.5)) < 1e-12);

    std::mt19937_64 rng(4);
    std::normal_distribution<double> n(0.0, 5.0);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> pred, truth;
        long double abs_sum = 0, sq_sum = 0;
        for (int i = 0; i < 50; ++i) {
            truth.push_back(static_cast<double>(i));
            pred.push_back(i + n(rng));
            const long double e = static_cast<long double>(pred.back()) - truth.back();
            abs_sum += e < 0 ? -e : e;
            sq_sum += e * e;
        }
        m = count_metrics(pred, truth);
        CHECK(std::abs(m.mae - static_cast<double>(abs_sum / 50)) <= 1e-12);
        CHECK(std::abs(m.rmse - static_cast<double>(std::sqrt(sq_sum / 50))) <= 1e-12);
    }
    CHECK_THROWS(count_metrics({}, {}));
    CHECK_THROWS(count_metrics({1}, {1, 2}));
}

TEST_CASE("AdamW matches a scalar reference") {
    ParameterStore<double> store;
    store.add("w", "g", qtest::MatD::Constant(1, 2, 0.5));
    store.add("frozen", "g", qtest::MatD::Constant(1, 1, 3.0)).trainable = false;
    AdamW<double> opt(store, 0.01, 0.1);

    double p = 0.5, m = 0, v = 0;
    const double grads[] = {0.3, -1.2, 0.0, 2.5, 0.7};
    for (int t = 1; t <= 5; ++t) {
        const double gr = grads[t - 1];
        qtest::MatD gm = qtest::MatD::Constant(1, 2, gr);
        opt.step({gm, qtest::MatD::Constant(1, 1, 9.0)});
        p *= 1.0 - 0.01 * 0.1;
        m = 0.9 * m + 0.1 * gr;
        v = 0.999 * v + 0.001 * gr * gr;
        const double mh = m / (1 - std::pow(0.9, t)), vh = v / (1 - std::pow(0.999, t));
        p -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
        CHECK(store[0].value(0, 0) == doctest::Approx(p).epsilon(1e-14));
        CHECK(store[0].value(0, 1) == store[0].value(0, 0));
    }
    CHECK(store[1].value(0, 0) == 3.0);
    CHECK(opt.steps() == 5);
    CHECK_THROWS(opt.step({qtest::MatD::Zero(1, 2)}));
}

TEST_CASE("plain density regression leaves the quantity modules untouched") {
    TrainConfig cfg = tiny_train();
    cfg.K = 1;
    cfg.lambda_1 = cfg.lambda_2 = 0.0;
    REQUIRE_FALSE(cfg.uses_quantity_path());
    CountingModel<double> model(cfg.resolved_model(), 1);
    const auto data = scenes(2);
    std::vector<const Sample*> batch{&data[0], &data[1]};
    model.counters.reset();
    const auto bg = batch_gradient(model, batch, ObjectiveOptions::from(cfg));
    CHECK(model.counters.embed_quantity == 0);
    CHECK(model.counters.category_project == 0);
    CHECK(model.counters.forward_hypothesis == 0);
    CHECK(bg.mean.enc_qty == 0.0);
    CHECK(bg.mean.dec_qty == 0.0);
    CHECK(bg.mean.total == bg.mean.density);
    for (std::size_t i = 0; i < model.params().size(); ++i) {
        const auto& p = model.params()[i];
        if (p.group == "quantity" || p.group == "category_projection") CHECK(bg.grads[i].size() == 0);
    }
}

TEST_CASE("the full objective runs K hypothesis passes per image") {
    TrainConfig cfg = tiny_train();
    CountingModel<double> model(cfg.resolved_model(), 1);
    const auto data = scenes(2);
    std::vector<const Sample*> batch{&data[0], &data[1]};
    model.counters.reset();
    const auto bg = batch_gradient(model, batch, ObjectiveOptions::from(cfg));
    CHECK(model.counters.embed_quantity == 10);
    CHECK(model.counters.category_project == 10);
    CHECK(model.counters.forward_hypothesis == 10);
    CHECK(bg.mean.total == doctest::Approx(bg.mean.density + 0.1 * bg.mean.enc_qty + 0.05 * bg.mean.dec_qty));
    for (std::size_t i = 0; i < model.params().size(); ++i) {
        const auto& p = model.params()[i];
        if (p.name == "quantity.table" || p.name == "category_projection.weight") CHECK(bg.grads[i].norm() > 0);
    }
}

TEST_CASE("evaluation is read-only and uses the inference path") {
    TrainConfig cfg = tiny_train();
    CountingModel<float> model(cfg.resolved_model(), 2);
    const auto data = scenes(3);
    const auto before = model.params().hash();
    model.counters.reset();
    const Metrics m = evaluate(model, data);
    CHECK(model.params().hash() == before);
    CHECK(model.counters.embed_quantity == 0);
    CHECK(model.counters.forward_inference == 3);
    std::vector<double> truth;
    for (const auto& s : data) truth.push_back(s.count);
    const Metrics ref = count_metrics(predict_counts(model, data), truth);
    CHECK(m.mae == ref.mae);
    CHECK(m.rmse == ref.rmse);

    auto wrong = data;
    wrong[0].density = DensityMap(16, 16);
    CHECK_THROWS(evaluate(model, wrong));
}

TEST_CASE("double-precision training is bit-reproducible") {
    TrainConfig cfg = tiny_train();
    cfg.precision = "double";
    cfg.epochs = 2;
    cfg.augment = true;
    const auto data = scenes(4);
    auto run = [&] {
        CountingModel<double> model(cfg.resolved_model(), cfg.seed);
        std::vector<double> curve;
        TrainOptions o;
        o.on_step = [&](long, const LossBreakdown& b) { curve.push_back(b.total); };
        train(model, cfg, data, {}, o);
        return std::pair{curve, model.params().hash()};
    };
    const auto a = run(), b = run();
    CHECK(a.first.size() == 4u);
    CHECK(a.first == b.first);
    CHECK(a.second == b.second);
}

TEST_CASE("training writes logs and checkpoints and restores the best epoch") {
    const auto dir = scratch("run");
    TrainConfig cfg = tiny_train();
    cfg.epochs = 3;
    const auto data = scenes(4);
    CountingModel<float> model(cfg.resolved_model(), 0);
    TrainOptions o;
    o.out_dir = dir.string();
    const auto result = train(model, cfg, data, data, o);
    CHECK(result.history.size() == 3u);
    CHECK(result.steps == 6);
    CHECK(fs::exists(dir / "best.ckpt"));
    CHECK(fs::exists(dir / "last.ckpt"));
    std::ifstream log(dir / "metrics.jsonl");
    int lines = 0;
    for (std::string line; std::getline(log, line); ++lines) {
        const auto j = nlohmann::json::parse(line);
        for (const char* k : {"epoch", "loss_density", "loss_enc", "loss_dec", "loss_total", "val_mae", "val_rmse"})
            CHECK(j.contains(k));
    }
    CHECK(lines == 3);
    // The restored parameters reproduce the best validation score.
    CHECK(evaluate(model, data).mae == doctest::Approx(result.best_val_mae).epsilon(1e-12));

    TrainConfig capped = cfg;
    capped.max_steps = 3;
    CountingModel<float> m2(cfg.resolved_model(), 0);
    CHECK(train(m2, capped, data, {}).steps == 3);
}

TEST_CASE("a non-finite loss aborts training with a batch dump") {
    const auto dir = scratch("nan");
    TrainConfig cfg = tiny_train();
    CountingModel<float> model(cfg.resolved_model(), 0);
    model.params().find("head.bias")->value(0, 0) = std::numeric_limits<float>::quiet_NaN();
    TrainOptions o;
    o.out_dir = dir.string();
    bool thrown = false;
    try {
        train(model, cfg, scenes(2), {}, o);
    } catch (const NonFiniteLossError& e) {
        thrown = true;
        CHECK(e.diagnostics["batch"].size() == 2u);
        CHECK(e.diagnostics["step"] == 1);
    }
    CHECK(thrown);
    CHECK(fs::exists(dir / "nonfinite_batch.json"));
}

TEST_CASE("config files mirror the config fields") {
    const auto dir = scratch("cfg");
    TrainConfig c = toy_config();
    c.K = 7;
    c.beta = 0.3;
    c.shared_vg = true;
    c.train_manifest = "data/train.json";
    c.model.decoder.guidance = false;
    const nlohmann::json j = c;
    for (const char* k : {"learning_rate", "weight_decay", "epochs", "batch_size", "K", "lambda_1", "lambda_2", "beta",
                          "prompt_depth", "prompt_length", "seed", "freeze_backbone", "precision"})
        CHECK(j.contains(k));
    const TrainConfig back = j.get<TrainConfig>();
    CHECK(nlohmann::json(back) == j);

    std::ofstream(dir / "c.json") << j.dump(2);
    const TrainConfig loaded = load_config((dir / "c.json").string());
    CHECK(loaded.K == 7);
    CHECK(fs::path(loaded.train_manifest) == (dir / "data/train.json").lexically_normal());

    nlohmann::json bad = j;
    bad["learning_rte"] = 0.1;
    CHECK_THROWS_AS(bad.get<TrainConfig>(), ConfigError);
    bad = j;
    bad["K"] = 4;
    std::ofstream(dir / "bad.json") << bad.dump();
    CHECK_THROWS_AS(load_config((dir / "bad.json").string()), ConfigError);
    bad = j;
    bad["prompt_depth"] = 9;  // deeper than the toy encoders
    std::ofstream(dir / "bad2.json") << bad.dump();
    CHECK_THROWS_AS(load_config((dir / "bad2.json").string()), ConfigError);
}

TEST_CASE("shipped configs match the built-in toy settings") {
    auto strip = [](TrainConfig c) {
        c.train_manifest.clear();
        c.val_manifest.clear();
        return nlohmann::json(c);
    };
    const TrainConfig full = load_config(QCOUNT_SOURCE_DIR "/configs/toy.json");
    CHECK(strip(full) == strip(toy_config()));
    TrainConfig plain_ref = toy_config();
    plain_ref.K = 1;
    plain_ref.lambda_1 = plain_ref.lambda_2 = 0.0;
    const TrainConfig plain = load_config(QCOUNT_SOURCE_DIR "/configs/toy_plain.json");
    CHECK(strip(plain) == strip(plain_ref));
    CHECK_FALSE(plain.uses_quantity_path());
}

TEST_CASE("gradient check covers every trainable group") {
    TrainConfig cfg = tiny_train();
    GradcheckOptions opt;
    opt.uniform_coords = 4;
    opt.nonzero_coords = 4;
    const auto report = gradcheck(cfg, opt);
    std::set<std::string> groups;
    for (const auto& g : report.groups) {
        INFO(g.group);
        groups.insert(g.group);
        CHECK(g.checked >= 4);
        CHECK(g.pass);
    }
    CHECK(groups == std::set<std::string>{"backbone_text", "backbone_vision", "quantity", "prompts", "coupling", "category_projection",
                                          "decoder", "head"});
    CHECK(report.pass);
    CHECK(report.to_json()["groups"].size() == groups.size());

    cfg.freeze_backbone = true;
    std::set<std::string> frozen;
    for (const auto& g : gradcheck(cfg, opt).groups) frozen.insert(g.group);
    CHECK(frozen.count("backbone_text") == 0);
    CHECK(frozen.count("backbone_vision") == 0);
    CHECK(frozen.count("prompts") == 1);
}

TEST_CASE("the kink guard skips coordinates whose perturbation flips an activation") {
    TrainConfig cfg = tiny_train();
    GradcheckOptions opt;
    opt.uniform_coords = 0;
    opt.nonzero_coords = 24;
    opt.step = 3e-2;  // large enough to cross ReLU kinks in the head
    opt.kink_guard = false;
    int flagged = 0;
    for (const auto& g : gradcheck(cfg, opt).groups) {
        CHECK(g.skipped_kinks == 0);
        for (const auto& c : g.flagged) {
            CHECK(c.crosses_kink);
            CHECK(c.rel_error > opt.tolerance);
        }
        flagged += static_cast<int>(g.flagged.size());
    }
    CHECK(flagged > 0);

    opt.kink_guard = true;
    int skipped = 0;
    for (const auto& g : gradcheck(cfg, opt).groups) {
        CHECK(g.flagged.empty());
        skipped += g.skipped_kinks;
    }
    CHECK(skipped > 0);

    CHECK(relative_error(1.0, 1.0, 1e-6) == 0.0);
    CHECK(relative_error(2.0, 1.0, 1e-6) == 0.5);
    CHECK(relative_error(0.0, 1e-9, 1e-6) == doctest::Approx(1e-3));
}
