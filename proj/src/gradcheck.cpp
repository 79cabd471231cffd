#include "qcount/gradcheck.hpp"

#include "qcount/data.hpp"
#include "qcount/model.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

namespace qcount {

using nlohmann::json;

double relative_error(double analytic, double numeric, double floor) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

json GradcheckReport::to_json() const {
    json groups_json = json::array();
    for (const auto& g : groups) {
        json flagged = json::array();
        for (const auto& c : g.flagged)
            flagged.push_back({{"parameter", c.parameter},
                               {"index", c.index},
                               {"analytic", c.analytic},
                               {"numeric", c.numeric},
                               {"rel_error", c.rel_error}});
        groups_json.push_back({{"group", g.group},
                               {"checked", g.checked},
                               {"skipped_kinks", g.skipped_kinks},
                               {"flagged_kinks", flagged},
                               {"max_rel_error", g.max_rel_error},
                               {"worst",
                                {{"parameter", g.worst.parameter},
                                 {"index", g.worst.index},
                                 {"analytic", g.worst.analytic},
                                 {"numeric", g.worst.numeric}}},
                               {"pass", g.pass}});
    }
    return {{"pass", pass}, {"seconds", seconds}, {"groups", groups_json}};
}

namespace {

struct Coordinate {
    Parameter<double>* param;
    long index;
    double analytic;
};

}  // namespace

GradcheckReport gradcheck(const TrainConfig& cfg, const GradcheckOptions& opt) {
    const auto t0 = std::chrono::steady_clock::now();
    cfg.validate();
    const ModelConfig mcfg = cfg.resolved_model();
    CountingModel<double> model(mcfg, cfg.seed);
    auto& store = model.params();

    SceneSpec spec;
    spec.category = mcfg.categories.front();
    spec.count = opt.scene_count;
    spec.height = spec.width = mcfg.vision.image_size;
    spec.seed = opt.seed + 17;
    const Sample sample = make_sample(spec, mcfg.density_size(), cfg.density_sigma, "gradcheck");
    const ObjectiveOptions objective = ObjectiveOptions::from(cfg);

    auto evaluate = [&](std::uint64_t& signature) {
        ag::Graph<double> g(false);
        const auto obj = model.objective(g, sample.image, sample.density, sample.category, sample.count, objective);
        signature = g.pattern_signature();
        return obj.loss.value.item();
    };

    std::uint64_t base_signature = 0;
    std::vector<Matrix<double>> grads(store.size());
    {
        ag::Graph<double> g;
        const auto obj = model.objective(g, sample.image, sample.density, sample.category, sample.count, objective);
        base_signature = g.pattern_signature();
        g.backward(obj.loss.value);
        for (std::size_t i = 0; i < store.size(); ++i) {
            const Matrix<double>* grad = g.param_grad(store[i]);
            grads[i] = grad ? *grad : Matrix<double>::Zero(store[i].value.rows(), store[i].value.cols());
        }
    }

    std::mt19937_64 rng(opt.seed);
    GradcheckReport report;
    for (const auto& group : store.groups()) {
        std::vector<Coordinate> all, nonzero;
        for (std::size_t i = 0; i < store.size(); ++i) {
            auto& p = store[i];
            if (p.group != group || !p.trainable) continue;
            for (long k = 0; k < static_cast<long>(p.value.size()); ++k) {
                const double a = grads[i].data()[k];
                all.push_back({&p, k, a});
                if (a != 0.0) nonzero.push_back({&p, k, a});
            }
        }
        if (all.empty()) continue;

        // Uniform draw plus a draw among nonzero gradients, without repeats.
        std::set<std::pair<const Parameter<double>*, long>> taken;
        std::vector<Coordinate> picked;
        auto draw = [&](const std::vector<Coordinate>& pool, int n) {
            const int want = std::min<int>(n, static_cast<int>(pool.size()));
            std::vector<std::size_t> idx(pool.size());
            std::iota(idx.begin(), idx.end(), std::size_t{0});
            std::shuffle(idx.begin(), idx.end(), rng);
            int added = 0;
            for (std::size_t i = 0; i < idx.size() && added < want; ++i) {
                const auto& c = pool[idx[i]];
                if (taken.insert({c.param, c.index}).second) {
                    picked.push_back(c);
                    ++added;
                }
            }
        };
        draw(all, opt.uniform_coords);
        draw(nonzero, opt.nonzero_coords);

        GroupReport gr;
        gr.group = group;
        for (const auto& c : picked) {
            double& value = c.param->value.data()[c.index];
            const double original = value;
            // Fourth-order central stencil at offsets -2h, -h, +h, +2h.
            double f[4];
            bool crosses = false;
            const double offsets[4] = {-2.0, -1.0, 1.0, 2.0};
            for (int s = 0; s < 4; ++s) {
                std::uint64_t sig = 0;
                value = original + offsets[s] * opt.step;
                f[s] = evaluate(sig);
                crosses = crosses || sig != base_signature;
            }
            value = original;

            CoordinateCheck check;
            check.parameter = c.param->name;
            check.index = c.index;
            check.analytic = c.analytic;
            check.numeric = (f[0] - 8.0 * f[1] + 8.0 * f[2] - f[3]) / (12.0 * opt.step);
            check.rel_error = relative_error(check.analytic, check.numeric, opt.floor);
            check.crosses_kink = crosses;
            ++gr.checked;

            if (check.crosses_kink && opt.kink_guard) {
                ++gr.skipped_kinks;
                continue;
            }
            if (check.crosses_kink && check.rel_error > opt.tolerance) gr.flagged.push_back(check);
            if (check.rel_error >= gr.max_rel_error) {
                gr.max_rel_error = check.rel_error;
                gr.worst = check;
            }
        }
        gr.pass = gr.max_rel_error < opt.tolerance;
        report.pass = report.pass && gr.pass;
        report.groups.push_back(std::move(gr));
    }
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

}  // namespace qcount
