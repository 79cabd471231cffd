#pragma once

#include "qcount/autograd.hpp"
#include "qcount/config.hpp"
#include "qcount/params.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

namespace qtest {

using qcount::Index;
using MatD = qcount::Matrix<double>;

inline MatD random_matrix(Index rows, Index cols, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> d(0.0, scale);
    MatD m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = d(rng);
    return m;
}

inline double rel_err(double a, double n) {
    return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-6});
}

/// Max relative error between the analytic gradient of a scalar function of
/// `x` and central differences, over every coordinate of `x`.
inline double fd_max_error(MatD& x, const std::function<qcount::Var<double>(qcount::ag::Graph<double>&,
                                                                            const qcount::Var<double>&)>& f,
                           double h = 1e-5) {
    qcount::ag::Graph<double> g;
    const auto xv = g.variable(x);
    const auto y = f(g, xv);
    g.backward(y);
    const MatD grad = xv.grad().size() ? xv.grad() : MatD::Zero(x.rows(), x.cols());
    double worst = 0;
    for (Index i = 0; i < x.size(); ++i) {
        const double orig = x.data()[i];
        auto eval = [&](double v) {
            x.data()[i] = v;
            qcount::ag::Graph<double> g2(false);
            return f(g2, g2.constant(x)).item();
        };
        const double num = (eval(orig + h) - eval(orig - h)) / (2 * h);
        x.data()[i] = orig;
        worst = std::max(worst, rel_err(grad.data()[i], num));
    }
    return worst;
}

/// Same check against a parameter, on a random subset of coordinates.
inline double fd_param_error(qcount::Parameter<double>& p,
                             const std::function<qcount::Var<double>(qcount::ag::Graph<double>&)>& f,
                             int max_coords = 48, double h = 1e-5, std::uint64_t seed = 1) {
    MatD grad;
    {
        qcount::ag::Graph<double> g;
        const auto y = f(g);
        g.backward(y);
        const MatD* gp = g.param_grad(p);
        grad = gp ? *gp : MatD::Zero(p.value.rows(), p.value.cols());
    }
    std::vector<Index> idx(static_cast<std::size_t>(p.value.size()));
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<Index>(i);
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    if (static_cast<int>(idx.size()) > max_coords) idx.resize(static_cast<std::size_t>(max_coords));
    double worst = 0;
    for (Index i : idx) {
        const double orig = p.value.data()[i];
        auto eval = [&](double v) {
            p.value.data()[i] = v;
            qcount::ag::Graph<double> g2(false);
            return f(g2).item();
        };
        const double num = (eval(orig + h) - eval(orig - h)) / (2 * h);
        p.value.data()[i] = orig;
        worst = std::max(worst, rel_err(grad.data()[i], num));
    }
    return worst;
}

/// Small model configuration for fast unit tests.
inline qcount::ModelConfig tiny_model() {
    qcount::ModelConfig m;
    m.text.num_layers = 2;
    m.text.prompt_depth = 2;
    m.vision.num_layers = 3;
    m.vision.skip_stage_indices = {0, 1};
    m.max_count = 64;
    m.head_bias_init = 0.02;
    m.head_weight_scale = 0.05;
    return m;
}

}  // namespace qtest
