#pragma once

#include "qcount/image.hpp"
#include "qcount/params.hpp"
#include "qcount/quantity.hpp"

#include <vector>

namespace qcount {

struct LossWeights {
    double lambda_1 = 0.1;
    double lambda_2 = 0.05;
    double beta = 0.1;
};

/// Scalar summary of one objective evaluation. `total` is recomputed from
/// the parts so the decomposition identity holds exactly.
struct LossBreakdown {
    double density = 0;
    double enc_qty = 0;
    double dec_qty = 0;
    double total = 0;
    LossWeights weights;
};

template <typename T>
struct TotalLoss {
    Var<T> value;
    LossBreakdown breakdown;
};

/// alpha_k = cos(global_k, text_k) for every hypothesis, each [1,1].
template <typename T>
std::vector<Var<T>> alignment_scores(const std::vector<Var<T>>& globals, const std::vector<Var<T>>& texts);

/// Ranking hinge over alignment scores: the factual score must dominate
/// every counterfactual, and within each chain scores must not increase
/// with distance from the ground truth. Zero margin, relu'(0) = 0.
template <typename T>
Var<T> enc_quantity_loss(ag::Graph<T>& g, const std::vector<Var<T>>& alpha, const QuantityHypothesisSet& hyp);

/// (n_0 - n_gt)^2 + beta * sum_k (n_k - q_k)^2
template <typename T>
Var<T> dec_quantity_loss(ag::Graph<T>& g, const std::vector<Var<T>>& counts, const QuantityHypothesisSet& hyp,
                         double beta);

/// Sum of squared per-cell differences.
template <typename T>
Var<T> density_loss(ag::Graph<T>& g, const Var<T>& predicted, const DensityMap& target);

template <typename T>
TotalLoss<T> total_loss(const Var<T>& density, const Var<T>& enc_qty, const Var<T>& dec_qty, const LossWeights& w);

}  // namespace qcount
