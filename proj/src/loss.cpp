#include "qcount/loss.hpp"

#include <algorithm>
#include <stdexcept>

namespace qcount {

namespace {

template <typename T>
Var<T> scalar(ag::Graph<T>& g, double v) {
    Matrix<T> m(1, 1);
    m(0, 0) = static_cast<T>(v);
    return g.constant(std::move(m));
}

}  // namespace

template <typename T>
std::vector<Var<T>> alignment_scores(const std::vector<Var<T>>& globals, const std::vector<Var<T>>& texts) {
    if (globals.size() != texts.size()) throw std::invalid_argument("alignment_scores: one global token per hypothesis");
    std::vector<Var<T>> out;
    out.reserve(texts.size());
    for (std::size_t k = 0; k < texts.size(); ++k) out.push_back(ag::cosine_rows(globals[k], texts[k]));
    return out;
}

template <typename T>
Var<T> enc_quantity_loss(ag::Graph<T>& g, const std::vector<Var<T>>& alpha, const QuantityHypothesisSet& hyp) {
    const int K = static_cast<int>(alpha.size());
    if (K != hyp.K || static_cast<int>(hyp.quantities.size()) != K)
        throw std::invalid_argument("enc_quantity_loss: scores do not match the hypothesis set");
    if (K < 3) return scalar(g, 0.0);

    std::vector<Var<T>> dominance;
    for (int i = 1; i < K; ++i) dominance.push_back(ag::sub(alpha[i], alpha[0]));
    Var<T> loss = ag::scale(ag::sum_all(ag::relu(ag::concat_rows(dominance))), static_cast<T>(1.0 / (K - 1)));

    std::vector<Var<T>> chain;
    auto add_chain = [&](int begin, int end) {
        for (int i = begin; i + 1 < end; ++i) chain.push_back(ag::sub(alpha[i + 1], alpha[i]));
    };
    add_chain(hyp.below_begin, hyp.below_end);
    add_chain(hyp.above_begin, hyp.above_end);
    if (!chain.empty()) {
        const double norm = 1.0 / std::max(K - 3, 1);
        loss = loss + ag::scale(ag::sum_all(ag::relu(ag::concat_rows(chain))), static_cast<T>(norm));
    }
    return loss;
}

template <typename T>
Var<T> dec_quantity_loss(ag::Graph<T>& g, const std::vector<Var<T>>& counts, const QuantityHypothesisSet& hyp,
                         double beta) {
    if (counts.size() != hyp.quantities.size())
        throw std::invalid_argument("dec_quantity_loss: one count per hypothesis required");
    Var<T> loss = ag::sum_squares(ag::sub(counts[0], scalar(g, hyp.n_gt)));
    if (counts.size() == 1) return loss;
    std::vector<Var<T>> aux;
    for (std::size_t k = 1; k < counts.size(); ++k) aux.push_back(ag::sub(counts[k], scalar(g, hyp.quantities[k])));
    return loss + ag::scale(ag::sum_squares(ag::concat_rows(aux)), static_cast<T>(beta));
}

template <typename T>
Var<T> density_loss(ag::Graph<T>& g, const Var<T>& predicted, const DensityMap& target) {
    if (predicted.rows() != static_cast<Index>(target.height) * target.width || predicted.cols() != 1)
        throw std::invalid_argument("density_loss: resolution mismatch");
    Matrix<T> gt(predicted.rows(), 1);
    for (Index i = 0; i < gt.rows(); ++i) gt(i, 0) = static_cast<T>(target.values[static_cast<std::size_t>(i)]);
    return ag::sum_squares(ag::sub(predicted, g.constant(std::move(gt))));
}

template <typename T>
TotalLoss<T> total_loss(const Var<T>& density, const Var<T>& enc_qty, const Var<T>& dec_qty, const LossWeights& w) {
    TotalLoss<T> out;
    out.value = density + ag::scale(enc_qty, static_cast<T>(w.lambda_1)) + ag::scale(dec_qty, static_cast<T>(w.lambda_2));
    auto& b = out.breakdown;
    b.weights = w;
    b.density = static_cast<double>(density.item());
    b.enc_qty = static_cast<double>(enc_qty.item());
    b.dec_qty = static_cast<double>(dec_qty.item());
    b.total = b.density + w.lambda_1 * b.enc_qty + w.lambda_2 * b.dec_qty;
    return out;
}

#define QCOUNT_INSTANTIATE_LOSS(T)                                                                                 \
    template std::vector<Var<T>> alignment_scores(const std::vector<Var<T>>&, const std::vector<Var<T>>&);       \
    template Var<T> enc_quantity_loss(ag::Graph<T>&, const std::vector<Var<T>>&, const QuantityHypothesisSet&);   \
    template Var<T> dec_quantity_loss(ag::Graph<T>&, const std::vector<Var<T>>&, const QuantityHypothesisSet&,    \
                                      double);                                                                    \
    template Var<T> density_loss(ag::Graph<T>&, const Var<T>&, const DensityMap&);                               \
    template TotalLoss<T> total_loss(const Var<T>&, const Var<T>&, const Var<T>&, const LossWeights&);

QCOUNT_INSTANTIATE_LOSS(float)
QCOUNT_INSTANTIATE_LOSS(double)

}  // namespace qcount
