#include "qcount/quantity.hpp"

#include <algorithm>
#include <string>

namespace qcount {

namespace {

void check_k(int K) {
    if (K < 1 || K % 2 == 0) throw std::invalid_argument("K must be odd and >= 1, got " + std::to_string(K));
}

}  // namespace

int make_delta(int n_gt, int K) {
    check_k(K);
    if (n_gt < 0) throw std::invalid_argument("n_gt must be nonnegative");
    if (K == 1) return 1;
    const int half = (K - 1) / 2;
    if (n_gt < half) return 1;
    const int relative = (n_gt + 2) / 5;  // round(0.2 * n_gt); ties cannot occur for integers
    const int symmetric_cap = (2 * n_gt) / (K - 1);
    return std::max(1, std::min(relative, symmetric_cap));
}

QuantityHypothesisSet make_hypotheses(int n_gt, int K) {
    QuantityHypothesisSet h;
    h.n_gt = n_gt;
    h.K = K;
    h.delta = make_delta(n_gt, K);
    h.quantities.push_back(n_gt);
    const int half = (K - 1) / 2;
    if (half == 0) return h;

    if (n_gt - half * h.delta < 0) {
        const int reduced = (2 * n_gt) / (K - 1);
        if (reduced >= 1) {
            h.delta = reduced;
        } else {
            h.one_sided = true;
            for (int i = 1; i < K; ++i) h.quantities.push_back(n_gt + i * h.delta);
            h.below_begin = h.below_end = 1;
            h.above_begin = 1;
            h.above_end = K;
            return h;
        }
    }
    for (int i = 1; i <= half; ++i) h.quantities.push_back(n_gt - i * h.delta);
    for (int i = 1; i <= half; ++i) h.quantities.push_back(n_gt + i * h.delta);
    h.below_begin = 1;
    h.below_end = 1 + half;
    h.above_begin = 1 + half;
    h.above_end = K;
    return h;
}

template <typename T>
QuantityEmbedder<T>::QuantityEmbedder(int max_count, int width, ParameterStore<T>& store, std::mt19937_64& rng)
    : max_count_(max_count) {
    table_ = &store.add("quantity.table", "quantity", init::normal<T>(max_count + 1, width, 0.02, rng));
    projection_ = Linear<T>::create(store, "quantity.projection", "quantity", width, width, rng, false);
}

template <typename T>
Var<T> QuantityEmbedder<T>::embed(ag::Graph<T>& g, int q) const {
    if (q < 0 || q > max_count_)
        throw QuantityRangeError("quantity " + std::to_string(q) + " outside [0, " + std::to_string(max_count_) + "]");
    return projection_(g, ag::gather_rows(g.param(*table_), {static_cast<Index>(q)}));
}

template class QuantityEmbedder<float>;
template class QuantityEmbedder<double>;

}  // namespace qcount
