#pragma once

#include "qcount/params.hpp"

#include <stdexcept>
#include <vector>

namespace qcount {

/// Factual and counterfactual counts for one image, ordered
/// [n_gt, below near->far, above near->far].
struct QuantityHypothesisSet {
    int n_gt = 0;
    int delta = 1;
    int K = 1;
    std::vector<int> quantities;
    bool one_sided = false;

    // Index ranges [begin, end) into `quantities`.
    int below_begin = 1, below_end = 1;
    int above_begin = 1, above_end = 1;

    std::vector<int> below_chain() const { return {quantities.begin() + below_begin, quantities.begin() + below_end}; }
    std::vector<int> above_chain() const { return {quantities.begin() + above_begin, quantities.begin() + above_end}; }
};

/// Count-dependent hypothesis spacing: 20% of the count, clamped so the
/// symmetric set stays nonnegative, never below 1.
int make_delta(int n_gt, int K);

QuantityHypothesisSet make_hypotheses(int n_gt, int K);

class QuantityRangeError : public std::out_of_range {
  public:
    using std::out_of_range::out_of_range;
};

/// Learned table over integer quantities followed by a linear projection
/// into the text width.
template <typename T>
class QuantityEmbedder {
  public:
    QuantityEmbedder(int max_count, int width, ParameterStore<T>& store, std::mt19937_64& rng);

    /// epsilon_q as a [1, d_t] row.
    Var<T> embed(ag::Graph<T>& g, int q) const;

    int max_count() const { return max_count_; }
    const Parameter<T>& table() const { return *table_; }
    const Linear<T>& projection() const { return projection_; }

  private:
    int max_count_;
    Parameter<T>* table_;
    Linear<T> projection_;
};

}  // namespace qcount
