#include "qcount/loss.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <algorithm>
#include <numeric>

using namespace qcount;
using qtest::MatD;
using G = ag::Graph<double>;

namespace {

std::vector<Var<double>> scalars(G& g, const std::vector<double>& v) {
    std::vector<Var<double>> out;
    for (double x : v) out.push_back(g.constant(MatD::Constant(1, 1, x)));
    return out;
}

double enc_loss(const std::vector<double>& alpha, const QuantityHypothesisSet& h) {
    G g;
    return enc_quantity_loss(g, scalars(g, alpha), h).item();
}

// Brute-force hinge evaluator written from the layout [factual, below
// near->far, above near->far] (or a single chain when one-sided).
double hinge_oracle(const std::vector<double>& a, bool one_sided) {
    const int K = static_cast<int>(a.size());
    if (K < 3) return 0.0;
    double dom = 0;
    for (int i = 1; i < K; ++i) dom += std::max(0.0, a[i] - a[0]);
    std::vector<std::vector<int>> chains;
    if (one_sided) {
        chains.push_back({});
        for (int i = 1; i < K; ++i) chains.back().push_back(i);
    } else {
        const int half = (K - 1) / 2;
        chains.assign(2, {});
        for (int i = 0; i < half; ++i) {
            chains[0].push_back(1 + i);
            chains[1].push_back(1 + half + i);
        }
    }
    double chain = 0;
    bool any_pair = false;
    for (const auto& c : chains)
        for (std::size_t i = 0; i + 1 < c.size(); ++i) {
            chain += std::max(0.0, a[c[i + 1]] - a[c[i]]);
            any_pair = true;
        }
    double total = dom / (K - 1);
    if (any_pair) total += chain / std::max(K - 3, 1);
    return total;
}

bool correctly_ordered(const std::vector<double>& a, const QuantityHypothesisSet& h) {
    for (std::size_t i = 1; i < a.size(); ++i)
        if (a[i] > a[0]) return false;
    for (auto [b, e] : {std::pair{h.below_begin, h.below_end}, std::pair{h.above_begin, h.above_end}})
        for (int i = b; i + 1 < e; ++i)
            if (a[static_cast<std::size_t>(i + 1)] > a[static_cast<std::size_t>(i)]) return false;
    return true;
}

}  // namespace

TEST_CASE("encoder ranking loss: worked examples") {
    const auto h = make_hypotheses(50, 5);
    CHECK(enc_loss({0.9, 0.5, 0.3, 0.5, 0.3}, h) == 0.0);
    CHECK(enc_loss({0.5, 0.9, 0.3, 0.4, 0.3}, h) == doctest::Approx(0.1).epsilon(1e-15));
    // Chain violation only: below chain rises with distance.
    CHECK(enc_loss({0.9, 0.3, 0.5, 0.4, 0.3}, h) == doctest::Approx(0.2 / 2).epsilon(1e-15));
    CHECK(enc_loss({0.1}, make_hypotheses(50, 1)) == 0.0);
}

TEST_CASE("encoder ranking loss matches the brute-force hinge evaluator") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int K : {3, 5, 7}) {
        for (const int n : {40, 1}) {
            const auto h = make_hypotheses(n, K);
            for (int trial = 0; trial < 1000; ++trial) {
                std::vector<double> a(static_cast<std::size_t>(K));
                for (auto& x : a) x = u(rng);
                const double got = enc_loss(a, h);
                CHECK(std::abs(got - hinge_oracle(a, h.one_sided)) <= 1e-12);
                CHECK(got >= 0.0);
                CHECK((got == 0.0) == correctly_ordered(a, h));
            }
        }
    }
}

TEST_CASE("encoder ranking loss is zero on every correctly ordered arrangement") {
    const auto h = make_hypotheses(50, 5);
    std::vector<double> values{0.9, 0.7, 0.5, 0.3, 0.1};
    std::vector<int> perm{0, 1, 2, 3, 4};
    int zeros = 0;
    do {
        std::vector<double> a(5);
        for (int i = 0; i < 5; ++i) a[static_cast<std::size_t>(i)] = values[static_cast<std::size_t>(perm[i])];
        const double l = enc_loss(a, h);
        CHECK((l == 0.0) == correctly_ordered(a, h));
        zeros += l == 0.0;
    } while (std::next_permutation(perm.begin(), perm.end()));
    // Factual fixed at the top, then choose which two of the remaining four
    // go to the below chain; each chain is forced to descend.
    CHECK(zeros == 6);
}

TEST_CASE("decoder quantity loss") {
    const auto h = make_hypotheses(50, 5);
    G g;
    CHECK(dec_quantity_loss(g, scalars(g, {50, 40, 30, 60, 70}), h, 0.1).item() == 0.0);
    CHECK(dec_quantity_loss(g, scalars(g, {52, 40, 30, 60, 70}), h, 0.1).item() == doctest::Approx(4.0));
    CHECK(dec_quantity_loss(g, scalars(g, {52, 41, 30, 60, 72}), h, 0.0).item() == doctest::Approx(4.0));
    CHECK(dec_quantity_loss(g, scalars(g, {52, 41, 30, 60, 72}), h, 0.1).item() == doctest::Approx(4.5));
    CHECK_THROWS(dec_quantity_loss(g, scalars(g, {1, 2}), h, 0.1));

    // Consistent permutation of the auxiliary hypotheses.
    std::mt19937_64 rng(2);
    const std::vector<double> counts{48.5, 37.0, 33.2, 61.0, 65.5};
    QuantityHypothesisSet p = h;
    std::vector<double> pc = counts;
    std::vector<std::size_t> order{1, 2, 3, 4};
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t i = 0; i < 4; ++i) {
        p.quantities[i + 1] = h.quantities[order[i]];
        pc[i + 1] = counts[order[i]];
    }
    CHECK(dec_quantity_loss(g, scalars(g, pc), p, 0.1).item() ==
          doctest::Approx(dec_quantity_loss(g, scalars(g, counts), h, 0.1).item()).epsilon(1e-14));
}

TEST_CASE("density loss is the sum of squared differences") {
    DensityMap target(4, 4);
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    for (auto& v : target.values) v = u(rng);
    MatD pred(16, 1);
    for (int i = 0; i < 16; ++i) pred(i, 0) = target.values[static_cast<std::size_t>(i)];
    G g;
    CHECK(density_loss(g, g.constant(pred), target).item() == 0.0);
    pred(5, 0) += 3.0;
    CHECK(density_loss(g, g.constant(pred), target).item() == doctest::Approx(9.0).epsilon(1e-12));

    const MatD noisy = qtest::random_matrix(16, 1, rng);
    double oracle = 0;
    for (int i = 0; i < 16; ++i) {
        const double d = noisy(i, 0) - static_cast<double>(target.values[static_cast<std::size_t>(i)]);
        oracle += d * d;
    }
    CHECK(std::abs(density_loss(g, g.constant(noisy), target).item() - oracle) <= 1e-9 * oracle);
    CHECK_THROWS(density_loss(g, g.constant(MatD::Zero(15, 1)), target));
}

TEST_CASE("total loss weighting and decomposition") {
    G g;
    const auto parts = scalars(g, {1.0, 2.0, 4.0});
    const auto t = total_loss(parts[0], parts[1], parts[2], LossWeights{});
    CHECK(t.value.item() == doctest::Approx(1.4).epsilon(1e-15));
    CHECK(t.breakdown.total == t.breakdown.density + 0.1 * t.breakdown.enc_qty + 0.05 * t.breakdown.dec_qty);
    const auto plain = total_loss(parts[0], parts[1], parts[2], LossWeights{0.0, 0.0, 0.1});
    CHECK(plain.value.item() == 1.0);
    CHECK(plain.breakdown.total == 1.0);
}

TEST_CASE("alignment scores and ranking loss gradients match finite differences") {
    std::mt19937_64 rng(8);
    const int K = 5;
    const auto h = make_hypotheses(30, K);
    std::vector<MatD> texts;
    for (int k = 0; k < K; ++k) texts.push_back(qtest::random_matrix(1, 12, rng));
    MatD globals = qtest::random_matrix(K, 12, rng);
    const double err = qtest::fd_max_error(globals, [&](G& g, const Var<double>& v) {
        std::vector<Var<double>> gs, ts;
        for (int k = 0; k < K; ++k) {
            gs.push_back(ag::slice_rows(v, k, 1));
            ts.push_back(g.constant(texts[static_cast<std::size_t>(k)]));
        }
        const auto alpha = alignment_scores(gs, ts);
        CHECK(alpha.size() == static_cast<std::size_t>(K));
        return enc_quantity_loss(g, alpha, h);
    });
    CHECK(err < 1e-6);
}
