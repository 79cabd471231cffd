#include "qcount/model.hpp"
#include "qcount/data.hpp"
#include "test_util.hpp"

#include <doctest.h>

using namespace qcount;
using qtest::MatD;
using G = ag::Graph<double>;

namespace {

Image test_image() {
    SceneSpec s;
    s.count = 6;
    s.seed = 4;
    return gen_scene(s).image;
}

}  // namespace

TEST_CASE("conditioning adds the quantity embedding to every prompt row") {
    std::mt19937_64 rng(1);
    G g;
    std::vector<Var<double>> prompts;
    for (int j = 0; j < 3; ++j) prompts.push_back(g.constant(qtest::random_matrix(2, 32, rng)));
    const auto ea = g.constant(qtest::random_matrix(1, 32, rng));
    const auto eb = g.constant(qtest::random_matrix(1, 32, rng));
    const auto a = condition_prompts(prompts, ea);
    const auto b = condition_prompts(prompts, eb);
    const auto zero = condition_prompts(prompts, g.constant(MatD::Zero(1, 32)));
    REQUIRE(a.size() == 3);
    for (std::size_t j = 0; j < 3; ++j) {
        CHECK(zero[j].value() == prompts[j].value());
        for (Index r = 0; r < 2; ++r) {
            CHECK(MatD(a[j].value().row(r)) == MatD(prompts[j].value().row(r) + ea.value()));
            const MatD diff = a[j].value().row(r) - b[j].value().row(r);
            CHECK((diff - (ea.value() - eb.value())).cwiseAbs().maxCoeff() < 1e-14);
        }
    }
    CHECK_THROWS(condition_prompts(prompts, g.constant(MatD::Zero(1, 31))));
}

TEST_CASE("coupling maps text prompts to vision width, row by row") {
    ParameterStore<double> store;
    std::mt19937_64 rng(2);
    auto stack = CouplingStack<double>::create(store, 3, 32, 48, rng);
    G g;
    std::vector<Var<double>> prompts;
    for (int j = 0; j < 3; ++j) prompts.push_back(g.constant(qtest::random_matrix(2, 32, rng)));
    const auto out = couple_prompts(g, prompts, stack);
    REQUIRE(out.size() == 3);
    for (const auto& o : out) {
        CHECK(o.rows() == 2);
        CHECK(o.cols() == 48);
    }

    // Zero weight: every row equals the bias.
    stack.maps[1].weight->value.setZero();
    stack.maps[1].bias->value = qtest::random_matrix(1, 48, rng);
    G g2;
    const auto degenerate = couple_prompts(g2, prompts, stack);
    for (Index r = 0; r < 2; ++r) CHECK(MatD(degenerate[1].value().row(r)) == stack.maps[1].bias->value);

    CHECK_THROWS(couple_prompts(g, std::vector<Var<double>>(prompts.begin(), prompts.begin() + 2), stack));
}

TEST_CASE("category projection starts as the identity and has correct gradients") {
    ParameterStore<double> store;
    auto proj = CategoryProjector<double>::create(store, 32);
    std::mt19937_64 rng(5);
    const MatD x = qtest::random_matrix(1, 32, rng);
    G g;
    const auto y = category_project(g, g.constant(x), proj);
    CHECK(y.value() == x);
    CHECK(y.cols() == 32);

    proj.map.weight->value += qtest::random_matrix(32, 32, rng, 0.1);
    CHECK(qtest::fd_param_error(*proj.map.weight, [&](G& gg) {
              return ag::sum_squares(category_project(gg, gg.constant(x), proj));
          }) < 1e-6);
    CHECK(qtest::fd_param_error(*proj.map.bias, [&](G& gg) {
              return ag::sum_squares(category_project(gg, gg.constant(x), proj));
          }) < 1e-6);
}

TEST_CASE("a vision-only loss sends gradient into the text prompts through the coupling") {
    CountingModel<double> model(qtest::tiny_model(), 3);
    const Image img = test_image();
    G g;
    const auto prompts = model.prompt_bank().bind(g);
    const auto dense = model.vision_encoder().encode(g, img, couple_prompts(g, prompts, model.coupling()));
    g.backward(ag::sum_squares(dense.patches));
    for (const auto* p : model.prompt_bank().layers) {
        const MatD* grad = g.param_grad(*p);
        REQUIRE(grad != nullptr);
        CHECK(grad->norm() > 0.0);
    }
}

TEST_CASE("training-path forwards differ across hypotheses") {
    CountingModel<double> model(qtest::tiny_model(), 3);
    const Image img = test_image();
    G g;
    const auto a = model.forward_hypothesis(g, img, "circles", 6, 0);
    const auto b = model.forward_hypothesis(g, img, "circles", 8, 1);
    REQUIRE(a.text_full.has_value());
    CHECK(a.text_full->value() != b.text_full->value());
    CHECK(a.text_cat.value() != b.text_cat.value());
    CHECK(a.dense.patches.value() != b.dense.patches.value());
    CHECK(a.dense.global.value() != b.dense.global.value());
    CHECK(b.hypothesis_index == 1);
}

TEST_CASE("inference path: no quantity module is touched") {
    CountingModel<double> model(qtest::tiny_model(), 3);
    const Image img = test_image();
    model.counters.reset();
    G g;
    const auto pair = model.forward_inference(g, img, "a photo of circles");
    const auto out = model.decode(g, pair);
    CHECK_FALSE(pair.text_full.has_value());
    CHECK(model.counters.embed_quantity == 0);
    CHECK(model.counters.category_project == 0);
    CHECK(model.counters.forward_inference == 1);

    g.backward(ag::sum_squares(out.density));
    CHECK_FALSE(g.was_bound(model.quantity_embedder().table()));
    CHECK_FALSE(g.was_bound(*model.category_projector().map.weight));
    CHECK(g.param_grad(model.quantity_embedder().table()) == nullptr);
    CHECK(g.param_grad(*model.category_projector().map.weight) == nullptr);
    CHECK(g.param_grad(*model.category_projector().map.bias) == nullptr);

    CHECK_THROWS_AS(model.forward_inference(g, img, "a photo of 7 circles"), ValidationError);
}

TEST_CASE("inference path equals the training path with zero quantity and no category projection") {
    CountingModel<double> model(qtest::tiny_model(), 3);
    const Image img = test_image();
    G g;
    const auto inf = model.forward_inference(g, img, "a photo of circles");

    // Rebuild the training pipeline by hand with epsilon = 0 on the vision
    // branch and the raw text encoding on the text branch.
    const auto zero = g.constant(MatD::Zero(1, model.config().text.width));
    const auto conditioned = condition_prompts(model.prompt_bank().bind(g), zero);
    const auto dense = model.vision_encoder().encode(g, img, couple_prompts(g, conditioned, model.coupling()));
    const auto text = model.text_encoder().encode(g, model.tokenizer().tokenize("a photo of circles"), conditioned);
    CHECK(inf.text_cat.value() == text.value());
    CHECK(inf.dense.patches.value() == dense.patches.value());
    CHECK(inf.dense.global.value() == dense.global.value());
}
