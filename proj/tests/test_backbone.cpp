#include "qcount/backbone.hpp"
#include "qcount/data.hpp"
#include "test_util.hpp"

#include <doctest.h>

using namespace qcount;
using qtest::MatD;
using G = ag::Graph<double>;

namespace {

struct Encoders {
    ParameterStore<double> store;
    std::mt19937_64 rng{9};
    VocabTokenizer tok{{"circles", "squares"}, 40};
    TextEncoderConfig tcfg;
    VisionEncoderConfig vcfg;
    TextEncoder<double> text;
    VisionEncoder<double> vision;

    explicit Encoders(int text_layers = 3, int vision_layers = 3)
        : tcfg(make_text(text_layers)), vcfg(make_vision(vision_layers)), text(tcfg, tok.vocab_size(), store, rng),
          vision(vcfg, store, rng) {}

    static TextEncoderConfig make_text(int layers) {
        TextEncoderConfig c;
        c.num_layers = layers;
        c.prompt_depth = std::min(2, layers);
        return c;
    }
    static VisionEncoderConfig make_vision(int layers) {
        VisionEncoderConfig c;
        c.num_layers = layers;
        c.skip_stage_indices = {0, 1};
        return c;
    }
};

Image scene_image(int count = 5) {
    SceneSpec s;
    s.count = count;
    s.seed = 12;
    return gen_scene(s).image;
}

std::vector<Var<double>> grids(G& g, int depth, int m, int width, std::mt19937_64& rng) {
    std::vector<Var<double>> out;
    for (int j = 0; j < depth; ++j) out.push_back(g.constant(qtest::random_matrix(m, width, rng, 0.1)));
    return out;
}

}  // namespace

TEST_CASE("vision encoder shapes") {
    Encoders e;
    std::mt19937_64 rng(1);
    G g;
    const auto d = e.vision.encode(g, scene_image(), grids(g, 2, 2, 48, rng));
    CHECK(d.grid_h == 8);
    CHECK(d.grid_w == 8);
    CHECK(d.patches.rows() == 64);
    CHECK(d.patches.cols() == 48);
    CHECK(d.global.rows() == 1);
    CHECK(d.global.cols() == 48);
    REQUIRE(d.stages.size() == 2);
    for (const auto& s : d.stages) {
        CHECK(s.rows() == 64);
        CHECK(s.cols() == 48);
    }
    // Prompt rows never leak into the patch grid, whatever the prompt length.
    const auto longer = e.vision.encode(g, scene_image(), grids(g, 2, 5, 48, rng));
    CHECK(longer.patches.rows() == 64);
    CHECK(longer.stages[0].rows() == 64);
}

TEST_CASE("vision encoder responds to prompts and handles degenerate input") {
    Encoders e;
    std::mt19937_64 rng(2);
    G g;
    const Image img = scene_image();
    const auto a = e.vision.encode(g, img, grids(g, 2, 2, 48, rng));
    const auto b = e.vision.encode(g, img, grids(g, 2, 2, 48, rng));
    CHECK(a.patches.value() != b.patches.value());

    const auto zero = e.vision.encode(g, Image(64, 64, 0.0f), grids(g, 2, 2, 48, rng));
    CHECK(zero.patches.value().allFinite());
    CHECK(zero.global.value().allFinite());

    Image bad = img;
    bad.at(3, 3, 1) = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS(e.vision.encode(g, bad, {}));
    CHECK_THROWS(e.vision.encode(g, Image(60, 64, 0.0f), {}));
    CHECK_THROWS(e.vision.encode(g, img, grids(g, 2, 2, 47, rng)));
    CHECK_THROWS(e.vision.encode(g, img, grids(g, 4, 2, 48, rng)));
}

TEST_CASE("text encoder: shape, prompt sensitivity, zero prompts vs none") {
    Encoders e;
    std::mt19937_64 rng(3);
    G g;
    const auto tokens = e.tok.tokenize("a photo of 12 circles");
    auto p = grids(g, 2, 2, 32, rng);
    const auto a = e.text.encode(g, tokens, p);
    CHECK(a.rows() == 1);
    CHECK(a.cols() == 32);

    auto q = p;
    q[0] = g.constant(qtest::random_matrix(2, 32, rng, 0.1));
    CHECK(e.text.encode(g, tokens, q).value() != a.value());

    std::vector<Var<double>> zeros{g.constant(MatD::Zero(2, 32)), g.constant(MatD::Zero(2, 32))};
    CHECK(e.text.encode(g, tokens, zeros).value() != e.text.encode(g, tokens, {}).value());

    CHECK_THROWS(e.text.encode(g, tokens, grids(g, 2, 2, 31, rng)));
    CHECK_THROWS(e.text.encode(g, tokens, grids(g, 4, 2, 32, rng)));
}

TEST_CASE("text encoder output depends only on tokens up to the end position") {
    Encoders e;
    G g;
    auto a = e.tok.tokenize("a photo of circles");
    auto b = a;
    b.ids[6] = e.tok.id_of("squares");  // beyond the end-of-text position
    CHECK(e.text.encode(g, a, {}).value() == e.text.encode(g, b, {}).value());
}

TEST_CASE("encoders are deterministic") {
    Encoders e1, e2;
    std::mt19937_64 r1(4), r2(4);
    G g1, g2;
    const Image img = scene_image();
    CHECK(e1.vision.encode(g1, img, grids(g1, 2, 2, 48, r1)).patches.value() ==
          e2.vision.encode(g2, img, grids(g2, 2, 2, 48, r2)).patches.value());
    const auto tokens = e1.tok.tokenize("a photo of squares");
    CHECK(e1.text.encode(g1, tokens, {}).value() == e2.text.encode(g2, tokens, {}).value());
}

TEST_CASE("prompt gradients match finite differences") {
    Encoders e(2, 2);
    std::mt19937_64 rng(5);
    const Image img = scene_image();
    const auto tokens = e.tok.tokenize("a photo of 7 squares");
    const MatD other = qtest::random_matrix(2, 48, rng, 0.1);
    MatD vp = qtest::random_matrix(2, 48, rng, 0.1);
    const MatD probe_v = qtest::random_matrix(64, 48, rng);
    CHECK(qtest::fd_max_error(vp, [&](G& g, const Var<double>& v) {
              const auto d = e.vision.encode(g, img, {v, g.constant(other)});
              return ag::sum_all(ag::mul(d.patches, g.constant(probe_v)));
          }) < 1e-4);

    MatD tp = qtest::random_matrix(2, 32, rng, 0.1);
    const MatD tother = qtest::random_matrix(2, 32, rng, 0.1);
    const MatD probe_t = qtest::random_matrix(1, 32, rng);
    CHECK(qtest::fd_max_error(tp, [&](G& g, const Var<double>& v) {
              return ag::sum_all(ag::mul(e.text.encode(g, tokens, {g.constant(tother), v}), g.constant(probe_t)));
          }) < 1e-4);
}
