#include "qcount/io.hpp"
#include "qcount/model.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include <unistd.h>

using namespace qcount;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("qcount_test_io_" + std::to_string(::getpid())) / name;
    fs::create_directories(dir);
    return dir;
}

std::vector<unsigned char> file_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

DensityMap random_density(int h, int w, std::uint64_t seed) {
    DensityMap d(h, w);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> u(0.0f, 2.0f);
    for (auto& v : d.values) v = u(rng);
    return d;
}

}  // namespace

TEST_CASE("QDM layout is bit-exact") {
    DensityMap d(2, 3);
    d.values = {0.0f, 1.0f, -2.5f, 3.25f, 1e-30f, 7.0f};
    const auto bytes = encode_qdm(d);
    REQUIRE(bytes.size() == 4 + 8 + 6 * 4);
    CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "QDM1");
    CHECK(bytes[4] == 2);
    CHECK(bytes[5] == 0);
    CHECK(bytes[8] == 3);
    // 1.0f = 0x3F800000, little-endian.
    CHECK(bytes[16] == 0x00);
    CHECK(bytes[17] == 0x00);
    CHECK(bytes[18] == 0x80);
    CHECK(bytes[19] == 0x3F);
    const auto back = decode_qdm(bytes);
    CHECK(back.height == 2);
    CHECK(back.width == 3);
    CHECK(std::memcmp(back.values.data(), d.values.data(), 6 * sizeof(float)) == 0);
}

TEST_CASE("QDM file round trip and corrupt input") {
    const auto dir = scratch("qdm");
    const DensityMap d = random_density(32, 32, 3);
    write_qdm((dir / "d.qdm").string(), d);
    const DensityMap r = read_qdm((dir / "d.qdm").string());
    CHECK(std::memcmp(r.values.data(), d.values.data(), d.values.size() * sizeof(float)) == 0);
    CHECK(file_bytes(dir / "d.qdm") == encode_qdm(d));

    auto bytes = encode_qdm(d);
    bytes[0] = 'X';
    CHECK_THROWS_AS(decode_qdm(bytes), IoError);
    bytes = encode_qdm(d);
    bytes.pop_back();
    CHECK_THROWS_AS(decode_qdm(bytes), IoError);
    CHECK_THROWS_AS(read_qdm((dir / "missing.qdm").string()), IoError);
}

TEST_CASE("PNG round trip is lossless for 8-bit images") {
    const auto dir = scratch("png");
    SceneSpec spec;
    spec.count = 9;
    spec.seed = 77;
    const Image img = gen_scene(spec).image;
    write_png_rgb((dir / "a.png").string(), img);
    const Image back = read_png_rgb((dir / "a.png").string());
    CHECK(back.height == img.height);
    CHECK(back.width == img.width);
    CHECK(back.data == img.data);
    CHECK_THROWS_AS(read_png_rgb((dir / "nothing.png").string()), IoError);
    std::ofstream((dir / "bad.png").string()) << "not a png";
    CHECK_THROWS_AS(read_png_rgb((dir / "bad.png").string()), IoError);
}

TEST_CASE("heatmaps are max-normalised") {
    const auto dir = scratch("heat");
    DensityMap d(4, 4);
    CHECK(heatmap_pixels(d) == std::vector<unsigned char>(16, 0));
    d.at(1, 2) = 0.5f;
    d.at(3, 3) = 0.25f;
    const auto px = heatmap_pixels(d);
    CHECK(px[6] == 255);
    CHECK(px[15] == 128);
    CHECK(*std::max_element(px.begin(), px.end()) == 255);

    write_heatmap_png((dir / "h.png").string(), d);
    int h = 0, w = 0;
    CHECK(read_png_gray((dir / "h.png").string(), h, w) == px);
    CHECK(h == 4);
    CHECK(w == 4);
}

TEST_CASE("manifests round trip through disk") {
    const auto dir = scratch("manifest");
    SplitSpec split{"train", {"circles", "squares"}, 4, 5, 12};
    const auto path = write_split(dir.string(), split);
    CHECK(fs::exists(path));
    const Manifest m = read_manifest(path);
    CHECK(m.split == "train");
    CHECK(m.density_size == 32);
    REQUIRE(m.entries.size() == 4u);
    const auto loaded = load_samples(m);
    const auto fresh = generate_split(split);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(loaded[i].id == fresh[i].id);
        CHECK(loaded[i].count == fresh[i].count);
        CHECK(loaded[i].category == fresh[i].category);
        CHECK(loaded[i].image.data == fresh[i].image.data);
        CHECK(loaded[i].density.values == fresh[i].density.values);
        CHECK(loaded[i].points == fresh[i].points);
    }

    auto j = nlohmann::json::parse(std::ifstream(path));
    j["scenes"][0]["count"] = 99;
    std::ofstream((dir / "broken.json").string()) << j.dump();
    CHECK_THROWS(read_manifest((dir / "broken.json").string()));
}

TEST_CASE("checkpoints restore bit-identical parameters and metadata") {
    const auto dir = scratch("ckpt");
    CountingModel<float> a(qtest::tiny_model(), 1);
    CountingModel<float> b(qtest::tiny_model(), 2);
    REQUIRE(a.params().hash() != b.params().hash());

    CheckpointMeta meta;
    meta.config = toy_config();
    meta.config.seed = 1234;
    meta.epoch = 7;
    meta.history.push_back({1, 0.5, 0.25, 3.0, 0.9, 4.5, 5.5});
    const auto path = (dir / "sub" / "a.ckpt").string();
    save_checkpoint(path, a.params(), meta);
    const auto loaded = load_checkpoint(path, b.params());
    CHECK(a.params().hash() == b.params().hash());
    for (std::size_t i = 0; i < a.params().size(); ++i) {
        const auto& pa = a.params()[i].value;
        const auto& pb = b.params()[i].value;
        REQUIRE(pa.size() == pb.size());
        CHECK(std::memcmp(pa.data(), pb.data(), sizeof(float) * static_cast<std::size_t>(pa.size())) == 0);
    }
    CHECK(loaded.epoch == 7);
    CHECK(loaded.config.seed == 1234);
    REQUIRE(loaded.history.size() == 1u);
    CHECK(loaded.history[0].val_mae == 4.5);
    CHECK(read_checkpoint_meta(path).epoch == 7);

    // Saving the restored store reproduces the file byte for byte.
    const auto again = (dir / "b.ckpt").string();
    save_checkpoint(again, b.params(), meta);
    CHECK(file_bytes(path) == file_bytes(again));

    // Precision conversion on load.
    CountingModel<double> d(qtest::tiny_model(), 3);
    load_checkpoint(path, d.params());
    CHECK(static_cast<float>(d.params()[0].value(0, 0)) == a.params()[0].value(0, 0));

    // Shape mismatch is rejected.
    auto other_cfg = qtest::tiny_model();
    other_cfg.decoder.width = 16;
    CountingModel<float> e(other_cfg, 1);
    CHECK_THROWS(load_checkpoint(path, e.params()));
    CHECK_THROWS(load_checkpoint((dir / "none.ckpt").string(), b.params()));
}
