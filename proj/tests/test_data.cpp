#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <set>

#include "vitok/data.hpp"

using namespace vitok;
namespace fs = std::filesystem;

namespace {

double mean_abs_grad(const Tensor& t) {
    int n = t.dim(0), H = t.dim(1), W = t.dim(2);
    double acc = 0;
    long long cnt = 0;
    auto at = [&](int i, int y, int x, int c) {
        return t.data()[((static_cast<size_t>(i) * H + y) * W + x) * 3 + c];
    };
    for (int i = 0; i < n; ++i)
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    if (x + 1 < W) acc += std::abs(at(i, y, x + 1, c) - at(i, y, x, c)), ++cnt;
                    if (y + 1 < H) acc += std::abs(at(i, y + 1, x, c) - at(i, y, x, c)), ++cnt;
                }
    return acc / static_cast<double>(cnt);
}

struct TempDir {
    fs::path p;
    TempDir(const std::string& name) : p(fs::temp_directory_path() / name) {
        fs::remove_all(p);
        fs::create_directories(p);
    }
    ~TempDir() { fs::remove_all(p); }
};

}  // namespace

TEST_CASE("synthetic images deterministic and in range", "[data]") {
    for (const char* kind :
         {"synthetic-textures", "synthetic-gradients", "synthetic-shapes"}) {
        Tensor a = synth_images(kind, 4, 16, 16, 9);
        Tensor b = synth_images(kind, 4, 16, 16, 9);
        INFO(kind);
        CHECK(bitwise_equal(a, b));
        CHECK_FALSE(bitwise_equal(a, synth_images(kind, 4, 16, 16, 10)));
        double lo = 1e9, hi = -1e9;
        for (size_t i = 0; i < a.numel(); ++i) {
            lo = std::min(lo, a.data()[i]);
            hi = std::max(hi, a.data()[i]);
        }
        CHECK(lo >= -1.0);
        CHECK(hi <= 1.0);
    }
    CHECK_THROWS_AS(synth_images("plasma", 1, 8, 8, 0), std::invalid_argument);
    CHECK_THROWS_AS(synth_images("synthetic-textures", 0, 8, 8, 0), std::invalid_argument);
}

TEST_CASE("texture fields peak at one per channel", "[data]") {
    Tensor t = synth_images("synthetic-textures", 3, 16, 16, 21);
    for (int i = 0; i < 3; ++i)
        for (int c = 0; c < 3; ++c) {
            double peak = 0;
            for (int p = 0; p < 16 * 16; ++p)
                peak = std::max(peak, std::abs(t.data()[(static_cast<size_t>(i) * 256 + p) * 3 + c]));
            CHECK(peak == 1.0);
        }
}

TEST_CASE("kinds ordered by high-frequency content", "[data]") {
    Tensor tex = synth_images("synthetic-textures", 16, 16, 16, 1);
    Tensor gra = synth_images("synthetic-gradients", 16, 16, 16, 1);
    Tensor shp = synth_images("synthetic-shapes", 16, 16, 16, 1);
    double g_tex = mean_abs_grad(tex), g_gra = mean_abs_grad(gra), g_shp = mean_abs_grad(shp);
    CHECK(g_tex > g_gra);
    CHECK(g_shp > g_gra);
}

TEST_CASE("shapes are anti-aliased", "[data]") {
    // Hard-edged rendering of a few flat sprites would produce a handful of
    // distinct values; coverage blending produces a continuum at the rims.
    Tensor shp = synth_images("synthetic-shapes", 4, 16, 16, 3);
    std::set<double> vals(shp.data(), shp.data() + shp.numel());
    CHECK(vals.size() > 100);
}

TEST_CASE("static video repeats frame zero", "[data]") {
    Tensor v = synth_video(3, 5, 16, 16, 11, "static");
    REQUIRE(v.shape() == Shape{3, 5, 16, 16, 3});
    long long fe = 16 * 16 * 3;
    for (int k = 0; k < 3; ++k)
        for (int t = 1; t < 5; ++t)
            for (long long j = 0; j < fe; ++j)
                REQUIRE(v.data()[(k * 5 + t) * fe + j] == v.data()[k * 5 * fe + j]);
    CHECK(bitwise_equal(v, synth_video(3, 5, 16, 16, 11, "static")));
}

TEST_CASE("drift at zero speed is static", "[data]") {
    Tensor s = synth_video(3, 5, 16, 16, 13, "static");
    Tensor d0 = synth_video(3, 5, 16, 16, 13, "drift", 0.0);
    CHECK(bitwise_equal(s, d0));

    Tensor d = synth_video(3, 5, 16, 16, 13, "drift");
    double l2 = 0;
    long long fe = 16 * 16 * 3;
    for (int k = 0; k < 3; ++k)
        for (int t = 1; t < 5; ++t)
            for (long long j = 0; j < fe; ++j) {
                double diff = d.data()[(k * 5 + t) * fe + j] - d.data()[(k * 5 + t - 1) * fe + j];
                l2 += diff * diff;
            }
    CHECK(l2 > 0.0);
    CHECK_THROWS_AS(synth_video(1, 2, 8, 8, 0, "teleport"), std::invalid_argument);
}

TEST_CASE("ppm byte roundtrip", "[data]") {
    TempDir td("vitok_ppm_test");

    // 2x2 all-white: 255 maps to exactly 1.
    std::string white = "P6\n2 2\n255\n";
    white.append(12, static_cast<char>(0xFF));
    std::ofstream((td.p / "white.ppm").string(), std::ios::binary) << white;
    Tensor w = load_ppm((td.p / "white.ppm").string());
    REQUIRE(w.shape() == Shape{2, 2, 3});
    for (size_t i = 0; i < w.numel(); ++i) CHECK(w.data()[i] == 1.0);

    // decode -> encode reproduces the file bytewise.
    std::string varied = "P6\n3 2\n255\n";
    for (int i = 0; i < 18; ++i) varied += static_cast<char>((i * 37 + 11) % 256);
    std::ofstream((td.p / "varied.ppm").string(), std::ios::binary) << varied;
    Tensor v = load_ppm((td.p / "varied.ppm").string());
    save_ppm((td.p / "back.ppm").string(), v);
    std::ifstream back((td.p / "back.ppm").string(), std::ios::binary);
    std::string again((std::istreambuf_iterator<char>(back)), std::istreambuf_iterator<char>());
    CHECK(again == varied);

    // comments in the header are allowed
    std::string commented = "P6\n# made by hand\n2 1\n255\n";
    commented.append(6, static_cast<char>(0));
    std::ofstream((td.p / "c.ppm").string(), std::ios::binary) << commented;
    Tensor c = load_ppm((td.p / "c.ppm").string());
    for (size_t i = 0; i < c.numel(); ++i) CHECK(c.data()[i] == -1.0);
}

TEST_CASE("ppm rejects malformed files", "[data]") {
    TempDir td("vitok_ppm_bad");
    auto put = [&](const std::string& name, const std::string& bytes) {
        std::ofstream((td.p / name).string(), std::ios::binary) << bytes;
        return (td.p / name).string();
    };
    CHECK_THROWS_AS(load_ppm(put("p5.ppm", "P5\n2 2\n255\n....")), std::runtime_error);
    CHECK_THROWS_AS(load_ppm(put("max.ppm", "P6\n2 2\n65535\n" + std::string(24, 'x'))),
                    std::runtime_error);
    CHECK_THROWS_AS(load_ppm(put("trunc.ppm", "P6\n4 4\n255\nxy")), std::runtime_error);
    CHECK_THROWS_AS(load_ppm(put("junk.ppm", "P6\nab cd\n255\n")), std::runtime_error);
    CHECK_THROWS_AS(load_ppm((td.p / "absent.ppm").string()), std::runtime_error);
}

TEST_CASE("image directory loading", "[data]") {
    TempDir td("vitok_dir_test");
    Tensor imgs = synth_images("synthetic-shapes", 3, 8, 8, 5);
    for (int i = 0; i < 3; ++i) {
        Tensor one({8, 8, 3});
        std::copy(imgs.data() + i * one.numel(), imgs.data() + (i + 1) * one.numel(), one.data());
        save_ppm((td.p / ("img_" + std::to_string(i) + ".ppm")).string(), one);
    }
    Tensor loaded = load_images(td.p.string());
    REQUIRE(loaded.shape() == Shape{3, 8, 8, 3});
    // quantization error stays under one step of the 8-bit grid
    for (size_t i = 0; i < loaded.numel(); ++i)
        CHECK(std::abs(loaded.data()[i] - imgs.data()[i]) <= 1.0 / 255.0);

    TempDir empty("vitok_dir_empty");
    CHECK_THROWS_AS(load_images(empty.p.string()), std::runtime_error);
    CHECK_THROWS_AS(load_images((td.p / "nope").string()), std::runtime_error);

    save_ppm((td.p / "odd.ppm").string(), Tensor::zeros({4, 4, 3}));
    CHECK_THROWS_AS(load_images(td.p.string()), std::runtime_error);
}

TEST_CASE("video directory roundtrip", "[data]") {
    TempDir td("vitok_vid_test");
    Tensor clips = synth_video(2, 3, 8, 8, 19, "drift");
    save_video(td.p.string(), clips);
    CHECK(fs::exists(td.p / "clip_0" / "frame_0.ppm"));
    CHECK(fs::exists(td.p / "clip_1" / "frame_2.ppm"));
    Tensor loaded = load_video(td.p.string());
    REQUIRE(loaded.shape() == clips.shape());
    for (size_t i = 0; i < loaded.numel(); ++i)
        CHECK(std::abs(loaded.data()[i] - clips.data()[i]) <= 1.0 / 255.0);

    TempDir flat("vitok_vid_flat");
    save_ppm((flat.p / "img.ppm").string(), Tensor::zeros({4, 4, 3}));
    CHECK_THROWS_AS(load_video(flat.p.string()), std::runtime_error);
}

TEST_CASE("corpus assembly", "[data]") {
    CorpusSpec spec;
    spec.kind = "synthetic-textures";
    spec.n = 4;
    spec.H = spec.W = 16;
    spec.seed = 44;
    Tensor c = make_corpus(spec);
    REQUIRE(c.shape() == Shape{4, 1, 16, 16, 3});
    CHECK(bitwise_equal(c.reshaped({4, 16, 16, 3}),
                        synth_images("synthetic-textures", 4, 16, 16, 44)));

    spec.T = 4;
    CHECK_THROWS_AS(make_corpus(spec), std::invalid_argument);

    spec.kind = "synthetic-video";
    spec.motion = "drift";
    Tensor v = make_corpus(spec);
    REQUIRE(v.shape() == Shape{4, 4, 16, 16, 3});

    TempDir td("vitok_corpus_dir");
    save_video(td.p.string(), v);
    CorpusSpec fd;
    fd.kind = "file-dir";
    fd.dir = td.p.string();
    REQUIRE(make_corpus(fd).shape() == v.shape());
}

TEST_CASE("batch iteration", "[data]") {
    Tensor corpus = synth_images("synthetic-gradients", 10, 8, 8, 7)
                        .reshaped({10, 1, 8, 8, 3});
    auto bs = batches(corpus, 4, 123);
    REQUIRE(bs.size() == 2);  // last partial batch dropped
    CHECK(bs[0].shape() == Shape{4, 1, 8, 8, 3});

    // same seed, same order; full-size batch is a permutation
    auto bs2 = batches(corpus, 4, 123);
    CHECK(bitwise_equal(bs[0], bs2[0]));
    CHECK(bitwise_equal(bs[1], bs2[1]));

    auto whole = batches(corpus, 10, 9);
    REQUIRE(whole.size() == 1);
    long long row = corpus.numel() / 10;
    std::set<double> seen, have;
    for (int i = 0; i < 10; ++i) {
        seen.insert(whole[0].data()[i * row]);
        have.insert(corpus.data()[i * row]);
    }
    CHECK(seen == have);
}
