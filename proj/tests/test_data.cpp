#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "htdepth/data.hpp"

using namespace htd;
namespace fs = std::filesystem;

namespace {

SyntheticScene single_plane_scene(double z = 5.0) {
    SyntheticScene s;
    s.seed = 9;
    s.planes.push_back({z, 0, 0, -100, 100, -100, 100});
    s.intrinsics.fx = s.intrinsics.fy = 60.0;
    s.intrinsics.cx = 31.5;
    s.intrinsics.cy = 15.5;
    s.intrinsics.width = 64;
    s.intrinsics.height = 32;
    s.trajectory.push_back(Pose6DoF{});
    return s;
}

struct TempDir {
    fs::path path;
    TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("fronto-parallel plane renders constant depth") {
    auto scene = single_plane_scene(5.0);
    auto [img, dep] = render<float>(scene, Pose6DoF{}, scene.intrinsics, 32, 64);
    CHECK(img.shape() == Shape{1, 3, 32, 64});
    CHECK(dep.shape() == Shape{1, 1, 32, 64});
    for (float d : dep.data()) CHECK(d == doctest::Approx(5.0).epsilon(1e-6));
    for (float v : img.data()) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }

    Pose6DoF closer;
    closer.translation = {0, 0, 1.0};
    auto [img2, dep2] = render<float>(scene, closer, scene.intrinsics, 32, 64);
    for (float d : dep2.data()) CHECK(d == doctest::Approx(4.0).epsilon(1e-6));
}

TEST_CASE("render is deterministic and textured") {
    auto scene = make_default_scene(42, 2);
    auto [a_img, a_dep] = render<float>(scene, scene.trajectory[0], scene.intrinsics, 32, 64);
    auto [b_img, b_dep] = render<float>(scene, scene.trajectory[0], scene.intrinsics, 32, 64);
    for (int64_t i = 0; i < a_img.numel(); ++i)
        CHECK(a_img.data()[size_t(i)] == b_img.data()[size_t(i)]);
    for (float d : a_dep.data()) CHECK(d > 0.0f);

    // texture actually varies
    float mn = 1e9f, mx = -1e9f;
    for (float v : a_img.data()) {
        mn = std::min(mn, v);
        mx = std::max(mx, v);
    }
    CHECK(mx - mn > 0.1f);
}

TEST_CASE("camera inside a box is a generation error") {
    SyntheticScene s = single_plane_scene();
    s.boxes.push_back({{-1, -1, -1}, {1, 1, 1}});  // encloses the origin
    CHECK_THROWS_AS((render<float>(s, Pose6DoF{}, s.intrinsics, 16, 16)), DataError);
}

TEST_CASE("warp with GT depth and pose reproduces the neighbor render") {
    auto scene = single_plane_scene(5.0);
    Pose6DoF a;  // target
    Pose6DoF b;  // source, lateral + small forward motion
    b.translation = {0.15, 0.02, 0.05};
    auto K = scene.intrinsics;
    auto [img_a, dep_a] = render<float>(scene, a, K, 32, 64);
    auto [img_b, dep_b] = render<float>(scene, b, K, 32, 64);

    auto T = mat4_to_tensor<float>(relative_transform(a, b));
    Tensor<float> valid;
    auto warped = synthesize_view(img_b, dep_a, T, K, &valid);
    double err = 0, n = 0;
    int64_t hw = 32 * 64;
    for (int c = 0; c < 3; ++c)
        for (int64_t p = 0; p < hw; ++p)
            if (valid.data()[size_t(p)] > 0.5f) {
                err += std::abs(double(warped.data()[size_t(c * hw + p)]) -
                                double(img_a.data()[size_t(c * hw + p)]));
                n += 1;
            }
    CHECK(n > 0.8 * 3 * hw);
    CHECK(err / n < 0.02);
}

TEST_CASE("scene triplets carry consistent ground truth") {
    auto scene = make_default_scene(7, 4, 64, 32);
    auto batches = scene_triplets<float>(scene, 32, 64);
    REQUIRE(batches.size() == 2);  // 4 frames -> 2 interior targets
    for (const auto& b : batches) {
        CHECK(b.sources.size() == 2);
        CHECK(b.gt_transforms.size() == 2);
        REQUIRE(b.gt_depth.has_value());
        CHECK(b.target.shape() == Shape{1, 3, 32, 64});
        for (float d : b.gt_depth->data()) CHECK(d > 0.0f);
    }
    // GT warp of each source stays photometrically close to the target
    const auto& b = batches[0];
    for (size_t i = 0; i < 2; ++i) {
        Tensor<float> valid;
        auto w = synthesize_view(b.sources[i], *b.gt_depth, b.gt_transforms[i], b.intrinsics, &valid);
        double err = 0, n = 0;
        int64_t hw = 32 * 64;
        for (int c = 0; c < 3; ++c)
            for (int64_t p = 0; p < hw; ++p)
                if (valid.data()[size_t(p)] > 0.5f) {
                    err += std::abs(double(w.data()[size_t(c * hw + p)]) -
                                    double(b.target.data()[size_t(c * hw + p)]));
                    n += 1;
                }
        CHECK(err / n < 0.04);  // includes occlusion borders from the boxes
    }
}

TEST_CASE("scene spec parser: round trip and line-numbered errors") {
    std::istringstream ok(
        "# test scene\n"
        "seed = 5\n"
        "size = 64 32\n"
        "intrinsics = 60 60 31.5 15.5\n"
        "plane = 5 0 0 -10 10 -10 10\n"
        "box = -1 -1 3  1 1 4\n"
        "frames = 4\n"
        "motion = 0.05 0 0.02  0 0.002 0\n");
    auto scene = parse_scene_spec(ok);
    CHECK(scene.seed == 5);
    CHECK(scene.planes.size() == 1);
    CHECK(scene.boxes.size() == 1);
    CHECK(scene.trajectory.size() == 4);
    CHECK(scene.intrinsics.width == 64);

    std::istringstream bad_line("seed = 5\nnot a key value pair\n");
    try {
        parse_scene_spec(bad_line);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }

    std::istringstream bad_plane("plane = 1 2\n");
    try {
        parse_scene_spec(bad_plane);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("line 1") != std::string::npos);
    }

    std::istringstream no_geo("frames = 2\n");
    CHECK_THROWS_AS(parse_scene_spec(no_geo), ConfigError);

    std::istringstream too_fast(
        "plane = 5 0 0 -10 10 -10 10\nframes = 2\nmotion = 9 0 0 0 0 0\n");
    CHECK_THROWS_AS(parse_scene_spec(too_fast), ConfigError);
}

TEST_CASE("png round trips: 8-bit rgb and 16-bit gray") {
    TempDir tmp("htd_test_png");
    Rng rng(3);
    Image8 img;
    img.width = 20;
    img.height = 14;
    img.channels = 3;
    img.pixels.resize(size_t(20) * 14 * 3);
    for (auto& p : img.pixels) p = uint8_t(rng.next_u32() & 0xff);
    auto p8 = (tmp.path / "rgb.png").string();
    save_png(img, p8);
    auto back = load_png(p8);
    REQUIRE(back.width == 20);
    REQUIRE(back.height == 14);
    CHECK(back.pixels == img.pixels);

    Image16 d;
    d.width = 9;
    d.height = 7;
    d.pixels.resize(63);
    for (auto& p : d.pixels) p = uint16_t(rng.next_u32() & 0xffff);
    auto p16 = (tmp.path / "depth.png").string();
    save_png16(d, p16);
    auto back16 = load_png16(p16);
    CHECK(back16.pixels == d.pixels);

    CHECK_THROWS_AS(load_png((tmp.path / "missing.png").string()), DataError);

    // tensor <-> image round trip within quantization
    auto t = rng.uniform_tensor<float>({1, 3, 8, 8}, 0.0, 1.0);
    auto t2 = image_to_tensor<float>(tensor_to_image(t));
    for (int64_t i = 0; i < t.numel(); ++i)
        CHECK(double(t2.data()[size_t(i)]) ==
              doctest::Approx(double(t.data()[size_t(i)])).epsilon(0.01));
}

TEST_CASE("triplet loader: order, determinism, augmentation, errors") {
    TempDir tmp("htd_test_triplets");
    auto scene = make_default_scene(11, 5, 64, 32);
    auto K = scene.intrinsics;
    save_intrinsics(K, (tmp.path / "intrinsics.txt").string());
    for (int f = 0; f < 5; ++f) {
        auto [img, dep] = render<float>(scene, scene.trajectory[size_t(f)], K, 32, 64);
        save_png(tensor_to_image(img), (tmp.path / ("f" + std::to_string(f) + ".png")).string());
    }
    auto list = (tmp.path / "train.txt").string();
    {
        std::ofstream os(list);
        for (int f = 1; f < 4; ++f)
            os << "f" << f - 1 << ".png f" << f << ".png f" << f + 1 << ".png\n";
    }

    auto a = load_triplets<float>(tmp.path.string(), list, 64, 32, false, 1);
    REQUIRE(a.size() == 3);
    CHECK(a[0].target.shape() == Shape{1, 3, 32, 64});

    // deterministic under a fixed seed, including shuffle + augmentation
    auto b1 = load_triplets<float>(tmp.path.string(), list, 64, 32, true, 7);
    auto b2 = load_triplets<float>(tmp.path.string(), list, 64, 32, true, 7);
    REQUIRE(b1.size() == b2.size());
    for (size_t i = 0; i < b1.size(); ++i)
        for (int64_t j = 0; j < b1[i].net_target.numel(); ++j)
            CHECK(b1[i].net_target.data()[size_t(j)] == b2[i].net_target.data()[size_t(j)]);

    // loss targets are un-jittered copies: net inputs differ from targets by
    // a constant brightness shift when jitter fires
    bool saw_jitter = false;
    for (const auto& b : b1) {
        double diff = double(b.net_target.data()[0]) - double(b.target.data()[0]);
        if (std::abs(diff) > 1e-6) saw_jitter = true;
    }
    CHECK(saw_jitter);

    // resize path
    auto small = load_triplets<float>(tmp.path.string(), list, 32, 16, false, 1);
    CHECK(small[0].target.shape() == Shape{1, 3, 16, 32});

    // empty list: zero batches, no error
    auto empty_list = (tmp.path / "empty.txt").string();
    std::ofstream(empty_list).close();
    CHECK(load_triplets<float>(tmp.path.string(), empty_list, 64, 32).empty());

    // missing frame names the path
    auto broken = (tmp.path / "broken.txt").string();
    {
        std::ofstream os(broken);
        os << "f0.png gone.png f2.png\n";
    }
    try {
        load_triplets<float>(tmp.path.string(), broken, 64, 32);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("gone.png") != std::string::npos);
    }
}

TEST_CASE("hflip is an involution") {
    Rng rng(13);
    auto t = rng.uniform_tensor<float>({1, 3, 4, 6}, 0.0, 1.0);
    auto back = hflip(hflip(t));
    for (int64_t i = 0; i < t.numel(); ++i)
        CHECK(back.data()[size_t(i)] == t.data()[size_t(i)]);
    auto f = hflip(t);
    CHECK(f.data()[0] == t.data()[5]);
}
