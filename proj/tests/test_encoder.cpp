#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "htdepth/encoder.hpp"

using namespace htd;

namespace {

void check_pyramid_shapes(const FeaturePyramid<float>& p, int C, int H, int W) {
    for (int e = 1; e <= 4; ++e) {
        int f = 1 << (e - 1);
        CHECK(p.level(e).shape() == Shape{p.level(e).dim(0), C * e, H / f, W / f});
    }
}

// Receptive field of a chain of (kernel, stride) layers on the input grid.
struct RfLayer {
    int kernel, stride;
};
int receptive_field(const std::vector<RfLayer>& chain) {
    int rf = 1, jump = 1;
    for (const auto& l : chain) {
        rf += (l.kernel - 1) * jump;
        jump *= l.stride;
    }
    return rf;
}

}  // namespace

TEST_CASE("global encoder level shapes at 64x64, C=32") {
    Rng rng(3);
    EncoderConfig cfg;
    cfg.tg_blocks_per_level = {1, 1, 1, 1};  // shapes do not depend on depth
    auto enc = GlobalEncoder<float>::init(rng, cfg);
    auto img = rng.uniform_tensor<float>({1, 3, 64, 64}, 0.0, 1.0);
    auto p = enc.forward(img);
    CHECK(p.level(1).shape() == Shape{1, 32, 64, 64});
    CHECK(p.level(2).shape() == Shape{1, 64, 32, 32});
    CHECK(p.level(3).shape() == Shape{1, 96, 16, 16});
    CHECK(p.level(4).shape() == Shape{1, 128, 8, 8});
}

TEST_CASE("global encoder at the 640x192 training size reaches (128,24,80)") {
    Rng rng(5);
    EncoderConfig cfg;
    cfg.tg_blocks_per_level = {1, 1, 1, 1};
    auto enc = GlobalEncoder<float>::init(rng, cfg);
    auto img = rng.uniform_tensor<float>({1, 3, 192, 640}, 0.0, 1.0);
    auto p = enc.forward(img);
    CHECK(p.level(4).shape() == Shape{1, 128, 24, 80});
    check_pyramid_shapes(p, 32, 192, 640);
}

TEST_CASE("constant gray image stays finite through the global encoder") {
    Rng rng(7);
    EncoderConfig cfg;
    cfg.base_channels = 8;
    cfg.tg_blocks_per_level = {1, 1, 1, 1};
    auto enc = GlobalEncoder<float>::init(rng, cfg);
    auto img = Tensor<float>::filled({1, 3, 16, 16}, 0.5f);
    auto p = enc.forward(img);
    for (int e = 1; e <= 4; ++e) CHECK_NOTHROW(assert_finite(p.level(e), "level"));
}

TEST_CASE("lrl encoder shape contract and Eq.3 with conv=0") {
    Rng rng(11);
    EncoderConfig cfg;
    cfg.base_channels = 8;
    auto enc = LrlEncoder<float>::init(rng, cfg);
    auto img = rng.uniform_tensor<float>({2, 3, 32, 24}, 0.0, 1.0);
    auto p = enc.forward(img);
    check_pyramid_shapes(p, 8, 32, 24);

    // zero the residual convs: level e becomes the (projected) downsample of
    // level e-1
    NamedTensors<float> params;
    enc.collect(params, "lrl");
    zero_params_matching(params, "conv1");
    zero_params_matching(params, "conv2");
    auto pz = enc.forward(img);
    for (int e = 2; e <= 4; ++e) {
        auto expected = enc.blocks[size_t(e - 2)][0].proj.forward(max_pool2x2(pz.level(e - 1)));
        REQUIRE(pz.level(e).shape() == expected.shape());
        for (int64_t i = 0; i < expected.numel(); ++i)
            CHECK(pz.level(e).data()[size_t(i)] == doctest::Approx(expected.data()[size_t(i)]).epsilon(1e-6));
    }
}

TEST_CASE("gradient from a level-4 loss reaches the lrl stem") {
    Rng rng(13);
    EncoderConfig cfg;
    cfg.base_channels = 4;
    auto enc = LrlEncoder<float>::init(rng, cfg);
    auto img = rng.uniform_tensor<float>({1, 3, 16, 16}, 0.0, 1.0);
    auto loss = mean_all(mul(enc.forward(img).level(4), Tensor<float>::scalar(2.0f)));
    loss.backward();
    double gsum = 0;
    for (float g : enc.stem.weight.grad()) gsum += std::abs(g);
    CHECK(gsum > 0.0);
}

TEST_CASE("hrl encoder: constant-resolution streams, shape contract") {
    Rng rng(17);
    EncoderConfig cfg;
    cfg.base_channels = 8;
    cfg.hrl_blocks_per_stream = 2;
    auto enc = HrlEncoder<float>::init(rng, cfg);
    auto img = rng.uniform_tensor<float>({1, 3, 24, 32}, 0.0, 1.0);
    auto p = enc.forward(img);
    CHECK(p.level(1).dim(2) == 24);  // no downsampling inside stream 1
    CHECK(p.level(1).dim(3) == 32);
    check_pyramid_shapes(p, 8, 24, 32);
}

TEST_CASE("hrl level-1 receptive field exceeds lrl level-1") {
    EncoderConfig cfg;
    // LRL level 1 is just the stem conv.
    std::vector<RfLayer> lrl_chain = {{3, 1}};
    // HRL level 1: stem plus hrl_blocks_per_stream residual blocks of two
    // 3x3 convs each, all stride 1.
    std::vector<RfLayer> hrl_chain = {{3, 1}};
    for (int b = 0; b < cfg.hrl_blocks_per_stream; ++b) {
        hrl_chain.push_back({3, 1});
        hrl_chain.push_back({3, 1});
    }
    int lrl_rf = receptive_field(lrl_chain);
    int hrl_rf = receptive_field(hrl_chain);
    CHECK(lrl_rf == 3);
    CHECK(hrl_rf == 3 + 4 * cfg.hrl_blocks_per_stream);
    CHECK(hrl_rf > lrl_rf);
}

TEST_CASE("all branches agree on pyramid shapes; size doubling scales spatially") {
    Rng rng(19);
    EncoderConfig cfg;
    cfg.base_channels = 4;
    cfg.tg_blocks_per_level = {1, 1, 1, 1};
    cfg.hrl_blocks_per_stream = 1;
    auto tg = GlobalEncoder<float>::init(rng, cfg);
    auto lrl = LrlEncoder<float>::init(rng, cfg);
    auto hrl = HrlEncoder<float>::init(rng, cfg);
    for (int size : {16, 32}) {
        auto img = rng.uniform_tensor<float>({1, 3, size, size}, 0.0, 1.0);
        auto pt = tg.forward(img), pl = lrl.forward(img), ph = hrl.forward(img);
        for (int e = 1; e <= 4; ++e) {
            CHECK(pt.level(e).shape() == pl.level(e).shape());
            CHECK(pt.level(e).shape() == ph.level(e).shape());
        }
        check_pyramid_shapes(pt, 4, size, size);
    }
}

TEST_CASE("fixed seed and input give bit-identical outputs") {
    EncoderConfig cfg;
    cfg.base_channels = 4;
    cfg.tg_blocks_per_level = {1, 1, 1, 1};
    Rng ra(101), rb(101), rimg(5);
    auto ea = GlobalEncoder<float>::init(ra, cfg);
    auto eb = GlobalEncoder<float>::init(rb, cfg);
    auto img = rimg.uniform_tensor<float>({1, 3, 16, 16}, 0.0, 1.0);
    auto pa = ea.forward(img), pb = eb.forward(img);
    for (int e = 1; e <= 4; ++e)
        for (int64_t i = 0; i < pa.level(e).numel(); ++i)
            CHECK(pa.level(e).data()[size_t(i)] == pb.level(e).data()[size_t(i)]);
}

TEST_CASE("indivisible input size is a configuration error") {
    Rng rng(23);
    EncoderConfig cfg;
    cfg.base_channels = 4;
    auto enc = LrlEncoder<float>::init(rng, cfg);
    auto img = rng.uniform_tensor<float>({1, 3, 20, 16}, 0.0, 1.0);
    CHECK_THROWS_AS(enc.forward(img), ConfigError);
}
