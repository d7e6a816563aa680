#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "gradcheck.hpp"
#include "htdepth/nn_ops.hpp"
#include "htdepth/serialize.hpp"
#include "htdepth/tensor.hpp"

#include <cstdio>
#include <filesystem>

using namespace htd;
using htd::testing::grad_check;

namespace {

// Reference conv2d: direct summation, no im2col.
template <typename S>
std::vector<S> conv2d_reference(const std::vector<S>& in, int N, int Cin, int H, int W,
                                const std::vector<S>& w, int Cout, int k,
                                const std::vector<S>* bias, int stride, int pad, int dil) {
    int Ho = (H + 2 * pad - dil * (k - 1) - 1) / stride + 1;
    int Wo = (W + 2 * pad - dil * (k - 1) - 1) / stride + 1;
    std::vector<S> out(size_t(N) * Cout * Ho * Wo, S(0));
    for (int n = 0; n < N; ++n)
        for (int o = 0; o < Cout; ++o)
            for (int y = 0; y < Ho; ++y)
                for (int x = 0; x < Wo; ++x) {
                    S acc = bias ? (*bias)[size_t(o)] : S(0);
                    for (int c = 0; c < Cin; ++c)
                        for (int i = 0; i < k; ++i)
                            for (int j = 0; j < k; ++j) {
                                int iy = y * stride + i * dil - pad;
                                int ix = x * stride + j * dil - pad;
                                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                                acc += in[((size_t(n) * Cin + c) * H + iy) * W + ix] *
                                       w[((size_t(o) * Cin + c) * k + i) * k + j];
                            }
                    out[((size_t(n) * Cout + o) * Ho + y) * Wo + x] = acc;
                }
    return out;
}

}  // namespace

TEST_CASE("conv2d hand examples") {
    auto ones = Tensor<float>::filled({1, 1, 3, 3}, 1.0f);
    auto w = Tensor<float>::filled({1, 1, 3, 3}, 1.0f);

    SUBCASE("3x3 ones, padding 1") {
        auto y = conv2d(ones, w, 1, 1, 1);
        CHECK(y.shape() == Shape{1, 1, 3, 3});
        CHECK(y.data()[4] == doctest::Approx(9.0));   // center
        CHECK(y.data()[0] == doctest::Approx(4.0));   // corner
    }
    SUBCASE("dilation 2, padding 2: only the center tap lands in-bounds at the center") {
        auto y = conv2d(ones, w, 1, 2, 2);
        CHECK(y.shape() == Shape{1, 1, 3, 3});
        CHECK(y.data()[4] == doctest::Approx(1.0));
        auto ref = conv2d_reference<float>(ones.data(), 1, 1, 3, 3, w.data(), 1, 3, nullptr, 1, 2, 2);
        for (size_t i = 0; i < ref.size(); ++i) CHECK(y.data()[i] == doctest::Approx(ref[i]));
    }
    SUBCASE("identity 1x1 kernel") {
        Rng rng(7);
        auto x = rng.uniform_tensor<float>({2, 3, 4, 5}, -1, 1);
        auto id = Tensor<float>::filled({3, 3, 1, 1}, 0.0f);
        for (int c = 0; c < 3; ++c) id.data()[size_t(c) * 3 + c] = 1.0f;
        auto y = conv2d(x, id);
        for (size_t i = 0; i < x.data().size(); ++i) CHECK(y.data()[i] == x.data()[i]);
    }
    SUBCASE("channel mismatch throws") {
        auto bad_w = Tensor<float>::filled({1, 2, 3, 3}, 1.0f);
        CHECK_THROWS_AS(conv2d(ones, bad_w), DimensionError);
    }
}

TEST_CASE("conv2d matches reference loop on random instances") {
    Rng rng(11);
    for (int trial = 0; trial < 5; ++trial) {
        int Cin = 1 + int(rng.next_u32() % 3), Cout = 1 + int(rng.next_u32() % 3);
        int k = 1 + 2 * int(rng.next_u32() % 2);
        int stride = 1 + int(rng.next_u32() % 2);
        int pad = int(rng.next_u32() % 3);
        int dil = 1 + int(rng.next_u32() % 2);
        int H = 6 + int(rng.next_u32() % 4), W = 6 + int(rng.next_u32() % 4);
        if (H + 2 * pad < dil * (k - 1) + 1) continue;
        auto x = rng.uniform_tensor<float>({2, Cin, H, W}, -1, 1);
        auto w = rng.uniform_tensor<float>({Cout, Cin, k, k}, -1, 1);
        auto b = rng.uniform_tensor<float>({Cout}, -1, 1);
        auto y = conv2d(x, w, b, stride, pad, dil);
        auto ref = conv2d_reference<float>(x.data(), 2, Cin, H, W, w.data(), Cout, k, &b.data(), stride, pad, dil);
        REQUIRE(y.data().size() == ref.size());
        for (size_t i = 0; i < ref.size(); ++i)
            CHECK(y.data()[i] == doctest::Approx(ref[i]).epsilon(1e-4));
    }
}

TEST_CASE("dilated conv equals zero-inflated kernel with dilation 1") {
    Rng rng(13);
    auto x = rng.uniform_tensor<float>({1, 2, 9, 9}, -1, 1);
    auto w = rng.uniform_tensor<float>({3, 2, 3, 3}, -1, 1);
    int r = 2;
    int kz = r * (3 - 1) + 1;  // 5
    auto wz = Tensor<float>::filled({3, 2, kz, kz}, 0.0f);
    for (int o = 0; o < 3; ++o)
        for (int c = 0; c < 2; ++c)
            for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 3; ++j)
                    wz.data()[((size_t(o) * 2 + c) * kz + i * r) * kz + j * r] =
                        w.data()[((size_t(o) * 2 + c) * 3 + i) * 3 + j];
    auto y1 = conv2d(x, w, 1, 2, r);
    auto y2 = conv2d(x, wz, 1, 2, 1);
    REQUIRE(y1.shape() == y2.shape());
    for (size_t i = 0; i < y1.data().size(); ++i)
        CHECK(y1.data()[i] == doctest::Approx(y2.data()[i]).epsilon(1e-5));
}

TEST_CASE("matmul") {
    SUBCASE("identity") {
        auto I = Tensor<float>::from_data({2, 2}, {1, 0, 0, 1});
        auto m = Tensor<float>::from_data({2, 2}, {3, 4, 5, 6});
        auto y = matmul(I, m);
        CHECK(y.data() == m.data());
    }
    SUBCASE("dot product") {
        auto a = Tensor<float>::from_data({1, 2}, {1, 2});
        auto b = Tensor<float>::from_data({2, 1}, {3, 4});
        CHECK(matmul(a, b).item() == doctest::Approx(11.0));
    }
    SUBCASE("random 4x5 by 5x3 vs triple loop") {
        Rng rng(3);
        auto a = rng.uniform_tensor<float>({4, 5}, -1, 1);
        auto b = rng.uniform_tensor<float>({5, 3}, -1, 1);
        auto y = matmul(a, b);
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 3; ++j) {
                float acc = 0;
                for (int k = 0; k < 5; ++k) acc += a.data()[size_t(i) * 5 + k] * b.data()[size_t(k) * 3 + j];
                CHECK(y.data()[size_t(i) * 3 + j] == doctest::Approx(acc).epsilon(1e-6));
            }
    }
    SUBCASE("inner mismatch throws") {
        auto a = Tensor<float>::filled({2, 3}, 1.0f);
        auto b = Tensor<float>::filled({4, 2}, 1.0f);
        CHECK_THROWS_AS(matmul(a, b), DimensionError);
    }
    SUBCASE("batched with transpose flags") {
        Rng rng(5);
        auto a = rng.uniform_tensor<float>({2, 3, 4}, -1, 1);
        auto b = rng.uniform_tensor<float>({2, 3, 5}, -1, 1);
        auto y = matmul(a, b, true, false);  // [2,4,5]
        CHECK(y.shape() == Shape{2, 4, 5});
        for (int n = 0; n < 2; ++n)
            for (int i = 0; i < 4; ++i)
                for (int j = 0; j < 5; ++j) {
                    float acc = 0;
                    for (int k = 0; k < 3; ++k)
                        acc += a.data()[(size_t(n) * 3 + k) * 4 + i] * b.data()[(size_t(n) * 3 + k) * 5 + j];
                    CHECK(y.data()[(size_t(n) * 4 + i) * 5 + j] == doctest::Approx(acc).epsilon(1e-5));
                }
    }
}

TEST_CASE("softmax") {
    SUBCASE("uniform") {
        auto y = softmax(Tensor<float>::from_data({3}, {0, 0, 0}), 0);
        for (float v : y.data()) CHECK(v == doctest::Approx(1.0 / 3));
    }
    SUBCASE("no overflow at 1000") {
        auto y = softmax(Tensor<float>::from_data({2}, {1000, 0}), 0);
        CHECK(y.data()[0] == doctest::Approx(1.0));
        CHECK(y.data()[1] == doctest::Approx(0.0));
        CHECK(std::isfinite(y.data()[0]));
    }
    SUBCASE("reference values") {
        auto y = softmax(Tensor<float>::from_data({3}, {1, 2, 3}), 0);
        CHECK(y.data()[0] == doctest::Approx(0.09003).epsilon(1e-4));
        CHECK(y.data()[1] == doctest::Approx(0.24473).epsilon(1e-4));
        CHECK(y.data()[2] == doctest::Approx(0.66524).epsilon(1e-4));
    }
    SUBCASE("rows sum to one for random input") {
        Rng rng(17);
        auto x = rng.uniform_tensor<float>({4, 7}, -50, 50);
        auto y = softmax(x, 1);
        for (int i = 0; i < 4; ++i) {
            double s = 0;
            for (int j = 0; j < 7; ++j) s += y.data()[size_t(i) * 7 + j];
            CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
        }
    }
}

TEST_CASE("layer_norm") {
    int C = 5;
    auto gamma = Tensor<float>::filled({C}, 1.0f);
    auto beta = Tensor<float>::filled({C}, 0.0f);
    SUBCASE("constant input -> zeros") {
        auto x = Tensor<float>::filled({1, C, 2, 2}, 3.7f);
        auto y = layer_norm(x, gamma, beta);
        for (float v : y.data()) CHECK(v == doctest::Approx(0.0));
    }
    SUBCASE("zero mean unit variance over channels") {
        Rng rng(23);
        auto x = rng.uniform_tensor<float>({2, C, 3, 3}, -2, 2);
        auto y = layer_norm(x, gamma, beta);
        for (int n = 0; n < 2; ++n)
            for (int i = 0; i < 9; ++i) {
                double m = 0, v = 0;
                for (int c = 0; c < C; ++c) m += y.data()[(size_t(n) * C + c) * 9 + i];
                m /= C;
                for (int c = 0; c < C; ++c) {
                    double d = y.data()[(size_t(n) * C + c) * 9 + i] - m;
                    v += d * d;
                }
                v /= C;
                CHECK(m == doctest::Approx(0.0).epsilon(1e-5));
                CHECK(v == doctest::Approx(1.0).epsilon(1e-3));
            }
    }
    SUBCASE("gamma 0 beta 5 -> all fives") {
        Rng rng(29);
        auto x = rng.uniform_tensor<float>({1, C, 2, 2}, -2, 2);
        auto y = layer_norm(x, Tensor<float>::filled({C}, 0.0f), Tensor<float>::filled({C}, 5.0f));
        for (float v : y.data()) CHECK(v == doctest::Approx(5.0));
    }
}

TEST_CASE("pixel unshuffle / shuffle") {
    SUBCASE("2x2 rearrangement") {
        auto x = Tensor<float>::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
        auto y = pixel_unshuffle(x, 2);
        CHECK(y.shape() == Shape{1, 4, 1, 1});
        CHECK(y.data() == std::vector<float>{1, 2, 3, 4});
    }
    SUBCASE("round trip is bit exact") {
        Rng rng(31);
        auto x = rng.uniform_tensor<float>({2, 3, 8, 12}, -1, 1);
        auto y = pixel_shuffle(pixel_unshuffle(x, 2), 2);
        CHECK(y.data() == x.data());
        auto z = pixel_shuffle(pixel_unshuffle(x, 4), 4);
        CHECK(z.data() == x.data());
    }
    SUBCASE("factor 1 is identity") {
        Rng rng(37);
        auto x = rng.uniform_tensor<float>({1, 2, 3, 3}, -1, 1);
        CHECK(pixel_unshuffle(x, 1).data() == x.data());
    }
    SUBCASE("non-divisible dims throw") {
        auto x = Tensor<float>::filled({1, 1, 3, 4}, 1.0f);
        CHECK_THROWS_AS(pixel_unshuffle(x, 2), DimensionError);
    }
}

TEST_CASE("backward basics") {
    SUBCASE("sum of squares") {
        auto x = Tensor<float>::from_data({2}, {1, 2}, true);
        auto loss = sum_all(mul(x, x));
        loss.backward();
        CHECK(x.grad()[0] == doctest::Approx(2.0));
        CHECK(x.grad()[1] == doctest::Approx(4.0));
    }
    SUBCASE("backward on non-scalar throws") {
        auto x = Tensor<float>::from_data({2}, {1, 2}, true);
        auto y = mul(x, x);
        CHECK_THROWS_AS(y.backward(), ContractError);
    }
    SUBCASE("disconnected leaf has zero grad") {
        auto x = Tensor<float>::from_data({2}, {1, 2}, true);
        auto z = Tensor<float>::from_data({2}, {5, 6}, true);
        sum_all(mul(x, x)).backward();
        CHECK(z.grad() == std::vector<float>{0, 0});
    }
    SUBCASE("grad accumulates across uses") {
        auto x = Tensor<float>::scalar(3.0f, true);
        auto loss = add(mul(x, x), x);  // x^2 + x -> 2x + 1 = 7
        sum_all(loss).backward();
        CHECK(x.grad()[0] == doctest::Approx(7.0));
    }
}

TEST_CASE("finite-difference property over elementwise and structured ops") {
    // 20+ seeds across the differentiable op set, double precision oracle.
    for (uint64_t seed = 1; seed <= 21; ++seed) {
        Rng rng(seed);
        auto x = rng.uniform_tensor<double>({1, 2, 4, 4}, 0.2, 1.5, true);
        auto y = rng.uniform_tensor<double>({1, 2, 4, 4}, 0.2, 1.5, true);

        // keep |x - y| away from zero so abs/min kinks sit outside the fd step
        for (size_t i = 0; i < y.data().size(); ++i)
            if (std::abs(x.data()[i] - y.data()[i]) < 0.05) y.data()[i] += 0.1;

        auto check = [&](const std::string& name, auto fn) {
            auto res = grad_check(fn, {x, y});
            INFO(name << " seed " << seed << ": " << res.detail);
            CHECK(res.ok);
        };
        check("add/mul/sub mix", [](const std::vector<Tensor<double>>& in) {
            return mean_all(mul(add(in[0], in[1]), sub(in[0], mul_scalar(in[1], 0.5))));
        });
        check("div/exp/log/sqrt", [](const std::vector<Tensor<double>>& in) {
            return mean_all(add(div(in[0], in[1]), add(htd::exp(neg(in[0])), htd::log(add_scalar(htd::sqrt(in[1]), 0.1)))));
        });
        check("sigmoid/relu/gelu/abs", [](const std::vector<Tensor<double>>& in) {
            return mean_all(add(sigmoid(in[0]), add(gelu(in[1]), htd::abs(sub(in[0], in[1])))));
        });
        check("sin/cos/min", [](const std::vector<Tensor<double>>& in) {
            return mean_all(add(htd::sin(in[0]), add(htd::cos(in[1]), minimum(in[0], in[1]))));
        });
        check("softmax/concat/slice", [](const std::vector<Tensor<double>>& in) {
            auto c = concat<double>({in[0], in[1]}, 1);
            return add(mean_all(mul(softmax(c, 1), c)), mean_all(slice(c, 1, 1, 2)));
        });
        check("matmul", [](const std::vector<Tensor<double>>& in) {
            auto a = reshape(in[0], {4, 8});
            auto b = reshape(in[1], {8, 4});
            return mean_all(matmul(a, b));
        });
        check("pools/upsample/shuffle", [](const std::vector<Tensor<double>>& in) {
            auto a = upsample_bilinear_x2(max_pool2x2(in[0]));
            auto b = avg_pool3x3_same(pixel_shuffle(pixel_unshuffle(in[1], 2), 2));
            return mean_all(mul(a, b));
        });
        check("mean_channels/spatial_mean/select", [](const std::vector<Tensor<double>>& in) {
            auto m = mean_channels(mul(in[0], in[1]));
            return add(mean_all(m), select(spatial_mean(in[0]), 1));
        });
    }
}

TEST_CASE("conv2d and layer_norm gradients vs finite differences") {
    for (uint64_t seed = 41; seed < 46; ++seed) {
        Rng rng(seed);
        auto x = rng.uniform_tensor<double>({1, 2, 5, 5}, -1, 1, true);
        auto w = rng.uniform_tensor<double>({3, 2, 3, 3}, -0.5, 0.5, true);
        auto b = rng.uniform_tensor<double>({3}, -0.5, 0.5, true);
        auto res = grad_check(
            [](const std::vector<Tensor<double>>& in) {
                return mean_all(conv2d(in[0], in[1], in[2], 1, 1, 1));
            },
            {x, w, b});
        INFO(res.detail);
        CHECK(res.ok);

        auto res2 = grad_check(
            [](const std::vector<Tensor<double>>& in) {
                return mean_all(conv2d(in[0], in[1], in[2], 2, 2, 2));
            },
            {x, w, b});
        INFO(res2.detail);
        CHECK(res2.ok);

        auto gamma = rng.uniform_tensor<double>({2}, 0.5, 1.5, true);
        auto beta = rng.uniform_tensor<double>({2}, -0.5, 0.5, true);
        // smaller step: with 2 channels the normalizer curvature is steep
        auto res3 = grad_check(
            [](const std::vector<Tensor<double>>& in) {
                return mean_all(mul(layer_norm(in[0], in[1], in[2]), in[0]));
            },
            {x, gamma, beta}, 1e-5);
        INFO(res3.detail);
        CHECK(res3.ok);
    }
}

TEST_CASE("bilinear_sample") {
    SUBCASE("identity grid returns source") {
        Rng rng(51);
        int H = 5, W = 7;
        auto src = rng.uniform_tensor<float>({1, 3, H, W}, 0, 1);
        std::vector<float> g(size_t(2) * H * W);
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                g[size_t(0) * H * W + size_t(y) * W + x] = 2.0f * x / (W - 1) - 1.0f;
                g[size_t(1) * H * W + size_t(y) * W + x] = 2.0f * y / (H - 1) - 1.0f;
            }
        auto grid = Tensor<float>::from_data({1, 2, H, W}, g);
        auto out = bilinear_sample(src, grid);
        for (size_t i = 0; i < out.data().size(); ++i)
            CHECK(out.data()[i] == doctest::Approx(src.data()[i]).epsilon(1e-6));
    }
    SUBCASE("half-pixel shift averages horizontal neighbors") {
        auto src = Tensor<float>::from_data({1, 1, 2, 2}, {0, 1, 0, 1});
        // sample at x=0.5 (between the two columns), per row
        std::vector<float> g = {0.0f, 0.0f, 0.0f, 0.0f, -1.0f, -1.0f, 1.0f, 1.0f};
        auto grid = Tensor<float>::from_data({1, 2, 2, 2}, g);
        auto out = bilinear_sample(src, grid);
        for (float v : out.data()) CHECK(v == doctest::Approx(0.5));
    }
    SUBCASE("gradient w.r.t. grid and source") {
        for (uint64_t seed = 61; seed < 66; ++seed) {
            Rng rng(seed);
            auto src = rng.uniform_tensor<double>({1, 2, 4, 4}, 0, 1, true);
            auto grid = rng.uniform_tensor<double>({1, 2, 3, 3}, -0.8, 0.8, true);
            auto res = grad_check(
                [](const std::vector<Tensor<double>>& in) {
                    return mean_all(bilinear_sample(in[0], in[1]));
                },
                {src, grid});
            INFO(res.detail);
            CHECK(res.ok);
        }
    }
}

TEST_CASE("determinism: identical inputs give bit-identical outputs") {
    auto run = [] {
        Rng rng(99);
        auto x = rng.uniform_tensor<float>({1, 4, 8, 8}, -1, 1);
        auto w = rng.uniform_tensor<float>({4, 4, 3, 3}, -0.3, 0.3);
        auto y = conv2d(x, w, 1, 1, 1);
        y = softmax(y, 1);
        y = upsample_bilinear_x2(y);
        return y.data();
    };
    CHECK(run() == run());
}

TEST_CASE("assert_finite flags NaN") {
    auto x = Tensor<float>::from_data({2}, {1.0f, std::nanf("")});
    CHECK_THROWS_AS(assert_finite(x, "x"), ContractError);
}

TEST_CASE("tensor file round trip and manifest") {
    namespace fs = std::filesystem;
    auto dir = fs::temp_directory_path() / "htd_ser_test";
    fs::create_directories(dir);
    Rng rng(71);
    auto t = rng.uniform_tensor<float>({2, 3, 4}, -5, 5);
    save_tensor(t, (dir / "t.ht").string());
    auto u = load_tensor<float>((dir / "t.ht").string());
    CHECK(u.shape() == t.shape());
    CHECK(u.data() == t.data());

    NamedTensors<float> named = {{"enc.stem.weight", t}, {"enc.stem.bias", rng.uniform_tensor<float>({3}, 0, 1)}};
    save_manifest(named, (dir / "ckpt").string());
    auto loaded = load_manifest<float>((dir / "ckpt").string());
    CHECK(loaded.size() == 2);
    CHECK(loaded.at("enc.stem.weight").data() == t.data());

    CHECK_THROWS_AS(load_tensor<float>((dir / "missing.ht").string()), DataError);
    fs::remove_all(dir);
}
