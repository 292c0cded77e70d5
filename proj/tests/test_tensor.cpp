#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mosformer/ops.hpp"
#include "test_util.hpp"

using namespace mosf;

TEST_CASE("matmul identity and selector") {
    auto eye = Tensor<double>::from_data({2, 2}, {1, 0, 0, 1});
    auto a = Tensor<double>::from_data({2, 2}, {1, 2, 3, 4});
    auto prod = matmul(eye, a);
    CHECK(prod.data() == std::vector<double>{1, 2, 3, 4});

    auto sel = Tensor<double>::from_data({1, 2}, {1, 0});
    auto col = Tensor<double>::from_data({2, 1}, {5, 7});
    CHECK(matmul(sel, col).item() == doctest::Approx(5).epsilon(0));
}

TEST_CASE("matmul gradient matches finite differences") {
    Rng rng = Rng::seeded(42);
    auto a = Tensor<double>::randn({3, 4}, rng);
    auto b = Tensor<double>::randn({4, 2}, rng);
    auto w = Tensor<double>::uniform({3, 2}, rng, -1, 1);
    const double err = test::fd_check<double>(
        {a, b}, [&]() { return sum_all(mul(matmul(a, b), w)); }, 1e-5);
    CHECK(err < 1e-6);
}

TEST_CASE("matmul rejects shape mismatch") {
    auto a = Tensor<double>::zeros({2, 3});
    auto b = Tensor<double>::zeros({2, 2});
    CHECK_THROWS_AS((void)matmul(a, b), DimensionError);
}

TEST_CASE("softmax uniform logits and large-value stability") {
    auto x = Tensor<double>::from_data({3}, {0, 0, 0});
    auto y = softmax_lastdim(x);
    for (double v : y.data()) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-12));

    auto big = Tensor<double>::from_data({2}, {1000, 1000});
    auto yb = softmax_lastdim(big);
    CHECK(yb.data()[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(std::isfinite(yb.data()[0]));
}

TEST_CASE("softmax against scalar oracle") {
    auto x = Tensor<double>::from_data({3}, {1, 2, 3});
    auto y = softmax_lastdim(x);
    // independent scalar route
    const double e1 = std::exp(1.0), e2 = std::exp(2.0), e3 = std::exp(3.0);
    const double z = e1 + e2 + e3;
    CHECK(std::abs(y.data()[0] - e1 / z) < 1e-12);
    CHECK(std::abs(y.data()[1] - e2 / z) < 1e-12);
    CHECK(std::abs(y.data()[2] - e3 / z) < 1e-12);
}

TEST_CASE("softmax rows are a probability simplex") {
    Rng rng = Rng::seeded(7);
    auto x = Tensor<double>::randn({17, 9}, rng, 3.0);
    auto y = softmax_lastdim(x);
    for (std::size_t r = 0; r < 17; ++r) {
        double s = 0;
        for (std::size_t c = 0; c < 9; ++c) {
            const double v = y.data()[r * 9 + c];
            CHECK(v >= 0);
            s += v;
        }
        CHECK(std::abs(s - 1.0) < 1e-6);
    }
}

TEST_CASE("layer_norm zero-variance and two-point standardization") {
    auto g = Tensor<double>::ones({4});
    auto b = Tensor<double>::zeros({4});
    auto x = Tensor<double>::filled({1, 4}, 3.25);
    auto y = layer_norm(x, g, b);
    for (double v : y.data()) CHECK(std::abs(v) < 1e-9);

    auto g2 = Tensor<double>::ones({2});
    auto b2 = Tensor<double>::zeros({2});
    auto x2 = Tensor<double>::from_data({1, 2}, {1, 3});
    auto y2 = layer_norm(x2, g2, b2);
    CHECK(y2.data()[0] == doctest::Approx(-1).epsilon(1e-4));
    CHECK(y2.data()[1] == doctest::Approx(1).epsilon(1e-4));
}

TEST_CASE("layer_norm gradient matches finite differences") {
    Rng rng = Rng::seeded(3);
    auto x = Tensor<double>::randn({5, 6}, rng);
    auto g = Tensor<double>::uniform({6}, rng, 0.5, 1.5);
    auto b = Tensor<double>::randn({6}, rng, 0.3);
    auto w = Tensor<double>::uniform({5, 6}, rng, -1, 1);
    const double err = test::fd_check<double>(
        {x, g, b}, [&]() { return sum_all(mul(layer_norm(x, g, b), w)); }, 1e-5);
    CHECK(err < 1e-4);
}

TEST_CASE("conv2d 1x1 identity kernel copies the input") {
    Rng rng = Rng::seeded(5);
    auto x = Tensor<double>::randn({1, 1, 3, 3}, rng);
    auto w = Tensor<double>::from_data({1, 1, 1, 1}, {1});
    auto y = conv2d(x, w, Tensor<double>(), 1, 0);
    CHECK(test::bitwise_equal(y.data(), x.data()));
}

TEST_CASE("conv2d counting window") {
    auto x = Tensor<double>::ones({1, 1, 4, 4});
    auto w = Tensor<double>::ones({1, 1, 2, 2});
    auto y = conv2d(x, w, Tensor<double>(), 2, 0);
    CHECK(y.shape() == Shape{1, 1, 2, 2});
    for (double v : y.data()) CHECK(v == doctest::Approx(4).epsilon(0));
}

TEST_CASE("conv2d against direct 6-loop oracle") {
    Rng rng = Rng::seeded(11);
    const std::size_t C = 2, H = 5, W = 6, O = 3, KH = 3, KW = 3, stride = 2, pad = 1;
    auto x = Tensor<double>::randn({1, C, H, W}, rng);
    auto w = Tensor<double>::randn({O, C, KH, KW}, rng);
    auto b = Tensor<double>::randn({O}, rng);
    auto y = conv2d(x, w, b, stride, pad);

    const std::size_t HO = (H + 2 * pad - KH) / stride + 1, WO = (W + 2 * pad - KW) / stride + 1;
    REQUIRE(y.shape() == Shape{1, O, HO, WO});
    for (std::size_t o = 0; o < O; ++o)
        for (std::size_t oy = 0; oy < HO; ++oy)
            for (std::size_t ox = 0; ox < WO; ++ox) {
                double acc = b.data()[o];
                for (std::size_t c = 0; c < C; ++c)
                    for (std::size_t i = 0; i < KH; ++i)
                        for (std::size_t j = 0; j < KW; ++j) {
                            const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(oy * stride + i) - 1;
                            const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(ox * stride + j) - 1;
                            if (sy < 0 || sx < 0 || sy >= static_cast<std::ptrdiff_t>(H) ||
                                sx >= static_cast<std::ptrdiff_t>(W))
                                continue;
                            acc += x.data()[(c * H + sy) * W + sx] * w.data()[((o * C + c) * KH + i) * KW + j];
                        }
                CHECK(std::abs(y.data()[(o * HO + oy) * WO + ox] - acc) < 1e-10);
            }
}

TEST_CASE("conv2d rejects nonpositive output extents") {
    auto x = Tensor<double>::zeros({1, 1, 2, 2});
    auto w = Tensor<double>::zeros({1, 1, 5, 5});
    CHECK_THROWS_AS((void)conv2d(x, w, Tensor<double>(), 1, 0), DimensionError);
}

TEST_CASE("conv2d gradient matches finite differences") {
    Rng rng = Rng::seeded(13);
    auto x = Tensor<double>::randn({2, 2, 5, 5}, rng);
    auto w = Tensor<double>::randn({3, 2, 3, 3}, rng, 0.5);
    auto b = Tensor<double>::randn({3}, rng, 0.2);
    auto ww = Tensor<double>::uniform({2, 3, 3, 3}, rng, -1, 1);
    const double err = test::fd_check<double>(
        {x, w, b}, [&]() { return sum_all(mul(conv2d(x, w, b, 2, 1), ww)); }, 1e-5);
    CHECK(err < 1e-6);
}

TEST_CASE("composite graph LN -> matmul -> softmax matches finite differences") {
    Rng rng = Rng::seeded(17);
    auto x = Tensor<double>::randn({4, 6}, rng);
    auto g = Tensor<double>::uniform({6}, rng, 0.5, 1.5);
    auto b = Tensor<double>::randn({6}, rng, 0.1);
    auto wm = Tensor<double>::randn({6, 5}, rng, 0.4);
    auto w = Tensor<double>::uniform({4, 5}, rng, -1, 1);
    const double err = test::fd_check<double>(
        {x, g, b, wm}, [&]() { return sum_all(mul(softmax_lastdim(matmul(layer_norm(x, g, b), wm)), w)); }, 1e-5);
    CHECK(err < 1e-4);
}

TEST_CASE("elementwise and structural op gradients") {
    Rng rng = Rng::seeded(23);
    auto x = Tensor<double>::randn({2, 3, 4, 4}, rng);
    SUBCASE("upsample_bilinear2x") {
        auto w = Tensor<double>::uniform({2, 3, 8, 8}, rng, -1, 1);
        const double err = test::fd_check<double>(
            {x}, [&]() { return sum_all(mul(upsample_bilinear2x(x), w)); }, 1e-5);
        CHECK(err < 1e-6);
    }
    SUBCASE("gelu") {
        auto w = Tensor<double>::uniform(x.shape(), rng, -1, 1);
        const double err = test::fd_check<double>(
            {x}, [&]() { return sum_all(mul(gelu(x), w)); }, 1e-5);
        CHECK(err < 1e-4);
    }
    SUBCASE("concat and narrow round") {
        auto y = Tensor<double>::randn({2, 2, 4, 4}, rng);
        auto w = Tensor<double>::uniform({2, 5, 4, 4}, rng, -1, 1);
        const double err = test::fd_check<double>(
            {x, y},
            [&]() {
                auto cat = concat<double>({x, y}, 1);
                auto part = narrow(cat, 1, 1, 5);
                return sum_all(mul(part, w));
            },
            1e-5);
        CHECK(err < 1e-6);
    }
    SUBCASE("batch_norm training mode") {
        auto g = Tensor<double>::uniform({3}, rng, 0.5, 1.5);
        auto b = Tensor<double>::randn({3}, rng, 0.2);
        auto rm = Tensor<double>::zeros({3});
        auto rv = Tensor<double>::ones({3});
        auto w = Tensor<double>::uniform(x.shape(), rng, -1, 1);
        const double err = test::fd_check<double>(
            {x, g, b},
            [&]() { return sum_all(mul(batch_norm2d(x, g, b, rm, rv, true, false), w)); }, 1e-5);
        CHECK(err < 1e-4);
    }
}

TEST_CASE("batch_norm eval mode uses running statistics") {
    auto x = Tensor<double>::from_data({1, 1, 1, 2}, {2.0, 4.0});
    auto g = Tensor<double>::ones({1});
    auto b = Tensor<double>::zeros({1});
    auto rm = Tensor<double>::from_data({1}, {1.0});
    auto rv = Tensor<double>::from_data({1}, {4.0});
    auto y = batch_norm2d(x, g, b, rm, rv, /*training=*/false, /*update_running=*/false);
    CHECK(y.data()[0] == doctest::Approx((2.0 - 1.0) / std::sqrt(4.0 + 1e-5)).epsilon(1e-9));
    CHECK(y.data()[1] == doctest::Approx((4.0 - 1.0) / std::sqrt(4.0 + 1e-5)).epsilon(1e-9));
}

TEST_CASE("gather pads with zeros and scatters gradients") {
    auto x = Tensor<double>::from_data({3}, {10, 20, 30});
    auto y = gather(x, {2, -1, 0, 0}, {4});
    CHECK(y.data() == std::vector<double>{30, 0, 10, 10});
    x.set_requires_grad(true);
    auto z = sum_all(gather(x, {2, -1, 0, 0}, {4}));
    z.backward();
    CHECK(x.grad() == std::vector<double>{2, 0, 1});
}

TEST_CASE("tensor invariants") {
    CHECK_THROWS_AS((void)Tensor<double>::from_data({2, 2}, {1, 2, 3}), DimensionError);
    auto t = Tensor<double>::zeros({2, 3});
    CHECK(t.size() == 6);
    CHECK(shape_numel(t.shape()) == t.size());
    CHECK(t.grad().size() == t.size());
}
