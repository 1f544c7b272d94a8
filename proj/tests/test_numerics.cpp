#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <limits>

#include "support.hpp"
#include "unimd/numerics.hpp"

using namespace unimd;

TEST_CASE("softmax of [ln1, ln3] is [0.25, 0.75]") {
    const Tensor p = softmax_rows(Tensor::matrix(1, 2, {std::log(1.0), std::log(3.0)}));
    CHECK(p[0] == doctest::Approx(0.25).epsilon(1e-15));
    CHECK(p[1] == doctest::Approx(0.75).epsilon(1e-15));
}

TEST_CASE("softmax rows sum to one and reject non-finite input") {
    Rng rng(3);
    const Tensor x = rng.normal_tensor({7, 11}, 5.0);
    const Tensor p = softmax_rows(x);
    for (std::size_t r = 0; r < 7; ++r) {
        double s = 0.0;
        for (double v : p.row(r)) s += v;
        CHECK(s == doctest::Approx(1.0).epsilon(1e-14));
    }
    Tensor bad = x;
    bad(2, 3) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(softmax_rows(bad), NumericError);
}

TEST_CASE("matmul variants agree and check shapes") {
    const Tensor a = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
    const Tensor b = Tensor::matrix(3, 2, {7, 8, 9, 10, 11, 12});
    const Tensor c = matmul(a, b);
    CHECK(c.values() == std::vector<double>{58, 64, 139, 154});
    CHECK(matmul_tn(transpose(a), b).values() == c.values());
    CHECK(matmul_nt(a, transpose(b)).values() == c.values());
    CHECK_THROWS_AS(matmul(a, a), DimensionError);
    Tensor acc({2, 2}, 1.0);
    matmul_tn_acc(transpose(a), b, acc);
    CHECK(acc.values() == std::vector<double>{59, 65, 140, 155});
}

TEST_CASE("row helpers") {
    const Tensor a = Tensor::matrix(3, 2, {1, 2, 3, 4, 5, 6});
    CHECK(slice_rows(a, 1, 2).values() == std::vector<double>{3, 4, 5, 6});
    CHECK(slice_cols(a, 1, 1).values() == std::vector<double>{2, 4, 6});
    CHECK(column_sums(a).values() == std::vector<double>{9, 12});
    CHECK(row_mean(a).values() == std::vector<double>{3, 4});
    const Tensor empty;
    const Tensor joined = concat_rows({&empty, &a, &a});
    CHECK(joined.rows() == 6);
    Tensor z({3, 2});
    add_rows(z, 1, slice_rows(a, 0, 2));
    CHECK(z.values() == std::vector<double>{0, 0, 1, 2, 3, 4});
}

TEST_CASE("elementwise functions match their closed forms") {
    CHECK(sigmoid(0.0) == 0.5);
    CHECK(softplus(0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    CHECK(softplus(50.0) == 50.0);
    CHECK(silu(1.0) == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))).epsilon(1e-15));
    for (double x : {-3.0, -0.7, 0.0, 0.4, 2.5}) {
        const double h = 1e-6;
        CHECK(silu_grad(x) == doctest::Approx((silu(x + h) - silu(x - h)) / (2 * h)).epsilon(1e-8));
        CHECK(gelu_grad(x) == doctest::Approx((gelu(x + h) - gelu(x - h)) / (2 * h)).epsilon(1e-8));
    }
}

TEST_CASE("rms_norm and layer_norm backward match finite differences") {
    Rng rng(11);
    for (int draw = 0; draw < 20; ++draw) {
        Tensor x = rng.normal_tensor({4, 6}, 1.5);
        Tensor gain = rng.normal_tensor({6}, 1.0);
        Tensor bias = rng.normal_tensor({6}, 1.0);
        const Tensor w = rng.normal_tensor({4, 6}, 1.0);

        RmsNormCache rc;
        rms_norm(x, gain, 1e-6, &rc);
        Tensor dgain({6});
        const Tensor dx = rms_norm_backward(w, gain, rc, &dgain);
        const auto f_rms = [&] { return test::weighted_sum(rms_norm(x, gain, 1e-6), w); };
        CHECK(test::input_grad_error(f_rms, x, dx) < 1e-6);
        CHECK(test::input_grad_error(f_rms, gain, dgain) < 1e-6);

        LayerNormCache lc;
        layer_norm(x, gain, bias, 1e-6, &lc);
        Tensor lg({6}), lb({6});
        const Tensor ldx = layer_norm_backward(w, gain, lc, &lg, &lb);
        const auto f_ln = [&] { return test::weighted_sum(layer_norm(x, gain, bias, 1e-6), w); };
        CHECK(test::input_grad_error(f_ln, x, ldx) < 1e-6);
        CHECK(test::input_grad_error(f_ln, gain, lg) < 1e-6);
        CHECK(test::input_grad_error(f_ln, bias, lb) < 1e-6);
    }
}

TEST_CASE("depthwise causal convolution") {
    const Tensor x = Tensor::matrix(3, 1, {1, 2, 3});
    const Tensor k = Tensor::matrix(2, 1, {10, 1});  // previous token, current token
    CHECK(depthwise_conv1d(x, k).values() == std::vector<double>{1, 12, 23});

    Rng rng(5);
    for (int draw = 0; draw < 20; ++draw) {
        Tensor xx = rng.normal_tensor({5, 3}, 1.0);
        Tensor kk = rng.normal_tensor({4, 3}, 1.0);
        const Tensor w = rng.normal_tensor({5, 3}, 1.0);
        Tensor dk({4, 3});
        const Tensor dx = depthwise_conv1d_backward(w, xx, kk, &dk);
        const auto f = [&] { return test::weighted_sum(depthwise_conv1d(xx, kk), w); };
        CHECK(test::input_grad_error(f, xx, dx) < 1e-7);
        CHECK(test::input_grad_error(f, kk, dk) < 1e-7);
    }
}

TEST_CASE("parameter store partitions") {
    ParamStore ps;
    const ParamId a = ps.add("a", Tensor({2}), true);
    const ParamId b = ps.add("b", Tensor({3}), false);
    CHECK_THROWS_AS(ps.add("a", Tensor({1}), true), ConfigError);
    CHECK(ps.grad_slot(a) != nullptr);
    CHECK(ps.grad_slot(b) == nullptr);
    CHECK(ps.count_values(true) == 2);
    CHECK(ps.count_values(false) == 5);
    CHECK(ps.id("b") == b);
    CHECK_FALSE(ps.find("c").has_value());
}

TEST_CASE("rng is deterministic and substreams differ") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.normal() == b.normal());
    CHECK(Rng::derive(42, 1) != Rng::derive(42, 2));
    Rng u(7);
    for (int i = 0; i < 1000; ++i) {
        const double v = u.uniform();
        CHECK(v >= 0.0);
        CHECK(v < 1.0);
    }
}

TEST_CASE("relative error") {
    const Tensor a = Tensor::matrix(1, 2, {1.0, 0.0});
    const Tensor b = Tensor::matrix(1, 2, {1.0, 1e-3});
    CHECK(relative_error(a, a) == 0.0);
    CHECK(relative_error(a, b) == doctest::Approx(1e-3).epsilon(1e-5));
}
