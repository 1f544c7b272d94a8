#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "support.hpp"
#include "unimd/backbone.hpp"
#include "unimd/nn.hpp"

using namespace unimd;

TEST_CASE("linear layer gradients") {
    Rng rng(1);
    for (int draw = 0; draw < 20; ++draw) {
        ParamStore ps;
        const Linear lin = Linear::create(ps, "lin", 5, 3, true, rng);
        test::randomize(ps, rng, 0.5);
        Tensor x = rng.normal_tensor({4, 5}, 1.0);
        const Tensor w = rng.normal_tensor({4, 3}, 1.0);
        const Tensor dx = lin.backward(ps, x, w);
        const auto f = [&] { return test::weighted_sum(lin.forward(ps, x), w); };
        CHECK(test::param_grad_error(f, ps, lin.params()) < 1e-6);
        CHECK(test::input_grad_error(f, x, dx) < 1e-6);
    }
}

TEST_CASE("attention probabilities sum to one and honour the key bias") {
    Rng rng(2);
    const Tensor q = rng.normal_tensor({3, 8}, 1.0);
    const Tensor k = rng.normal_tensor({5, 8}, 1.0);
    const Tensor v = rng.normal_tensor({5, 8}, 1.0);
    KeyBias bias(2, std::vector<double>(5, 0.0));
    bias[1][4] = -1e9;
    AttentionCache cache;
    attention_core(q, k, v, 2, &bias, &cache);
    REQUIRE(cache.probs.size() == 2);
    for (const Tensor& p : cache.probs) {
        for (std::size_t r = 0; r < 3; ++r) {
            double s = 0.0;
            for (double x : p.row(r)) s += x;
            CHECK(s == doctest::Approx(1.0).epsilon(1e-14));
        }
    }
    CHECK(cache.probs[1](0, 4) < 1e-100);
    CHECK(cache.probs[0](0, 4) > 0.0);
}

TEST_CASE("multi-head attention gradients, cross and biased") {
    Rng rng(3);
    for (int draw = 0; draw < 20; ++draw) {
        ParamStore ps;
        const auto mha = MultiHeadAttention::create(ps, "mha", 8, 2, true, rng);
        test::randomize(ps, rng, 0.4);
        Tensor xq = rng.normal_tensor({3, 8}, 1.0);
        Tensor xkv = rng.normal_tensor({4, 8}, 1.0);
        KeyBias bias(2, std::vector<double>(4));
        for (auto& row : bias) {
            for (double& b : row) b = rng.normal(0.0, 1.0);
        }
        const Tensor w = rng.normal_tensor({3, 8}, 1.0);
        MultiHeadAttention::Cache cache;
        mha.forward(ps, xq, xkv, &bias, &cache);
        auto [dxq, dxkv] = mha.backward(ps, cache, w);
        const auto f = [&] { return test::weighted_sum(mha.forward(ps, xq, xkv, &bias, nullptr), w); };
        CHECK(test::param_grad_error(f, ps, mha.params()) < 1e-6);
        CHECK(test::input_grad_error(f, xq, dxq) < 1e-6);
        CHECK(test::input_grad_error(f, xkv, dxkv) < 1e-6);
    }
}

TEST_CASE("zero output projection gives an all-zero branch") {
    Rng rng(4);
    ParamStore ps;
    const auto mha = MultiHeadAttention::create(ps, "mha", 8, 2, true, rng, true);
    const auto ffn = FeedForward::create(ps, "ffn", 8, 16, 8, true, rng, true);
    const Tensor x = rng.normal_tensor({5, 8}, 1.0);
    CHECK(max_abs(mha.forward(ps, x, x, nullptr, nullptr)) == 0.0);
    CHECK(max_abs(ffn.forward(ps, x, nullptr)) == 0.0);
}

TEST_CASE("feed-forward and encoder layer gradients") {
    Rng rng(5);
    for (int draw = 0; draw < 20; ++draw) {
        ParamStore ps;
        const auto ffn = FeedForward::create(ps, "ffn", 6, 12, 6, true, rng);
        BackboneConfig bc;
        bc.d = 8;
        bc.heads = 2;
        bc.ffn_mult = 2;
        const auto layer = EncoderLayer::create(ps, "enc", bc, rng, true);
        test::randomize(ps, rng, 0.4);

        Tensor x = rng.normal_tensor({4, 6}, 1.0);
        const Tensor w = rng.normal_tensor({4, 6}, 1.0);
        FeedForward::Cache fc;
        ffn.forward(ps, x, &fc);
        const Tensor dx = ffn.backward(ps, fc, w);
        const auto f = [&] { return test::weighted_sum(ffn.forward(ps, x, nullptr), w); };
        CHECK(test::param_grad_error(f, ps, ffn.params()) < 1e-6);
        CHECK(test::input_grad_error(f, x, dx) < 1e-6);

        ps.zero_grad();
        Tensor z = rng.normal_tensor({5, 8}, 1.0);
        const Tensor wz = rng.normal_tensor({5, 8}, 1.0);
        EncoderLayer::Cache ec;
        layer.forward(ps, z, &ec);
        const Tensor dz = layer.backward(ps, ec, wz);
        const auto g = [&] { return test::weighted_sum(layer.forward(ps, z), wz); };
        CHECK(test::input_grad_error(g, z, dz) < 1e-6);
        std::vector<ParamId> ids;
        for (std::size_t i = 0; i < ps.size(); ++i) {
            if (ps[i].name.rfind("enc.", 0) == 0) ids.push_back(i);
        }
        CHECK(test::param_grad_error(g, ps, ids) < 1e-6);
    }
}
