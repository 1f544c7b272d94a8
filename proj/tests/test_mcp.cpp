#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <numeric>

#include "support.hpp"
#include "unimd/mcp.hpp"

using namespace unimd;

namespace {

std::vector<int> iota_indices(int n) {
    std::vector<int> v(static_cast<std::size_t>(n));
    std::iota(v.begin(), v.end(), 0);
    return v;
}

Config small_config(std::size_t heads = 4) {
    Config cfg;
    cfg.backbone.d = 8;
    cfg.backbone.heads = heads;
    cfg.mcp.n_tokens = 3;
    cfg.mcp.bank_l = 8;
    return cfg;
}

std::vector<MemoryFrame> equal_frames(std::size_t n, const Tensor& features) {
    std::vector<MemoryFrame> frames;
    for (std::size_t i = 0; i < n; ++i) frames.push_back({static_cast<int>(i), features});
    return frames;
}

}  // namespace

TEST_CASE("select_memory below and at capacity returns everything") {
    CHECK(select_memory({0, 1, 2}, 50) == std::vector<int>{0, 1, 2});
    CHECK(select_memory(iota_indices(50), 50) == iota_indices(50));
    CHECK_THROWS_AS(select_memory({0}, 0), ConfigError);
}

TEST_CASE("select_memory over 100 tracked frames matches the rounding oracle") {
    const std::vector<int> expected{0,  2,  4,  6,  8,  10, 12, 14, 16, 18, 20, 22, 24,
                                    26, 28, 30, 32, 34, 36, 38, 40, 42, 44, 46, 48, 51,
                                    53, 55, 57, 59, 61, 63, 65, 67, 69, 71, 73, 75, 77,
                                    79, 81, 83, 85, 87, 89, 91, 93, 95, 97, 99};
    CHECK(select_memory(iota_indices(100), 50) == expected);
    for (int T = 2; T < 300; T += 7) {
        for (std::size_t L : {2u, 5u, 10u, 50u}) {
            const auto sel = select_memory(iota_indices(T), L);
            if (static_cast<std::size_t>(T) <= L) continue;
            REQUIRE(sel.size() == L);
            for (std::size_t i = 0; i < L; ++i) {
                const double pos = static_cast<double>(i) * (T - 1) / static_cast<double>(L - 1);
                CHECK(sel[i] == static_cast<int>(std::floor(pos + 0.5)));
            }
            CHECK(sel.front() == 0);
            CHECK(sel.back() == T - 1);
        }
    }
}

TEST_CASE("alibi bias values") {
    CHECK(alibi_bias(7, 7, 3) == 0.0);
    CHECK(alibi_bias(9, 10, 1) == -0.00390625);
    CHECK(alibi_bias(6, 10, 2) == -0.25);
    CHECK_THROWS_AS(alibi_bias(0, 10, 1), DimensionError);
}

TEST_CASE("bank insertion rules") {
    MemoryBank bank(50);
    CHECK(bank.empty());
    bank.insert(0, Tensor({4, 8}));
    CHECK(bank.size() == 1);
    CHECK_THROWS_AS(bank.insert(0, Tensor({4, 8})), StateError);
    CHECK_THROWS_AS(bank.insert(1, Tensor({5, 8})), DimensionError);

    MemoryBank fifo(50, MemoryPolicy::FifoEveryK, 5);
    for (int t = 0; t < 25; ++t) fifo.insert(t, Tensor({1, 2}));
    CHECK(fifo.indices() == std::vector<int>{0, 5, 10, 15, 20});

    MemoryBank small_fifo(3, MemoryPolicy::FifoEveryK, 5);
    for (int t = 0; t < 25; ++t) small_fifo.insert(t, Tensor({1, 2}));
    CHECK(small_fifo.indices() == std::vector<int>{10, 15, 20});
}

TEST_CASE("uniform bank stays at capacity, keeps endpoints and tracks the ideal sample") {
    MemoryBank bank(50);
    for (int t = 0; t < 200; ++t) {
        bank.insert(t, Tensor({1, 2}, static_cast<double>(t)));
        CHECK(bank.size() == std::min<std::size_t>(static_cast<std::size_t>(t) + 1, 50));
        CHECK(bank.indices().back() == t);
        CHECK(bank.indices().front() == 0);
        const auto idx = bank.indices();
        CHECK(std::is_sorted(idx.begin(), idx.end()));
    }
    const auto ideal = select_memory(bank.tracked(), 50);
    const auto kept = bank.indices();
    int worst = 0;
    for (std::size_t i = 0; i < 50; ++i) worst = std::max(worst, std::abs(kept[i] - ideal[i]));
    CHECK(worst <= 4);
    for (const MemoryFrame& f : bank.frames()) CHECK(f.features[0] == f.frame_index);
}

TEST_CASE("slopes follow 2^(-8/h)") {
    Rng rng(1);
    ParamStore ps;
    const McpModule m = McpModule::create(ps, small_config(8), rng);
    const auto s = m.slopes();
    REQUIRE(s.size() == 8);
    for (std::size_t h = 0; h < 8; ++h) CHECK(s[h] == std::pow(2.0, -8.0 / (h + 1.0)));
    for (ParamId id : m.params()) CHECK(ps.trainable(id));
}

TEST_CASE("identical single-frame tokens give uniform attention") {
    Rng rng(2);
    ParamStore ps;
    const McpModule m = McpModule::create(ps, small_config(), rng);
    const Tensor row = rng.normal_tensor({1, 8}, 1.0);
    Tensor feats({5, 8});
    for (std::size_t i = 0; i < 5; ++i) set_rows(feats, i, row);
    McpModule::Cache cache;
    const Tensor M = m.compress(ps, equal_frames(1, feats), &cache);
    CHECK(M.shape() == std::vector<std::size_t>{3, 8});
    for (const Tensor& p : cache.core.probs) {
        for (double v : p.values()) CHECK(v == doctest::Approx(0.2).epsilon(1e-14));
    }
    CHECK_THROWS_AS(m.compress(ps, {}), StateError);
}

TEST_CASE("equal-content attention ratio is exp(-m_h * gap) and decreases with distance") {
    Rng rng(3);
    ParamStore ps;
    const McpModule m = McpModule::create(ps, small_config(), rng);
    const Tensor feats = rng.normal_tensor({2, 8}, 1.0);
    const auto frames = equal_frames(17, feats);
    McpModule::Cache cache;
    m.compress(ps, frames, &cache);
    for (std::size_t h = 0; h < 4; ++h) {
        const Tensor& p = cache.core.probs[h];
        const std::size_t newest = 16 * 2;
        for (std::size_t gap = 1; gap <= 16; ++gap) {
            const double ratio = p(0, newest - 2 * gap) / p(0, newest);
            CHECK(std::abs(ratio - std::exp(-alibi_slope(h + 1) * gap)) < 1e-12);
            CHECK(p(0, newest - 2 * gap) < p(0, newest - 2 * (gap - 1)));
        }
    }
}

TEST_CASE("extrapolated bank keeps the far-tail mass under the geometric bound") {
    Rng rng(4);
    ParamStore ps;
    const McpModule m = McpModule::create(ps, small_config(), rng);
    const std::size_t K = 8, L = 40;
    const Tensor feats = rng.normal_tensor({1, 8}, 1.0);
    McpModule::Cache cache;
    m.compress(ps, equal_frames(L, feats), &cache);
    for (std::size_t h = 0; h < 4; ++h) {
        const double beta = -alibi_slope(h + 1);
        double tail = 0.0;
        for (std::size_t j = 0; j + K + 1 <= L - 1; ++j) tail += cache.core.probs[h](0, j);
        // the newest frame sits at distance 0 and its weight is 1/Σ e^{βk}
        const double newest = cache.core.probs[h](0, L - 1);
        const double bound = std::exp(beta * (K + 1)) / (1.0 - std::exp(beta));
        CHECK(tail / newest < bound);
    }
}

TEST_CASE("zero projections reduce compression to the queries") {
    Rng rng(5);
    ParamStore ps;
    const McpModule m = McpModule::create(ps, small_config(), rng);
    for (ParamId id : {m.lin_o.weight, m.ffn.fc2.weight, m.enh_attn.wo.weight, m.enh_ffn.fc2.weight,
                       *m.lin_o.bias, *m.ffn.fc2.bias, *m.enh_attn.wo.bias, *m.enh_ffn.fc2.bias}) {
        ps[id].value = Tensor(ps[id].value.shape());
    }
    const Tensor feats = rng.normal_tensor({4, 8}, 1.0);
    CHECK(m.compress(ps, equal_frames(3, feats)).values() == ps.value(m.query).values());
}

TEST_CASE("output shape is independent of bank size") {
    Rng rng(6);
    ParamStore ps;
    const McpModule m = McpModule::create(ps, small_config(), rng);
    MemoryBank bank(50);
    for (int t = 0; t < 60; ++t) {
        bank.insert(t, rng.normal_tensor({4, 8}, 1.0));
        CHECK(m.compress(ps, bank.frames()).shape() == std::vector<std::size_t>{3, 8});
    }
}

TEST_CASE("inference key/value cache reproduces the uncached output exactly") {
    Rng rng(7);
    ParamStore ps;
    const McpModule m = McpModule::create(ps, small_config(), rng);
    MemoryBank bank(6);
    KvCache kv;
    for (int t = 0; t < 20; ++t) {
        bank.insert(t, rng.normal_tensor({4, 8}, 1.0));
        kv.retain(bank.frames());
        CHECK(m.compress(ps, bank.frames(), nullptr, &kv).values() ==
              m.compress(ps, bank.frames()).values());
        CHECK(kv.kv.size() == bank.size());
    }
}

TEST_CASE("compress gradients on random 2-frame banks") {
    for (PositionBias bias : {PositionBias::Alibi, PositionBias::Absolute}) {
        for (int draw = 0; draw < 20; ++draw) {
            Rng rng(500 + draw);
            Config cfg = small_config(2);
            cfg.mcp.bias = bias;
            ParamStore ps;
            const McpModule m = McpModule::create(ps, cfg, rng);
            test::randomize(ps, rng, 0.4);
            std::vector<MemoryFrame> frames{{3, rng.normal_tensor({3, 8}, 1.0)},
                                            {7, rng.normal_tensor({3, 8}, 1.0)}};
            const Tensor w = rng.normal_tensor({3, 8}, 1.0);
            McpModule::Cache cache;
            m.compress(ps, frames, &cache);
            const auto dfeat = m.backward(ps, cache, w, true);
            const auto f = [&] { return test::weighted_sum(m.compress(ps, frames), w); };
            CHECK(test::param_grad_error(f, ps, m.params()) < 1e-4);
            CHECK(test::input_grad_error(f, frames[0].features, dfeat[0]) < 1e-4);
            CHECK(test::input_grad_error(f, frames[1].features, dfeat[1]) < 1e-4);
        }
    }
}
