#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "support.hpp"
#include "unimd/mcp.hpp"
#include "unimd/theory.hpp"

using namespace unimd;

TEST_CASE("tail mass at beta=-0.1, K=45") {
    const TailMassReport r = tail_mass(-0.1, 45, 200, 0.01);
    CHECK(r.bound == doctest::Approx(0.10562802665896474).epsilon(1e-13));
    CHECK(r.exact_tail == doctest::Approx(0.10562800706083195).epsilon(1e-13));
    CHECK(r.exact_tail < r.bound);
    CHECK(r.strictly_below());
    CHECK(std::exp(r.log_remainder) == doctest::Approx(std::exp(-0.1 * 201) / (1 - std::exp(-0.1))).epsilon(1e-13));
    CHECK(tail_mass(-3.0, 10, 10000).strictly_below());
    CHECK(r.horizon == doctest::Approx(45.051701859880914).epsilon(1e-13));
    CHECK(tail_exact(-20.0, 1, 100) < 1e-8);
    CHECK_THROWS_AS(tail_mass(0.0, 1, 2), ValidationError);
    CHECK_THROWS_AS(tail_mass(0.3, 1, 2), ValidationError);
    CHECK_THROWS_AS(tail_mass(-0.3, 5, 5), ValidationError);
}

TEST_CASE("closed-form tail equals naive summation and grows toward the bound") {
    for (double mag = 0.01; mag <= 5.0; mag *= 1.7) {
        const double beta = -mag;
        double last = 0.0;
        for (std::size_t L : {11u, 50u, 300u, 2000u, 10000u}) {
            const double exact = tail_exact(beta, 10, L);
            const double naive = tail_naive(beta, 10, L);
            CHECK(std::abs(exact - naive) <= 1e-12 * std::max(1.0, naive));
            CHECK(exact >= last);
            CHECK(exact <= tail_bound(beta, 10));
            CHECK(tail_mass(beta, 10, L).strictly_below());
            if (std::exp(log_tail_remainder(beta, L)) > 1e-12 * tail_bound(beta, 10)) {
                CHECK(exact < tail_bound(beta, 10));
            }
            last = exact;
        }
    }
}

TEST_CASE("smallest bounded K follows the exact geometric inversion") {
    // independent values: linear search over K of e^{β(K+1)}/(1−e^β) ≤ η
    struct Row {
        double beta, eta;
        std::size_t K;
    };
    const Row rows[] = {{-0.01, 0.1, 691}, {-0.01, 0.01, 921}, {-0.01, 0.001, 1151},
                        {-0.05, 0.1, 106}, {-0.05, 0.01, 152}, {-0.05, 0.001, 198},
                        {-0.1, 0.1, 46},   {-0.1, 0.01, 69},   {-0.1, 0.001, 92},
                        {-0.5, 0.1, 6},    {-0.5, 0.01, 11},   {-0.5, 0.001, 15}};
    for (const Row& r : rows) {
        const std::size_t K = smallest_bounded_K(r.beta, r.eta);
        CHECK(K == r.K);
        CHECK(tail_bound(r.beta, K) <= r.eta);
        if (K > 0) CHECK(tail_bound(r.beta, K - 1) > r.eta);
        const double inverted = std::log(r.eta * (1.0 - std::exp(r.beta))) / r.beta - 1.0;
        CHECK(static_cast<double>(K) == std::ceil(inverted));
    }
}

TEST_CASE("attention ratio law") {
    CHECK(attention_ratio_law(-0.3, 0) == 1.0);
    CHECK(attention_ratio_law(-0.25, 4) == doctest::Approx(0.36787944117144233).epsilon(1e-14));
    Rng rng(1);
    for (int i = 0; i < 100; ++i) {
        const double beta = -rng.uniform(0.001, 2.0);
        const std::size_t gap = 1 + rng.index(16);
        const double a = attention_ratio_law(beta, gap);
        const double b = attention_ratio_law(beta, gap, gap + 1 + rng.index(200));
        CHECK(std::abs(a - std::exp(beta * gap)) < 1e-12);
        CHECK(std::abs(a - b) < 1e-12);
    }
}

TEST_CASE("scalar impulse: lag-1 influence is exactly the decay factor 0.5") {
    // Δ = softplus(0) = ln 2 and A = −1 give Ā = 0.5; B = C = S1
    Rng rng(0);
    ParamStore ps;
    SsmParams p;
    p.dt_rank = 1;
    p.state_dim = 1;
    p.x_proj = Linear::create(ps, "x_proj", 1, 3, false, rng, Init::Zero, false);
    ps[p.x_proj.weight].value = Tensor::matrix(1, 3, {0.0, 1.0, 1.0});
    p.dt_proj = Linear::create(ps, "dt_proj", 1, 1, false, rng, Init::Zero, true);
    p.a_log = ps.add("a_log", Tensor({1, 1}, 0.0), false);
    p.d_skip = ps.add("d", Tensor({1}, 0.0), false);

    const auto rows = ssm_influence_decay(ps, p, 1, {0, 1, 2, 3}, rng);
    CHECK(rows[0].state_ratio == 1.0);
    CHECK(rows[1].state_ratio == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(rows[2].state_ratio == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(rows[1].bound == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(rows[0].measured <= 1.0);
    for (const auto& r : rows) CHECK(r.measured <= r.bound * (1.0 + 1e-12));
}

TEST_CASE("impulse response stays under the envelope for random draws") {
    Config cfg;
    cfg.backbone.d = 8;
    cfg.backbone.heads = 2;
    cfg.dsf.state_dim = 4;
    for (int draw = 0; draw < 100; ++draw) {
        Rng rng(1000 + draw);
        ParamStore ps;
        const DsfModule m = DsfModule::create(ps, "dsf", cfg, rng);
        Tensor& alog = ps[m.layer.ssm.a_log].value;
        for (double& v : alog.values()) v = rng.uniform(std::log(0.05), std::log(20.0));
        const auto rows = ssm_influence_decay(ps, m.layer.ssm, 3, {0, 1, 2, 4, 8, 16}, rng);
        for (const auto& r : rows) {
            CHECK(r.measured <= r.bound * (1.0 + 1e-12));
            CHECK(r.state_ratio <= r.bound * (1.0 + 1e-12));
        }
    }
}

TEST_CASE("finite-difference state sensitivity decays under exp(-c k)") {
    Config cfg;
    cfg.backbone.d = 4;
    cfg.backbone.heads = 1;
    cfg.dsf.state_dim = 2;
    Rng rng(9);
    ParamStore ps;
    const DsfModule m = DsfModule::create(ps, "dsf", cfg, rng);
    for (double& v : ps[*m.layer.ssm.dt_proj.bias].value.values()) v = rng.uniform(-1.0, 1.0);
    const SsmParams& p = m.layer.ssm;
    const std::size_t ds = cfg.dsf_inner(), e = 2;
    std::vector<Tensor> xs;
    for (int t = 0; t <= 8; ++t) xs.push_back(rng.normal_tensor({1, ds}, 1.0));

    const auto state_at = [&](std::size_t k) {
        Tensor h({1, ds, e});
        for (std::size_t t = 0; t <= k; ++t) h = ssm_scan(ps, p, xs[t], h).h;
        return h;
    };
    // Frobenius norm of the Jacobian ∂h(k)/∂S1(0), row by row
    const auto jacobian_norm = [&](std::size_t k) {
        double sq = 0.0;
        for (std::size_t i = 0; i < ds * e; ++i) {
            const Tensor g = finite_diff_grad([&] { return state_at(k)[i]; }, xs[0]);
            sq += frobenius(g) * frobenius(g);
        }
        return std::sqrt(sq);
    };
    std::vector<Tensor> deltas;
    for (std::size_t t = 1; t <= 8; ++t) {
        ScanCache c;
        ssm_scan(ps, p, xs[t], Tensor({1, ds, e}), &c);
        deltas.push_back(c.delta.reshaped({ds}));
    }
    const Tensor A = p.A(ps);
    const double j0 = jacobian_norm(0);
    REQUIRE(j0 > 0.0);
    for (std::size_t k : {1u, 2u, 4u, 8u}) {
        const DecayEnvelope env = decay_envelope_check(deltas, A, k);
        CHECK(jacobian_norm(k) <= env.bound * j0 * (1.0 + 1e-6) + 1e-8);
    }
}

TEST_CASE("theory report covers the deployed slopes") {
    std::vector<double> betas;
    for (std::size_t h = 1; h <= 4; ++h) betas.push_back(-alibi_slope(h));
    const TheoryReport rep = verify_theory(betas, 50, 200, {0.1, 0.01, 0.001}, 5, 3);
    CHECK(rep.csv.rfind("check,beta,param,measured,bound,passed\n", 0) == 0);
    CHECK(rep.text.find("PASS tail_mass") != std::string::npos);
    CHECK(rep.text.find("ratio_law") != std::string::npos);
    CHECK(rep.text.find("ssm_decay") != std::string::npos);
}
