#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "support.hpp"
#include "unimd/dsf.hpp"

using namespace unimd;

namespace {

Config tiny_config() {
    Config cfg;
    cfg.backbone.d = 2;
    cfg.backbone.heads = 1;
    cfg.dsf.inner_mult = 2;  // d_s = 4
    cfg.dsf.state_dim = 2;
    cfg.dsf.conv_width = 4;
    return cfg;
}

// Scalar SSM whose x_proj/dt_proj give Δ = softplus(0) = ln 2, B = C = 1.
struct ScalarSsm {
    ParamStore ps;
    SsmParams p;
    ScalarSsm() {
        Rng rng(0);
        p.dt_rank = 1;
        p.state_dim = 1;
        p.x_proj = Linear::create(ps, "x_proj", 1, 3, false, rng, Init::Zero, false);
        ps[p.x_proj.weight].value = Tensor::matrix(1, 3, {0.0, 1.0, 1.0});
        p.dt_proj = Linear::create(ps, "dt_proj", 1, 1, false, rng, Init::Zero, true);
        p.a_log = ps.add("a_log", Tensor({1, 1}, 0.0), false);
        p.d_skip = ps.add("d", Tensor({1}, 0.0), false);
    }
};

}  // namespace

TEST_CASE("scalar recurrence: h = 0.693147 then 1.039721") {
    const Tensor delta({1, 1}, std::log(2.0));
    const Tensor A({1, 1}, -1.0), B({1, 1}, 1.0), C({1, 1}, 1.0), D({1}, 0.0), S1({1, 1}, 1.0);
    const ScanResult s1 = ssm_recurrence(delta, A, B, C, D, S1, Tensor({1, 1, 1}));
    CHECK(s1.h[0] == doctest::Approx(0.6931471805599453).epsilon(1e-12));
    CHECK(s1.S[0] == doctest::Approx(0.6931471805599453).epsilon(1e-12));
    const ScanResult s2 = ssm_recurrence(delta, A, B, C, D, S1, s1.h);
    CHECK(s2.h[0] == doctest::Approx(1.0397207708399179).epsilon(1e-12));
    CHECK(s2.S[0] == doctest::Approx(1.0397207708399179).epsilon(1e-12));
}

TEST_CASE("scalar recurrence through the parameterized scan") {
    ScalarSsm s;
    const Tensor S1({1, 1}, 1.0);
    const ScanResult r1 = ssm_scan(s.ps, s.p, S1, Tensor({1, 1, 1}));
    const ScanResult r2 = ssm_scan(s.ps, s.p, S1, r1.h);
    CHECK(std::abs(r1.h[0] - 0.6931471805599453) < 1e-9);
    CHECK(std::abs(r2.h[0] - 1.0397207708399179) < 1e-9);
}

TEST_CASE("zero step size is the identity transition") {
    Rng rng(1);
    const Tensor delta({3, 2}, 0.0);
    const Tensor A = rng.uniform_tensor({2, 4}, -3.0, -0.1);
    const Tensor B = rng.normal_tensor({3, 4}, 1.0), C = rng.normal_tensor({3, 4}, 1.0);
    const Tensor D = rng.normal_tensor({2}, 1.0), S1 = rng.normal_tensor({3, 2}, 1.0);
    const Tensor h = rng.normal_tensor({3, 2, 4}, 1.0);
    const ScanResult r = ssm_recurrence(delta, A, B, C, D, S1, h);
    CHECK(r.h.values() == h.values());
    for (std::size_t t = 0; t < 3; ++t) {
        for (std::size_t c = 0; c < 2; ++c) {
            double y = D[c] * S1(t, c);
            for (std::size_t k = 0; k < 4; ++k) y += C(t, k) * h[(t * 2 + c) * 4 + k];
            CHECK(r.S(t, c) == doctest::Approx(y).epsilon(1e-14));
        }
    }
    const ScanResult z = ssm_recurrence(rng.uniform_tensor({3, 2}, 0.1, 1.0), A, B, C, D,
                                        Tensor({3, 2}), Tensor({3, 2, 4}));
    CHECK(max_abs(z.h) == 0.0);
    CHECK(max_abs(z.S) == 0.0);
}

TEST_CASE("module initialization invariants") {
    Config cfg;
    Rng rng(2);
    ParamStore ps;
    const DsfModule m = DsfModule::create(ps, "dsf0", cfg, rng);
    for (double a : m.layer.ssm.A(ps).values()) CHECK(a < 0.0);
    CHECK(max_abs(ps.value(m.layer.out.weight)) == 0.0);
    CHECK(max_abs(ps.value(m.input_fusion.attn.wo.weight)) == 0.0);
    CHECK(max_abs(ps.value(m.output_fusion.attn.wo.weight)) == 0.0);
    for (ParamId id : m.params(ps, "dsf0")) CHECK(ps.trainable(id));

    const Tensor O_S = rng.normal_tensor({cfg.n_search(), cfg.backbone.d}, 1.0);
    DsfState state = DsfState::initial(cfg.n_search(), cfg.dsf_inner(), cfg.dsf.state_dim);
    CHECK(max_abs(state.h) == 0.0);
    CHECK_FALSE(state.last_F.has_value());
    const Tensor F = dynamic_state_forward(ps, m.layer, O_S, state);
    CHECK(F.values() == O_S.values());
    CHECK(state.frames_seen == 1);
    CHECK(state.last_F.has_value());

    const Tensor x = rng.normal_tensor({7, cfg.backbone.d}, 1.0);
    CHECK(m.input_fusion.fuse(ps, x, nullptr).values() == x.values());
    CHECK(m.input_fusion.fuse(ps, x, &F).values() == x.values());
}

TEST_CASE("closed gate leaves F equal to O_S; open layer accumulates state") {
    const Config cfg = tiny_config();
    Rng rng(3);
    ParamStore ps;
    const DsfModule m = DsfModule::create(ps, "dsf", cfg, rng);
    ps[m.layer.out.weight].value = rng.normal_tensor({4, 2}, 1.0);
    const Tensor O_S = rng.normal_tensor({4, 2}, 1.0);

    ParamStore closed = ps;
    closed[m.layer.gate.weight].value = Tensor({2, 4});
    closed[*m.layer.gate.bias].value = Tensor({4});
    DsfState s0 = DsfState::initial(4, 4, 2);
    CHECK(dynamic_state_forward(closed, m.layer, O_S, s0).values() == O_S.values());

    DsfState s = DsfState::initial(4, 4, 2);
    const Tensor F1 = dynamic_state_forward(ps, m.layer, O_S, s);
    const Tensor F2 = dynamic_state_forward(ps, m.layer, O_S, s);
    CHECK(max_abs(F1 - F2) > 1e-8);
    CHECK(s.frames_seen == 2);
}

TEST_CASE("single state token receives all attention") {
    Config cfg = tiny_config();
    cfg.backbone.d = 4;
    cfg.backbone.heads = 2;
    Rng rng(4);
    ParamStore ps;
    const DsfModule m = DsfModule::create(ps, "dsf", cfg, rng);
    const Tensor x = rng.normal_tensor({5, 4}, 1.0);
    const Tensor F = rng.normal_tensor({1, 4}, 1.0);
    FusionBlock::Cache cache;
    m.output_fusion.fuse(ps, x, &F, &cache);
    for (const Tensor& p : cache.attn.core.probs) {
        for (double v : p.values()) CHECK(v == 1.0);
    }
    const Tensor wrong = rng.normal_tensor({2, 3}, 1.0);
    CHECK_THROWS_AS(m.output_fusion.fuse(ps, x, &wrong), DimensionError);
}

TEST_CASE("dynamic state layer gradients at d_s=4, e=2, N_S=4") {
    const Config cfg = tiny_config();
    for (int draw = 0; draw < 20; ++draw) {
        Rng rng(100 + draw);
        ParamStore ps;
        const DsfModule m = DsfModule::create(ps, "dsf", cfg, rng);
        test::randomize(ps, rng, 0.5);
        const std::vector<ParamId> ids = m.params(ps, "dsf.state");
        Tensor O_S = rng.normal_tensor({4, 2}, 1.0);
        DsfState prev = DsfState::initial(4, 4, 2);
        prev.h = rng.normal_tensor({4, 4, 2}, 1.0);
        const Tensor wF = rng.normal_tensor({4, 2}, 1.0);
        const Tensor wh = rng.normal_tensor({4, 4, 2}, 1.0);

        DynamicStateLayer::Cache cache;
        DsfState next;
        m.layer.forward(ps, O_S, prev, next, &cache);
        Tensor dh_prev;
        const Tensor dO = m.layer.backward(ps, cache, wF, wh, dh_prev);
        const auto f = [&] {
            DsfState n;
            const Tensor F = m.layer.forward(ps, O_S, prev, n);
            return test::weighted_sum(F, wF) + test::weighted_sum(n.h, wh);
        };
        CHECK(test::param_grad_error(f, ps, ids) < 1e-4);
        CHECK(test::input_grad_error(f, O_S, dO) < 1e-4);
        CHECK(test::input_grad_error(f, prev.h, dh_prev) < 1e-4);
    }
}

TEST_CASE("two-frame backpropagation through the carried state") {
    const Config cfg = tiny_config();
    for (int draw = 0; draw < 20; ++draw) {
        Rng rng(200 + draw);
        ParamStore ps;
        const DsfModule m = DsfModule::create(ps, "dsf", cfg, rng);
        test::randomize(ps, rng, 0.5);
        const std::vector<ParamId> ids = m.params(ps, "dsf.state");
        Tensor x1 = rng.normal_tensor({4, 2}, 1.0);
        const Tensor x2 = rng.normal_tensor({4, 2}, 1.0);
        const Tensor w1 = rng.normal_tensor({4, 2}, 1.0), w2 = rng.normal_tensor({4, 2}, 1.0);

        const DsfState s0 = DsfState::initial(4, 4, 2);
        DsfState s1, s2;
        DynamicStateLayer::Cache c1, c2;
        m.layer.forward(ps, x1, s0, s1, &c1);
        m.layer.forward(ps, x2, s1, s2, &c2);
        Tensor dh1, dh0;
        m.layer.backward(ps, c2, w2, Tensor(), dh1);
        const Tensor dx1 = m.layer.backward(ps, c1, w1, dh1, dh0);

        const auto f = [&] {
            DsfState a, b;
            const Tensor F1 = m.layer.forward(ps, x1, s0, a);
            const Tensor F2 = m.layer.forward(ps, x2, a, b);
            return test::weighted_sum(F1, w1) + test::weighted_sum(F2, w2);
        };
        CHECK(test::param_grad_error(f, ps, ids) < 1e-4);
        CHECK(test::input_grad_error(f, x1, dx1) < 1e-4);
    }
}

TEST_CASE("fusion block gradients") {
    Config cfg = tiny_config();
    cfg.backbone.d = 4;
    cfg.backbone.heads = 2;
    for (int draw = 0; draw < 20; ++draw) {
        Rng rng(300 + draw);
        ParamStore ps;
        const DsfModule m = DsfModule::create(ps, "dsf", cfg, rng);
        test::randomize(ps, rng, 0.5);
        Tensor x = rng.normal_tensor({6, 4}, 1.0);
        Tensor F = rng.normal_tensor({3, 4}, 1.0);
        const Tensor w = rng.normal_tensor({6, 4}, 1.0);
        FusionBlock::Cache cache;
        m.input_fusion.fuse(ps, x, &F, &cache);
        Tensor dF;
        const Tensor dx = m.input_fusion.backward(ps, cache, w, &dF);
        const auto f = [&] { return test::weighted_sum(m.input_fusion.fuse(ps, x, &F), w); };
        CHECK(test::param_grad_error(f, ps, m.params(ps, "dsf.fuse_in")) < 1e-4);
        CHECK(test::input_grad_error(f, x, dx) < 1e-4);
        CHECK(test::input_grad_error(f, F, dF) < 1e-4);
    }
}

TEST_CASE("decay envelope") {
    const Tensor A({1, 1}, -1.0);
    const std::vector<Tensor> ones(3, Tensor({1}, 1.0));
    const DecayEnvelope e3 = decay_envelope_check(ones, A, 3);
    CHECK(e3.product_norm == doctest::Approx(0.049787068367863944).epsilon(1e-14));
    CHECK(e3.bound == doctest::Approx(0.049787068367863944).epsilon(1e-14));
    const DecayEnvelope e0 = decay_envelope_check(ones, A, 0);
    CHECK(e0.product_norm == 1.0);
    CHECK(e0.bound == 1.0);
    CHECK_THROWS_AS(decay_envelope_check({Tensor({1}, 0.0)}, A, 1), ValidationError);
    CHECK_THROWS_AS(decay_envelope_check({Tensor({1}, -0.5)}, A, 1), ValidationError);

    Rng rng(5);
    for (int draw = 0; draw < 1000; ++draw) {
        const Tensor AA = rng.uniform_tensor({3, 2}, -4.0, -0.01);
        std::vector<Tensor> deltas;
        for (int s = 0; s < 6; ++s) deltas.push_back(rng.uniform_tensor({3}, 1e-3, 1.0));
        double last = 1.0;
        for (std::size_t span = 0; span <= 6; ++span) {
            const DecayEnvelope e = decay_envelope_check(deltas, AA, span);
            CHECK(e.product_norm <= e.bound * (1.0 + 1e-12));
            CHECK(e.product_norm <= last);
            last = e.product_norm;
        }
    }
}
