#include "unimd/dsf.hpp"

#include <cassert>
#include <cmath>

namespace unimd {

DsfState DsfState::initial(std::size_t tokens, std::size_t inner, std::size_t state_dim) {
    DsfState s;
    s.h = Tensor({tokens, inner, state_dim});
    return s;
}

ScanResult ssm_recurrence(const Tensor& delta, const Tensor& A, const Tensor& B, const Tensor& C,
                          const Tensor& D, const Tensor& S1, const Tensor& h_prev) {
    const std::size_t n = S1.rows(), ds = S1.cols(), e = A.cols();
    if (delta.rows() != n || delta.cols() != ds || A.rows() != ds || B.rows() != n ||
        B.cols() != e || C.rows() != n || C.cols() != e || D.size() != ds ||
        h_prev.size() != n * ds * e) {
        throw DimensionError("ssm_recurrence: inconsistent shapes");
    }
    ScanResult r{Tensor({n, ds}), Tensor({n, ds, e})};
    for (std::size_t t = 0; t < n; ++t) {
        const double* bt = B.data() + t * e;
        const double* ct = C.data() + t * e;
        for (std::size_t c = 0; c < ds; ++c) {
            const double dt = delta(t, c);
            const double x = S1(t, c);
            const double* arow = A.data() + c * e;
            const double* hp = h_prev.data() + (t * ds + c) * e;
            double* hn = r.h.data() + (t * ds + c) * e;
            double y = 0.0;
            for (std::size_t k = 0; k < e; ++k) {
                const double abar = std::exp(dt * arow[k]);
                hn[k] = abar * hp[k] + dt * bt[k] * x;
                y += ct[k] * hn[k];
            }
            r.S(t, c) = y + D[c] * x;
        }
    }
    return r;
}

Tensor SsmParams::A(const ParamStore& ps) const {
    Tensor a = ps.value(a_log);
    for (double& v : a.values()) v = -std::exp(v);
    return a;
}

ScanResult ssm_scan(const ParamStore& ps, const SsmParams& p, const Tensor& S1, const Tensor& h_prev,
                    ScanCache* cache) {
    const std::size_t n = S1.rows();
    const std::size_t r = p.dt_rank, e = p.state_dim;
    const Tensor proj = p.x_proj.forward(ps, S1);
    const Tensor dt_low = slice_cols(proj, 0, r);
    Tensor B = slice_cols(proj, r, e);
    Tensor C = slice_cols(proj, r + e, e);
    Tensor dt_pre = p.dt_proj.forward(ps, dt_low);
    Tensor delta = softplus(dt_pre);
#ifndef NDEBUG
    for (double v : delta.values()) assert(v >= 0.0);
#endif
    const Tensor A = p.A(ps);
    ScanResult res = ssm_recurrence(delta, A, B, C, ps.value(p.d_skip), S1, h_prev);
    (void)n;
    if (cache) {
        cache->s1 = S1;
        cache->dt_low = dt_low;
        cache->dt_pre = std::move(dt_pre);
        cache->delta = std::move(delta);
        cache->B = std::move(B);
        cache->C = std::move(C);
        cache->A = A;
        cache->h_prev = h_prev;
        cache->h_new = res.h;
    }
    return res;
}

Tensor ssm_scan_backward(ParamStore& ps, const SsmParams& p, const ScanCache& cache,
                         const Tensor& dS, const Tensor& dh_next, Tensor& dh_prev) {
    const Tensor& S1 = cache.s1;
    const std::size_t n = S1.rows(), ds = S1.cols(), e = p.state_dim, r = p.dt_rank;
    const Tensor& A = cache.A;
    const Tensor& D = ps.value(p.d_skip);
    Tensor* gD = ps.grad_slot(p.d_skip);
    Tensor* gAlog = ps.grad_slot(p.a_log);

    Tensor dS1({n, ds});
    Tensor ddelta({n, ds});
    Tensor dB({n, e});
    Tensor dC({n, e});
    Tensor dA({ds, e});
    dh_prev = Tensor({n, ds, e});
    const bool has_next = !dh_next.empty();

    for (std::size_t t = 0; t < n; ++t) {
        const double* bt = cache.B.data() + t * e;
        const double* ct = cache.C.data() + t * e;
        for (std::size_t c = 0; c < ds; ++c) {
            const double g = dS(t, c);
            const double dt = cache.delta(t, c);
            const double x = S1(t, c);
            const std::size_t base = (t * ds + c) * e;
            const double* hp = cache.h_prev.data() + base;
            const double* hn = cache.h_new.data() + base;
            const double* arow = A.data() + c * e;
            double ds1 = g * D[c];
            if (gD) (*gD)[c] += g * x;
            double dd = 0.0;
            for (std::size_t k = 0; k < e; ++k) {
                double dh = g * ct[k];
                if (has_next) dh += dh_next[base + k];
                dC(t, k) += g * hn[k];
                const double abar = std::exp(dt * arow[k]);
                dh_prev[base + k] = dh * abar;
                const double dabar = dh * hp[k] * abar;  // d/d(Δ·A)
                dd += dabar * arow[k] + dh * bt[k] * x;
                dA(c, k) += dabar * dt;
                dB(t, k) += dh * dt * x;
                ds1 += dh * dt * bt[k];
            }
            ddelta(t, c) = dd;
            dS1(t, c) = ds1;
        }
    }
    if (gAlog) {
        for (std::size_t i = 0; i < dA.size(); ++i) (*gAlog)[i] += dA[i] * A[i];
    }
    Tensor ddt_pre = ddelta;
    for (std::size_t i = 0; i < ddt_pre.size(); ++i) ddt_pre[i] *= sigmoid(cache.dt_pre[i]);
    const Tensor ddt_low = p.dt_proj.backward(ps, cache.dt_low, ddt_pre);
    Tensor dproj({n, r + 2 * e});
    for (std::size_t t = 0; t < n; ++t) {
        for (std::size_t k = 0; k < r; ++k) dproj(t, k) = ddt_low(t, k);
        for (std::size_t k = 0; k < e; ++k) {
            dproj(t, r + k) = dB(t, k);
            dproj(t, r + e + k) = dC(t, k);
        }
    }
    dS1 += p.x_proj.backward(ps, S1, dproj);
    return dS1;
}

// ---------------------------------------------------------------------------

Tensor DynamicStateLayer::forward(const ParamStore& ps, const Tensor& O_S, const DsfState& state,
                                  DsfState& next, Cache* cache) const {
    Cache local;
    Cache& c = cache ? *cache : local;
    c.input = O_S;
    c.normed = norm.forward(ps, O_S, &c.norm);
    c.gate_pre = gate.forward(ps, c.normed);
    c.gate = silu(c.gate_pre);
    const Tensor lin = conv_in.forward(ps, c.normed);
    c.conv_pre = lin;
    Tensor conv = depthwise_conv1d(lin, ps.value(conv_kernel));
    const Tensor& cb = ps.value(conv_bias);
    for (std::size_t t = 0; t < conv.rows(); ++t) {
        auto row = conv.row(t);
        for (std::size_t j = 0; j < row.size(); ++j) row[j] += cb[j];
    }
    c.conv_out = conv;
    const Tensor S1 = silu(conv);

    const Tensor h_prev = state.h.size() == S1.rows() * inner * ssm.state_dim
                              ? state.h
                              : Tensor({S1.rows(), inner, ssm.state_dim});
    ScanResult scan = ssm_scan(ps, ssm, S1, h_prev, &c.scan);
    c.S = std::move(scan.S);
    c.gated = hadamard(c.gate, c.S);
    Tensor F = O_S + out.forward(ps, c.gated);

    next.h = std::move(scan.h);
    next.last_F = F;
    next.frames_seen = state.frames_seen + 1;
    return F;
}

Tensor DynamicStateLayer::backward(ParamStore& ps, const Cache& c, const Tensor& dF,
                                   const Tensor& dh_next, Tensor& dh_prev) const {
    const Tensor dgated = out.backward(ps, c.gated, dF);
    Tensor dG = hadamard(dgated, c.S);
    const Tensor dS = hadamard(dgated, c.gate);
    Tensor dS1 = ssm_scan_backward(ps, ssm, c.scan, dS, dh_next, dh_prev);

    Tensor dconv = dS1;
    for (std::size_t i = 0; i < dconv.size(); ++i) dconv[i] *= silu_grad(c.conv_out[i]);
    if (Tensor* gcb = ps.grad_slot(conv_bias)) {
        for (std::size_t t = 0; t < dconv.rows(); ++t)
            for (std::size_t j = 0; j < dconv.cols(); ++j) (*gcb)[j] += dconv(t, j);
    }
    const Tensor dlin = depthwise_conv1d_backward(dconv, c.conv_pre, ps.value(conv_kernel),
                                                  ps.grad_slot(conv_kernel));
    Tensor dI = conv_in.backward(ps, c.normed, dlin);
    for (std::size_t i = 0; i < dG.size(); ++i) dG[i] *= silu_grad(c.gate_pre[i]);
    dI += gate.backward(ps, c.normed, dG);
    return dF + norm.backward(ps, c.norm, dI);
}

Tensor dynamic_state_forward(const ParamStore& ps, const DynamicStateLayer& layer,
                             const Tensor& O_S, DsfState& state,
                             DynamicStateLayer::Cache* cache) {
    DsfState next;
    Tensor F = layer.forward(ps, O_S, state, next, cache);
    state = std::move(next);
    return F;
}

// ---------------------------------------------------------------------------

Tensor FusionBlock::fuse(const ParamStore& ps, const Tensor& x, const Tensor* F,
                         Cache* cache) const {
    if (cache) cache->skipped = (F == nullptr);
    if (!F) return x;
    if (F->cols() != x.cols()) {
        throw DimensionError("fuse: state features " + shape_string(F->shape()) +
                             " do not match width of " + shape_string(x.shape()));
    }
    const Tensor q = norm_q.forward(ps, x, cache ? &cache->nq : nullptr);
    const Tensor kv = norm_kv.forward(ps, *F, cache ? &cache->nkv : nullptr);
    return x + attn.forward(ps, q, kv, nullptr, cache ? &cache->attn : nullptr);
}

Tensor FusionBlock::backward(ParamStore& ps, const Cache& cache, const Tensor& dy,
                             Tensor* dF) const {
    if (cache.skipped) return dy;
    auto [dq, dkv] = attn.backward(ps, cache.attn, dy);
    Tensor dx = dy + norm_q.backward(ps, cache.nq, dq);
    const Tensor dfeat = norm_kv.backward(ps, cache.nkv, dkv);
    if (dF) {
        if (dF->empty()) *dF = dfeat;
        else *dF += dfeat;
    }
    return dx;
}

// ---------------------------------------------------------------------------

DsfModule DsfModule::create(ParamStore& ps, const std::string& name, const Config& cfg, Rng& rng) {
    const std::size_t d = cfg.backbone.d;
    const std::size_t ds = cfg.dsf_inner();
    const std::size_t e = cfg.dsf.state_dim;
    const std::size_t r = cfg.dsf_dt_rank();
    const std::size_t w = cfg.dsf.conv_width;

    DsfModule m;
    DynamicStateLayer& L = m.layer;
    L.inner = ds;
    L.norm = RmsNorm::create(ps, name + ".state.norm", d, true);
    L.gate = Linear::create(ps, name + ".state.gate", d, ds, true, rng);
    L.conv_in = Linear::create(ps, name + ".state.conv_in", d, ds, true, rng);
    {
        const double a = 1.0 / std::sqrt(static_cast<double>(w));
        L.conv_kernel = ps.add(name + ".state.conv.kernel", rng.uniform_tensor({w, ds}, -a, a), true);
        L.conv_bias = ps.add(name + ".state.conv.bias", Tensor({ds}), true);
    }
    L.ssm.dt_rank = r;
    L.ssm.state_dim = e;
    L.ssm.x_proj = Linear::create(ps, name + ".state.x_proj", ds, r + 2 * e, true, rng,
                                  Init::Xavier, false);
    L.ssm.dt_proj = Linear::create(ps, name + ".state.dt_proj", r, ds, true, rng, Init::Normal,
                                   true, 1.0 / std::sqrt(static_cast<double>(r)));
    {
        // step sizes start log-uniform in [1e-3, 1e-1]; bias is softplus⁻¹ of that
        Tensor& bias = ps[*L.ssm.dt_proj.bias].value;
        for (double& b : bias.values()) {
            const double dt = std::exp(rng.uniform(std::log(1e-3), std::log(1e-1)));
            b = dt + std::log(-std::expm1(-dt));
        }
        Tensor alog({ds, e});
        for (std::size_t c = 0; c < ds; ++c)
            for (std::size_t k = 0; k < e; ++k) alog(c, k) = std::log(static_cast<double>(k + 1));
        L.ssm.a_log = ps.add(name + ".state.A_log", std::move(alog), true);
        L.ssm.d_skip = ps.add(name + ".state.D", Tensor({ds}, 1.0), true);
    }
    L.out = Linear::create(ps, name + ".state.out", ds, d, true, rng, Init::Zero);

    for (auto [block, label] : {std::pair{&m.input_fusion, ".fuse_in"},
                                std::pair{&m.output_fusion, ".fuse_out"}}) {
        block->norm_q = RmsNorm::create(ps, name + label + ".norm_q", d, true);
        block->norm_kv = RmsNorm::create(ps, name + label + ".norm_kv", d, true);
        block->attn = MultiHeadAttention::create(ps, name + label + ".attn", d, cfg.backbone.heads,
                                                 true, rng, true);
    }
    return m;
}

std::vector<ParamId> DsfModule::params(const ParamStore& ps, const std::string& name) const {
    std::vector<ParamId> ids;
    for (std::size_t i = 0; i < ps.size(); ++i) {
        if (ps[i].name.rfind(name + ".", 0) == 0) ids.push_back(i);
    }
    return ids;
}

// ---------------------------------------------------------------------------

DecayEnvelope decay_envelope_check(const std::vector<Tensor>& delta_seq, const Tensor& A,
                                   std::size_t span) {
    if (span > delta_seq.size()) throw ValidationError("decay_envelope_check: span too long");
    const std::size_t ds = A.rows(), e = A.cols();
    DecayEnvelope env;
    if (span == 0) return env;
    Tensor prod({ds, e}, 1.0);
    double c = INFINITY;
    for (std::size_t s = 0; s < span; ++s) {
        const Tensor& delta = delta_seq[s];
        if (delta.size() != ds) throw DimensionError("decay_envelope_check: Δ width mismatch");
        for (std::size_t i = 0; i < ds; ++i) {
            if (!(delta[i] > 0.0)) {
                throw ValidationError("decay_envelope_check: Δ must be strictly positive");
            }
            for (std::size_t k = 0; k < e; ++k) {
                const double rate = delta[i] * std::abs(A(i, k));
                c = std::min(c, rate);
                prod(i, k) *= std::exp(delta[i] * A(i, k));
            }
        }
    }
    env.c = c;
    env.product_norm = max_abs(prod);
    env.bound = std::exp(-c * static_cast<double>(span));
    // a product of rounded exponentials can exceed the exact envelope by a few ulps
    if (env.product_norm > env.bound * (1.0 + 1e-12)) {
        throw NumericError("decay_envelope_check: cumulative decay exceeds exp(-c·span)");
    }
    return env;
}

}  // namespace unimd
