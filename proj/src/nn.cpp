#include "unimd/nn.hpp"

#include <algorithm>
#include <cmath>

namespace unimd {

Linear Linear::create(ParamStore& ps, const std::string& name, std::size_t in, std::size_t out,
                      bool trainable, Rng& rng, Init init, bool with_bias, double stddev) {
    Tensor w({in, out});
    switch (init) {
        case Init::Zero:
            break;
        case Init::Normal:
            w = rng.normal_tensor({in, out}, stddev);
            break;
        case Init::Xavier: {
            const double a = std::sqrt(6.0 / static_cast<double>(in + out));
            w = rng.uniform_tensor({in, out}, -a, a);
            break;
        }
    }
    Linear l;
    l.in = in;
    l.out = out;
    l.weight = ps.add(name + ".weight", std::move(w), trainable);
    if (with_bias) l.bias = ps.add(name + ".bias", Tensor({out}), trainable);
    return l;
}

Tensor Linear::forward(const ParamStore& ps, const Tensor& x) const {
    if (x.cols() != in) {
        throw DimensionError("linear " + ps[weight].name + ": input " + shape_string(x.shape()) +
                             " but expects " + std::to_string(in) + " features");
    }
    Tensor y = matmul(x, ps.value(weight));
    if (bias) {
        const Tensor& b = ps.value(*bias);
        for (std::size_t i = 0; i < y.rows(); ++i) {
            auto r = y.row(i);
            for (std::size_t j = 0; j < out; ++j) r[j] += b[j];
        }
    }
    return y;
}

Tensor Linear::backward(ParamStore& ps, const Tensor& x, const Tensor& dy) const {
    if (Tensor* gw = ps.grad_slot(weight)) matmul_tn_acc(x, dy, *gw);
    if (bias) {
        if (Tensor* gb = ps.grad_slot(*bias)) {
            for (std::size_t i = 0; i < dy.rows(); ++i)
                for (std::size_t j = 0; j < out; ++j) (*gb)[j] += dy(i, j);
        }
    }
    return matmul_nt(dy, ps.value(weight));
}

std::vector<ParamId> Linear::params() const {
    std::vector<ParamId> ids{weight};
    if (bias) ids.push_back(*bias);
    return ids;
}

RmsNorm RmsNorm::create(ParamStore& ps, const std::string& name, std::size_t d, bool trainable) {
    return RmsNorm{ps.add(name + ".gain", Tensor({d}, 1.0), trainable), 1e-6};
}

Tensor RmsNorm::forward(const ParamStore& ps, const Tensor& x, RmsNormCache* cache) const {
    return rms_norm(x, ps.value(gain), eps, cache);
}

Tensor RmsNorm::backward(ParamStore& ps, const RmsNormCache& cache, const Tensor& dy) const {
    return rms_norm_backward(dy, ps.value(gain), cache, ps.grad_slot(gain));
}

LayerNorm LayerNorm::create(ParamStore& ps, const std::string& name, std::size_t d,
                            bool trainable) {
    LayerNorm ln;
    ln.gain = ps.add(name + ".gain", Tensor({d}, 1.0), trainable);
    ln.bias = ps.add(name + ".bias", Tensor({d}), trainable);
    return ln;
}

Tensor LayerNorm::forward(const ParamStore& ps, const Tensor& x, LayerNormCache* cache) const {
    return layer_norm(x, ps.value(gain), ps.value(bias), eps, cache);
}

Tensor LayerNorm::backward(ParamStore& ps, const LayerNormCache& cache, const Tensor& dy) const {
    return layer_norm_backward(dy, ps.value(gain), cache, ps.grad_slot(gain),
                               ps.grad_slot(bias));
}

// ---------------------------------------------------------------------------

Tensor attention_core(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                      const KeyBias* bias, AttentionCache* cache) {
    const std::size_t nq = q.rows(), nk = k.rows(), d = q.cols();
    if (k.cols() != d || v.cols() != d || v.rows() != nk) {
        throw DimensionError("attention: q " + shape_string(q.shape()) + ", k " +
                             shape_string(k.shape()) + ", v " + shape_string(v.shape()));
    }
    if (heads == 0 || d % heads != 0) throw DimensionError("attention: heads must divide d");
    if (nk == 0) throw DimensionError("attention: no keys");
    if (bias && (bias->size() != heads || (*bias)[0].size() != nk)) {
        throw DimensionError("attention: bias shape mismatch");
    }
    const std::size_t dh = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    Tensor out({nq, d});
    if (cache) {
        cache->q = q;
        cache->k = k;
        cache->v = v;
        cache->probs.clear();
    }
    Tensor p({nq, nk});
    std::vector<double> kt(dh * nk);
    for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t off = h * dh;
        for (std::size_t j = 0; j < nk; ++j) {
            for (std::size_t c = 0; c < dh; ++c) kt[c * nk + j] = k.data()[j * d + off + c];
        }
        for (std::size_t i = 0; i < nq; ++i) {
            const double* qi = q.data() + i * d + off;
            double* __restrict pr = p.data() + i * nk;
            std::fill(pr, pr + nk, 0.0);
            for (std::size_t c = 0; c < dh; ++c) {
                const double qc = qi[c];
                const double* __restrict kc = kt.data() + c * nk;
                for (std::size_t j = 0; j < nk; ++j) pr[j] += qc * kc[j];
            }
            double mx = -INFINITY;
            for (std::size_t j = 0; j < nk; ++j) {
                pr[j] *= scale;
                if (bias) pr[j] += (*bias)[h][j];
                mx = std::max(mx, pr[j]);
            }
            if (!std::isfinite(mx)) throw NumericError("attention: non-finite logits");
            double sum = 0.0;
            for (std::size_t j = 0; j < nk; ++j) {
                pr[j] = std::exp(pr[j] - mx);
                sum += pr[j];
            }
            const double inv = 1.0 / sum;
            double* __restrict oi = out.data() + i * d + off;
            for (std::size_t j = 0; j < nk; ++j) {
                pr[j] *= inv;
                const double w = pr[j];
                const double* __restrict vj = v.data() + j * d + off;
                for (std::size_t c = 0; c < dh; ++c) oi[c] += w * vj[c];
            }
        }
        if (cache) cache->probs.push_back(p);
    }
    return out;
}

void attention_core_backward(const Tensor& dout, const AttentionCache& cache, std::size_t heads,
                             Tensor& dq, Tensor& dk, Tensor& dv) {
    const Tensor& q = cache.q;
    const Tensor& k = cache.k;
    const Tensor& v = cache.v;
    const std::size_t nq = q.rows(), nk = k.rows(), d = q.cols();
    const std::size_t dh = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    dq = Tensor({nq, d});
    dk = Tensor({nk, d});
    dv = Tensor({nk, d});
    std::vector<double> dp(nk);
    for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t off = h * dh;
        const Tensor& p = cache.probs[h];
        for (std::size_t i = 0; i < nq; ++i) {
            const double* go = dout.data() + i * d + off;
            const double* pr = p.data() + i * nk;
            double s = 0.0;
            for (std::size_t j = 0; j < nk; ++j) {
                const double* vj = v.data() + j * d + off;
                double acc = 0.0;
                for (std::size_t c = 0; c < dh; ++c) acc += go[c] * vj[c];
                dp[j] = acc;
                s += acc * pr[j];
                double* dvj = dv.data() + j * d + off;
                for (std::size_t c = 0; c < dh; ++c) dvj[c] += pr[j] * go[c];
            }
            const double* qi = q.data() + i * d + off;
            double* dqi = dq.data() + i * d + off;
            for (std::size_t j = 0; j < nk; ++j) {
                const double ds = pr[j] * (dp[j] - s) * scale;
                if (ds == 0.0) continue;
                const double* kj = k.data() + j * d + off;
                double* dkj = dk.data() + j * d + off;
                for (std::size_t c = 0; c < dh; ++c) {
                    dqi[c] += ds * kj[c];
                    dkj[c] += ds * qi[c];
                }
            }
        }
    }
}

MultiHeadAttention MultiHeadAttention::create(ParamStore& ps, const std::string& name,
                                              std::size_t d, std::size_t heads, bool trainable,
                                              Rng& rng, bool zero_output) {
    MultiHeadAttention a;
    a.heads = heads;
    a.wq = Linear::create(ps, name + ".q", d, d, trainable, rng);
    a.wk = Linear::create(ps, name + ".k", d, d, trainable, rng);
    a.wv = Linear::create(ps, name + ".v", d, d, trainable, rng);
    a.wo = Linear::create(ps, name + ".o", d, d, trainable, rng,
                          zero_output ? Init::Zero : Init::Xavier);
    return a;
}

Tensor MultiHeadAttention::forward(const ParamStore& ps, const Tensor& xq, const Tensor& xkv,
                                   const KeyBias* bias, Cache* cache) const {
    const Tensor q = wq.forward(ps, xq);
    const Tensor k = wk.forward(ps, xkv);
    const Tensor v = wv.forward(ps, xkv);
    Tensor ctx = attention_core(q, k, v, heads, bias, cache ? &cache->core : nullptr);
    Tensor y = wo.forward(ps, ctx);
    if (cache) {
        cache->xq = xq;
        cache->xkv = xkv;
        cache->context = std::move(ctx);
    }
    return y;
}

std::pair<Tensor, Tensor> MultiHeadAttention::backward(ParamStore& ps, const Cache& cache,
                                                       const Tensor& dy) const {
    const Tensor dctx = wo.backward(ps, cache.context, dy);
    Tensor dq, dk, dv;
    attention_core_backward(dctx, cache.core, heads, dq, dk, dv);
    Tensor dxq = wq.backward(ps, cache.xq, dq);
    Tensor dxkv = wk.backward(ps, cache.xkv, dk);
    dxkv += wv.backward(ps, cache.xkv, dv);
    return {std::move(dxq), std::move(dxkv)};
}

std::vector<ParamId> MultiHeadAttention::params() const {
    std::vector<ParamId> ids;
    for (const Linear* l : {&wq, &wk, &wv, &wo}) {
        const auto p = l->params();
        ids.insert(ids.end(), p.begin(), p.end());
    }
    return ids;
}

FeedForward FeedForward::create(ParamStore& ps, const std::string& name, std::size_t d,
                                std::size_t hidden, std::size_t out, bool trainable, Rng& rng,
                                bool zero_output) {
    FeedForward f;
    f.fc1 = Linear::create(ps, name + ".fc1", d, hidden, trainable, rng);
    f.fc2 = Linear::create(ps, name + ".fc2", hidden, out, trainable, rng,
                           zero_output ? Init::Zero : Init::Xavier);
    return f;
}

Tensor FeedForward::forward(const ParamStore& ps, const Tensor& x, Cache* cache) const {
    Tensor pre = fc1.forward(ps, x);
    Tensor y = fc2.forward(ps, gelu(pre));
    if (cache) {
        cache->x = x;
        cache->pre = std::move(pre);
    }
    return y;
}

Tensor FeedForward::backward(ParamStore& ps, const Cache& cache, const Tensor& dy) const {
    const Tensor act = gelu(cache.pre);
    Tensor dact = fc2.backward(ps, act, dy);
    for (std::size_t i = 0; i < dact.size(); ++i) dact[i] *= gelu_grad(cache.pre[i]);
    return fc1.backward(ps, cache.x, dact);
}

std::vector<ParamId> FeedForward::params() const {
    auto ids = fc1.params();
    const auto b = fc2.params();
    ids.insert(ids.end(), b.begin(), b.end());
    return ids;
}

}  // namespace unimd
