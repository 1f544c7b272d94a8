#include "unimd/mcp.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>

namespace unimd {

std::vector<int> select_memory(const std::vector<int>& tracked, std::size_t L) {
    if (L < 1) throw ConfigError("select_memory: L must be at least 1");
    if (tracked.empty()) throw StateError("select_memory: no tracked frames");
    const std::size_t T = tracked.size();
    if (T <= L) return tracked;
    if (L == 1) return {tracked.back()};
    std::vector<int> out;
    out.reserve(L);
    for (std::size_t i = 0; i < L; ++i) {
        // round-half-up of i·(T−1)/(L−1) in integer arithmetic
        const std::size_t pos = (2 * i * (T - 1) + (L - 1)) / (2 * (L - 1));
        out.push_back(tracked[pos]);
    }
    return out;
}

double alibi_slope(std::size_t h) {
    if (h == 0) throw ConfigError("alibi_slope: heads are counted from 1");
    return std::exp2(-8.0 / static_cast<double>(h));
}

double alibi_bias(std::size_t j, std::size_t n_frames, std::size_t h) {
    if (j < 1 || j > n_frames) throw DimensionError("alibi_bias: frame position out of range");
    return -alibi_slope(h) * static_cast<double>(n_frames - j);
}

MemoryBank::MemoryBank(std::size_t capacity, MemoryPolicy policy, std::size_t fifo_k)
    : capacity_(capacity), policy_(policy), fifo_k_(fifo_k) {
    if (capacity_ < 1) throw ConfigError("memory bank capacity must be at least 1");
    if (policy_ == MemoryPolicy::FifoEveryK && fifo_k_ < 1) {
        throw ConfigError("fifo interval must be at least 1");
    }
}

bool MemoryBank::insert(int frame_index, const Tensor& features) {
    if (!tracked_.empty() && frame_index <= tracked_.back()) {
        throw StateError("memory bank: frame " + std::to_string(frame_index) +
                         " inserted after frame " + std::to_string(tracked_.back()));
    }
    if (!frames_.empty() && !features.same_shape(frames_.front().features)) {
        throw DimensionError("memory bank: feature shape " + shape_string(features.shape()) +
                             " differs from stored " +
                             shape_string(frames_.front().features.shape()));
    }
    tracked_.push_back(frame_index);
    if (policy_ == MemoryPolicy::FifoEveryK) {
        if ((tracked_.size() - 1) % fifo_k_ != 0) return false;
        frames_.push_back({frame_index, features});
        if (frames_.size() > capacity_) frames_.erase(frames_.begin());
        return true;
    }
    frames_.push_back({frame_index, features});
    if (frames_.size() > capacity_) reselect_uniform();
    return true;
}

// Drops the one stored frame whose removal leaves the set closest (in summed
// index distance, paired in order) to the ideal equal-interval sample.
void MemoryBank::reselect_uniform() {
    const std::vector<int> ideal = select_memory(tracked_, capacity_);
    std::size_t best = 1;
    long long best_cost = std::numeric_limits<long long>::max();
    for (std::size_t r = 1; r + 1 < frames_.size(); ++r) {
        long long cost = 0;
        for (std::size_t i = 0, k = 0; i < frames_.size(); ++i) {
            if (i == r) continue;
            cost += std::llabs(static_cast<long long>(frames_[i].frame_index) - ideal[k++]);
        }
        if (cost < best_cost) {
            best_cost = cost;
            best = r;
        }
    }
    frames_.erase(frames_.begin() + static_cast<std::ptrdiff_t>(best));
}

std::vector<int> MemoryBank::indices() const {
    std::vector<int> out;
    for (const MemoryFrame& f : frames_) out.push_back(f.frame_index);
    return out;
}

void KvCache::retain(const std::vector<MemoryFrame>& frames) {
    for (auto it = kv.begin(); it != kv.end();) {
        const bool keep = std::any_of(frames.begin(), frames.end(), [&](const MemoryFrame& f) {
            return f.frame_index == it->first;
        });
        it = keep ? std::next(it) : kv.erase(it);
    }
}

McpModule McpModule::create(ParamStore& ps, const Config& cfg, Rng& rng) {
    const std::size_t d = cfg.backbone.d;
    McpModule m;
    m.d = d;
    m.heads = cfg.backbone.heads;
    m.bias = cfg.mcp.bias;
    m.distance = cfg.mcp.distance;
    m.query = ps.add("mcp.query", rng.normal_tensor({cfg.mcp.n_tokens, d}, 0.2), true);
    m.norm_q = RmsNorm::create(ps, "mcp.norm_q", d, true);
    m.norm_kv = RmsNorm::create(ps, "mcp.norm_kv", d, true);
    m.lin_q = Linear::create(ps, "mcp.lin_q", d, d, true, rng);
    m.lin_kv = Linear::create(ps, "mcp.lin_kv", d, 2 * d, true, rng);
    m.lin_o = Linear::create(ps, "mcp.lin_o", d, d, true, rng);
    m.norm_ffn = RmsNorm::create(ps, "mcp.norm_ffn", d, true);
    m.ffn = FeedForward::create(ps, "mcp.ffn", d, 2 * d, d, true, rng);
    m.enh_norm_attn = RmsNorm::create(ps, "mcp.enhance.norm_attn", d, true);
    m.enh_attn = MultiHeadAttention::create(ps, "mcp.enhance.attn", d, m.heads, true, rng);
    m.enh_norm_ffn = RmsNorm::create(ps, "mcp.enhance.norm_ffn", d, true);
    m.enh_ffn = FeedForward::create(ps, "mcp.enhance.ffn", d, 2 * d, d, true, rng);
    if (m.bias == PositionBias::Absolute) {
        m.abs_pos = ps.add("mcp.abs_pos", Tensor({cfg.mcp.bank_l, d}), true);
    }
    return m;
}

std::vector<double> McpModule::slopes() const {
    std::vector<double> s;
    for (std::size_t h = 1; h <= heads; ++h) s.push_back(alibi_slope(h));
    return s;
}

KeyBias McpModule::key_bias(const std::vector<MemoryFrame>& frames) const {
    const std::size_t n = frames.size();
    const std::size_t per = n ? frames.front().features.rows() : 0;
    KeyBias kb(heads, std::vector<double>(n * per, 0.0));
    if (bias != PositionBias::Alibi) return kb;
    const int newest = n ? frames.back().frame_index : 0;
    for (std::size_t h = 0; h < heads; ++h) {
        const double m = alibi_slope(h + 1);
        for (std::size_t p = 0; p < n; ++p) {
            const double dist = distance == AlibiDistance::BankPosition
                                    ? static_cast<double>(n - 1 - p)
                                    : static_cast<double>(newest - frames[p].frame_index);
            std::fill_n(kb[h].begin() + static_cast<std::ptrdiff_t>(p * per), per, -m * dist);
        }
    }
    return kb;
}

Tensor McpModule::compress(const ParamStore& ps, const std::vector<MemoryFrame>& frames,
                           Cache* cache, KvCache* kv_cache) const {
    if (frames.empty()) throw StateError("compress: memory bank is empty");
    const std::size_t per = frames.front().features.rows();
    for (const MemoryFrame& f : frames) {
        if (f.features.rows() != per || f.features.cols() != d) {
            throw DimensionError("compress: frame features " + shape_string(f.features.shape()));
        }
    }
    const std::size_t n = frames.size();
    std::vector<std::size_t> positions(n);
    if (abs_pos) {
        const std::size_t rows = ps.value(*abs_pos).rows();
        for (std::size_t p = 0; p < n; ++p) positions[p] = std::min(p, rows - 1);
    }

    Tensor kv;
    const bool use_kv_cache = kv_cache && !abs_pos && !cache;
    if (use_kv_cache) {
        std::vector<const Tensor*> parts;
        for (const MemoryFrame& f : frames) {
            auto it = kv_cache->kv.find(f.frame_index);
            if (it == kv_cache->kv.end()) {
                const Tensor kvn = norm_kv.forward(ps, f.features, nullptr);
                it = kv_cache->kv.emplace(f.frame_index, lin_kv.forward(ps, kvn)).first;
            }
            parts.push_back(&it->second);
        }
        kv = concat_rows(parts);
    } else {
        std::vector<const Tensor*> parts;
        for (const MemoryFrame& f : frames) parts.push_back(&f.features);
        Tensor fm = concat_rows(parts);
        if (abs_pos) {
            const Tensor& table = ps.value(*abs_pos);
            for (std::size_t p = 0; p < n; ++p) {
                const auto src = table.row(positions[p]);
                for (std::size_t t = 0; t < per; ++t) {
                    auto r = fm.row(p * per + t);
                    for (std::size_t j = 0; j < d; ++j) r[j] += src[j];
                }
            }
        }
        Tensor kvn = norm_kv.forward(ps, fm, cache ? &cache->nkv : nullptr);
        kv = lin_kv.forward(ps, kvn);
        if (cache) cache->kvn = std::move(kvn);
    }

    const Tensor& q = ps.value(query);
    Tensor qn = norm_q.forward(ps, q, cache ? &cache->nq : nullptr);
    const Tensor Q = lin_q.forward(ps, qn);
    const KeyBias kb = key_bias(frames);
    Tensor ctx = attention_core(Q, slice_cols(kv, 0, d), slice_cols(kv, d, d), heads, &kb,
                                cache ? &cache->core : nullptr);
    Tensor m1 = lin_o.forward(ps, ctx) + q;
    const Tensor fn = norm_ffn.forward(ps, m1, cache ? &cache->nffn : nullptr);
    Tensor m2 = m1 + ffn.forward(ps, fn, cache ? &cache->ffn : nullptr);
    const Tensor en = enh_norm_attn.forward(ps, m2, cache ? &cache->nenh_attn : nullptr);
    Tensor m3 = m2 + enh_attn.forward(ps, en, en, nullptr, cache ? &cache->enh_attn : nullptr);
    const Tensor gn = enh_norm_ffn.forward(ps, m3, cache ? &cache->nenh_ffn : nullptr);
    Tensor M = m3 + enh_ffn.forward(ps, gn, cache ? &cache->enh_ffn : nullptr);

    if (cache) {
        cache->frames = n;
        cache->tokens_per_frame = per;
        cache->positions = std::move(positions);
        cache->qn = std::move(qn);
        cache->ctx = std::move(ctx);
        cache->m1 = std::move(m1);
        cache->m2 = std::move(m2);
        cache->m3 = std::move(m3);
        cache->kv_from_cache = false;
    }
    return M;
}

std::vector<Tensor> McpModule::backward(ParamStore& ps, const Cache& c, const Tensor& dM,
                                        bool want_feature_grads) const {
    if (c.kv_from_cache) throw StateError("compress backward: keys came from the inference cache");
    // M = m3 + enh_ffn(norm(m3))
    Tensor dm3 = dM + enh_norm_ffn.backward(ps, c.nenh_ffn, enh_ffn.backward(ps, c.enh_ffn, dM));
    // m3 = m2 + enh_attn(norm(m2))
    auto [dq_e, dkv_e] = enh_attn.backward(ps, c.enh_attn, dm3);
    dq_e += dkv_e;
    Tensor dm2 = dm3 + enh_norm_attn.backward(ps, c.nenh_attn, dq_e);
    // m2 = m1 + ffn(norm(m1))
    Tensor dm1 = dm2 + norm_ffn.backward(ps, c.nffn, ffn.backward(ps, c.ffn, dm2));
    // m1 = lin_o(ctx) + q
    const Tensor dctx = lin_o.backward(ps, c.ctx, dm1);
    Tensor dQ, dK, dV;
    attention_core_backward(dctx, c.core, heads, dQ, dK, dV);
    Tensor dq = dm1 + norm_q.backward(ps, c.nq, lin_q.backward(ps, c.qn, dQ));
    if (Tensor* g = ps.grad_slot(query)) *g += dq;

    const std::size_t rows = dK.rows();
    Tensor dkv({rows, 2 * d});
    for (std::size_t i = 0; i < rows; ++i) {
        auto r = dkv.row(i);
        const auto k = dK.row(i);
        const auto v = dV.row(i);
        std::copy(k.begin(), k.end(), r.begin());
        std::copy(v.begin(), v.end(), r.begin() + static_cast<std::ptrdiff_t>(d));
    }
    const Tensor dfm = norm_kv.backward(ps, c.nkv, lin_kv.backward(ps, c.kvn, dkv));
    const std::size_t per = c.tokens_per_frame;
    if (abs_pos) {
        if (Tensor* g = ps.grad_slot(*abs_pos)) {
            for (std::size_t p = 0; p < c.frames; ++p) {
                auto dst = g->row(c.positions[p]);
                for (std::size_t t = 0; t < per; ++t) {
                    const auto src = dfm.row(p * per + t);
                    for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
                }
            }
        }
    }
    std::vector<Tensor> out;
    if (want_feature_grads) {
        for (std::size_t p = 0; p < c.frames; ++p) out.push_back(slice_rows(dfm, p * per, per));
    }
    return out;
}

std::vector<ParamId> McpModule::params() const {
    std::vector<ParamId> ids{query, norm_q.gain, norm_kv.gain, norm_ffn.gain, enh_norm_attn.gain,
                             enh_norm_ffn.gain};
    for (const auto& group : {lin_q.params(), lin_kv.params(), lin_o.params(), ffn.params(),
                              enh_attn.params(), enh_ffn.params()}) {
        ids.insert(ids.end(), group.begin(), group.end());
    }
    if (abs_pos) ids.push_back(*abs_pos);
    return ids;
}

}  // namespace unimd
