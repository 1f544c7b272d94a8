#pragma once

#include <map>
#include <optional>
#include <vector>

#include "unimd/config.hpp"
#include "unimd/nn.hpp"
#include "unimd/numerics.hpp"

namespace unimd {

/// Equal-interval sample of at most L entries: positions round(i·(T−1)/(L−1)).
/// With L = 1 only the most recent index is kept.
std::vector<int> select_memory(const std::vector<int>& tracked, std::size_t L);

/// Head slope 2^(−8/h), h counted from 1.
double alibi_slope(std::size_t h);
/// −m_h·|j − n_frames| for frame position j in 1..n_frames.
double alibi_bias(std::size_t j, std::size_t n_frames, std::size_t h);

struct MemoryFrame {
    int frame_index = 0;
    Tensor features;  // [N_S×d]
};

class MemoryBank {
public:
    explicit MemoryBank(std::size_t capacity, MemoryPolicy policy = MemoryPolicy::Uniform,
                        std::size_t fifo_k = 5);

    /// Returns true when the frame was stored. Throws StateError when
    /// frame_index does not exceed the last tracked index.
    bool insert(int frame_index, const Tensor& features);

    const std::vector<MemoryFrame>& frames() const { return frames_; }
    std::vector<int> indices() const;
    const std::vector<int>& tracked() const { return tracked_; }
    std::size_t size() const { return frames_.size(); }
    bool empty() const { return frames_.empty(); }
    std::size_t capacity() const { return capacity_; }
    MemoryPolicy policy() const { return policy_; }

private:
    void reselect_uniform();

    std::size_t capacity_;
    MemoryPolicy policy_;
    std::size_t fifo_k_;
    std::vector<MemoryFrame> frames_;
    std::vector<int> tracked_;
};

/// Projected keys/values of stored frames, reused across frames at inference.
struct KvCache {
    std::map<int, Tensor> kv;  // frame index -> [N_S×2d]
    void retain(const std::vector<MemoryFrame>& frames);
};

/// Memory compression: learnable queries attend over all bank tokens with a
/// per-head frame-distance bias, then a self-attention + FFN enhancement block.
struct McpModule {
    ParamId query = 0;  // [N_M×d]
    RmsNorm norm_q, norm_kv;
    Linear lin_q, lin_kv, lin_o;
    RmsNorm norm_ffn;
    FeedForward ffn;
    RmsNorm enh_norm_attn;
    MultiHeadAttention enh_attn;
    RmsNorm enh_norm_ffn;
    FeedForward enh_ffn;
    std::optional<ParamId> abs_pos;  // [L×d], absolute-position variant only
    std::size_t heads = 1;
    std::size_t d = 0;
    PositionBias bias = PositionBias::Alibi;
    AlibiDistance distance = AlibiDistance::BankPosition;

    struct Cache {
        std::size_t frames = 0;
        std::size_t tokens_per_frame = 0;
        std::vector<std::size_t> positions;  // abs_pos row used per frame
        RmsNormCache nq, nkv;
        Tensor qn, kvn, ctx, m1, m2, m3;
        AttentionCache core;
        RmsNormCache nffn, nenh_attn, nenh_ffn;
        FeedForward::Cache ffn, enh_ffn;
        MultiHeadAttention::Cache enh_attn;
        bool kv_from_cache = false;
    };

    static McpModule create(ParamStore& ps, const Config& cfg, Rng& rng);

    std::vector<double> slopes() const;
    KeyBias key_bias(const std::vector<MemoryFrame>& frames) const;

    /// M [N_M×d]. Throws StateError on an empty bank.
    Tensor compress(const ParamStore& ps, const std::vector<MemoryFrame>& frames,
                    Cache* cache = nullptr, KvCache* kv_cache = nullptr) const;

    /// Accumulates parameter gradients. Returns the gradient for each frame's
    /// features (empty when want_feature_grads is false).
    std::vector<Tensor> backward(ParamStore& ps, const Cache& cache, const Tensor& dM,
                                 bool want_feature_grads = false) const;

    std::vector<ParamId> params() const;
};

}  // namespace unimd
