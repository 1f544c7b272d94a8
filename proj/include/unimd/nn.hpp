#pragma once

// Small layer building blocks with explicit backward rules. Forward passes read
// a const ParamStore; backward passes accumulate into the gradient slots of
// trainable parameters and always return the input gradient.

#include <optional>
#include <string>
#include <vector>

#include "unimd/numerics.hpp"

namespace unimd {

enum class Init { Zero, Normal, Xavier };

struct Linear {
    ParamId weight = 0;  // [in×out]
    std::optional<ParamId> bias;
    std::size_t in = 0;
    std::size_t out = 0;

    static Linear create(ParamStore& ps, const std::string& name, std::size_t in, std::size_t out,
                         bool trainable, Rng& rng, Init init = Init::Xavier, bool with_bias = true,
                         double stddev = 0.02);

    Tensor forward(const ParamStore& ps, const Tensor& x) const;
    Tensor backward(ParamStore& ps, const Tensor& x, const Tensor& dy) const;
    std::vector<ParamId> params() const;
};

struct RmsNorm {
    ParamId gain = 0;
    double eps = 1e-6;

    static RmsNorm create(ParamStore& ps, const std::string& name, std::size_t d, bool trainable);
    Tensor forward(const ParamStore& ps, const Tensor& x, RmsNormCache* cache) const;
    Tensor backward(ParamStore& ps, const RmsNormCache& cache, const Tensor& dy) const;
};

struct LayerNorm {
    ParamId gain = 0;
    ParamId bias = 0;
    double eps = 1e-6;

    static LayerNorm create(ParamStore& ps, const std::string& name, std::size_t d,
                            bool trainable);
    Tensor forward(const ParamStore& ps, const Tensor& x, LayerNormCache* cache) const;
    Tensor backward(ParamStore& ps, const LayerNormCache& cache, const Tensor& dy) const;
};

/// Per-head additive logit bias that is constant across queries: bias[h][key].
using KeyBias = std::vector<std::vector<double>>;

struct AttentionCache {
    Tensor q, k, v;
    std::vector<Tensor> probs;  // per head, [n_q×n_k]
};

/// Scaled dot-product attention on already-projected q/k/v, heads laid out
/// contiguously along the feature axis. Logits use 1/sqrt(d_head).
Tensor attention_core(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                      const KeyBias* bias, AttentionCache* cache);
void attention_core_backward(const Tensor& dout, const AttentionCache& cache, std::size_t heads,
                             Tensor& dq, Tensor& dk, Tensor& dv);

/// Multi-head attention with separate q, k, v and output projections.
struct MultiHeadAttention {
    Linear wq, wk, wv, wo;
    std::size_t heads = 1;

    struct Cache {
        Tensor xq, xkv;
        AttentionCache core;
        Tensor context;
    };

    static MultiHeadAttention create(ParamStore& ps, const std::string& name, std::size_t d,
                                     std::size_t heads, bool trainable, Rng& rng,
                                     bool zero_output = false);

    Tensor forward(const ParamStore& ps, const Tensor& xq, const Tensor& xkv,
                   const KeyBias* bias, Cache* cache) const;
    /// Returns {dxq, dxkv}. For self-attention callers add the two.
    std::pair<Tensor, Tensor> backward(ParamStore& ps, const Cache& cache, const Tensor& dy) const;
    std::vector<ParamId> params() const;
};

/// Two-layer GELU MLP.
struct FeedForward {
    Linear fc1, fc2;

    struct Cache {
        Tensor x, pre;
    };

    static FeedForward create(ParamStore& ps, const std::string& name, std::size_t d,
                              std::size_t hidden, std::size_t out, bool trainable, Rng& rng,
                              bool zero_output = false);
    Tensor forward(const ParamStore& ps, const Tensor& x, Cache* cache) const;
    Tensor backward(ParamStore& ps, const Cache& cache, const Tensor& dy) const;
    std::vector<ParamId> params() const;
};

}  // namespace unimd
