#pragma once

#include <optional>
#include <string>
#include <vector>

#include "unimd/config.hpp"
#include "unimd/nn.hpp"
#include "unimd/numerics.hpp"

namespace unimd {

/// Per-module recurrent state carried from frame to frame. h is laid out as
/// [tokens × inner × state] and starts at zero.
struct DsfState {
    Tensor h;
    std::optional<Tensor> last_F;
    std::size_t frames_seen = 0;

    static DsfState initial(std::size_t tokens, std::size_t inner, std::size_t state_dim);
};

/// Outputs of one discrete SSM step.
struct ScanResult {
    Tensor S;      // [N×d_s]
    Tensor h;      // [N×d_s×e]
};

/// One recurrence step with explicit discretization inputs:
///   Ā = exp(Δ·A), B̄ = Δ ⊗ B, h = Ā⊙h_prev + B̄⊙S1, S = Σ_e C·h + D⊙S1.
/// delta [N×d_s], A [d_s×e], B,C [N×e], D [d_s], S1 [N×d_s], h_prev [N×d_s×e].
ScanResult ssm_recurrence(const Tensor& delta, const Tensor& A, const Tensor& B, const Tensor& C,
                          const Tensor& D, const Tensor& S1, const Tensor& h_prev);

/// Selective-scan parameters: x_proj splits into (Δ′, B, C), dt_proj maps Δ′ to
/// the pre-softplus step size.
struct SsmParams {
    Linear x_proj;   // d_s -> r + 2e, no bias
    Linear dt_proj;  // r -> d_s
    ParamId a_log = 0;  // [d_s×e]
    ParamId d_skip = 0; // [d_s]
    std::size_t dt_rank = 1;
    std::size_t state_dim = 1;

    Tensor A(const ParamStore& ps) const;  // −exp(A_log)
};

struct ScanCache {
    Tensor s1, dt_low, dt_pre, delta, B, C, A, h_prev, h_new;
};

ScanResult ssm_scan(const ParamStore& ps, const SsmParams& p, const Tensor& S1, const Tensor& h_prev,
                    ScanCache* cache = nullptr);
/// Returns dS1 and writes dh_prev. dh_next may be empty (no later frame).
Tensor ssm_scan_backward(ParamStore& ps, const SsmParams& p, const ScanCache& cache,
                         const Tensor& dS, const Tensor& dh_next, Tensor& dh_prev);

/// Gated dynamic-state layer: I = RMSNorm(O_S); G = SiLU(W_g I);
/// S1 = SiLU(conv(W_c I)); S = SSM(S1); F = O_S + W_out(G⊙S).
struct DynamicStateLayer {
    RmsNorm norm;
    Linear gate;
    Linear conv_in;
    ParamId conv_kernel = 0;  // [w×d_s]
    ParamId conv_bias = 0;    // [d_s]
    SsmParams ssm;
    Linear out;               // d_s -> d, zero at init
    std::size_t inner = 0;

    struct Cache {
        Tensor input;
        RmsNormCache norm;
        Tensor normed, gate_pre, gate, conv_pre, conv_out, S, gated;
        ScanCache scan;
    };

    Tensor forward(const ParamStore& ps, const Tensor& O_S, const DsfState& state,
                   DsfState& next, Cache* cache = nullptr) const;
    /// dF: gradient of F; dh_next: gradient flowing into the produced state (may
    /// be empty). Returns dO_S and writes the gradient for the previous state.
    Tensor backward(ParamStore& ps, const Cache& cache, const Tensor& dF, const Tensor& dh_next,
                    Tensor& dh_prev) const;
};

/// Cross-attention fusion: x + W_o·Attn(RMSNorm(x), RMSNorm(F)). W_o is zero at
/// init, so the block starts as the identity.
struct FusionBlock {
    RmsNorm norm_q;
    RmsNorm norm_kv;
    MultiHeadAttention attn;

    struct Cache {
        RmsNormCache nq, nkv;
        MultiHeadAttention::Cache attn;
        bool skipped = true;
    };

    Tensor fuse(const ParamStore& ps, const Tensor& x, const Tensor* F, Cache* cache = nullptr) const;
    /// Returns dx; accumulates dF into *dF when fusion was applied.
    Tensor backward(ParamStore& ps, const Cache& cache, const Tensor& dy, Tensor* dF) const;
};

/// One DSF module: dynamic state layer plus its input- and output-side fusion.
struct DsfModule {
    DynamicStateLayer layer;
    FusionBlock input_fusion;
    FusionBlock output_fusion;

    static DsfModule create(ParamStore& ps, const std::string& name, const Config& cfg, Rng& rng);
    std::vector<ParamId> params(const ParamStore& ps, const std::string& name) const;
};

/// dynamic_state_forward as a free function.
Tensor dynamic_state_forward(const ParamStore& ps, const DynamicStateLayer& layer,
                             const Tensor& O_S, DsfState& state,
                             DynamicStateLayer::Cache* cache = nullptr);

struct DecayEnvelope {
    double product_norm = 1.0;  // max over coordinates of ∏ Ā
    double bound = 1.0;         // exp(−c·span)
    double c = 0.0;             // min over steps and coordinates of Δ·|A|
};

/// Cumulative decay over the first `span` entries of delta_seq (each [d_s]) with
/// A [d_s×e]. Throws ValidationError on non-positive Δ.
DecayEnvelope decay_envelope_check(const std::vector<Tensor>& delta_seq, const Tensor& A,
                                   std::size_t span);

}  // namespace unimd
