#pragma once

#include <vector>

#include "unimd/config.hpp"
#include "unimd/dsf.hpp"
#include "unimd/embedding.hpp"
#include "unimd/nn.hpp"

namespace unimd {

struct FusionStage {
    std::size_t dsf_index = 0;
    std::size_t input_layer = 0;
    std::size_t output_layer = 0;
};

struct BackboneConfig {
    std::size_t depth = 8;
    std::size_t d = 64;
    std::size_t heads = 4;
    std::size_t ffn_mult = 4;
    std::vector<FusionStage> fusion_stages;

    /// Splits the trailing `span` layers (0 = all) evenly into `count` stages.
    static BackboneConfig from(const Config& cfg);
    static std::vector<FusionStage> even_stages(std::size_t depth, std::size_t span,
                                                std::size_t count);
    void validate() const;
};

/// Pre-norm transformer block: x + MHA(LN(x)), then + FFN(LN(·)).
struct EncoderLayer {
    LayerNorm ln1, ln2;
    MultiHeadAttention attn;
    FeedForward ffn;

    struct Cache {
        LayerNormCache ln1, ln2;
        MultiHeadAttention::Cache attn;
        FeedForward::Cache ffn;
    };

    static EncoderLayer create(ParamStore& ps, const std::string& name, const BackboneConfig& bc,
                               Rng& rng, bool trainable);
    Tensor forward(const ParamStore& ps, const Tensor& x, Cache* cache = nullptr) const;
    Tensor backward(ParamStore& ps, const Cache& cache, const Tensor& dy) const;
};

struct BackboneOutput {
    Tensor O;    // [N×d]
    Tensor O_S;  // search rows of O, in order
    std::vector<Tensor> stage_inputs;  // search rows entering each stage, before input fusion
};

class Backbone {
public:
    struct Cache {
        std::vector<EncoderLayer::Cache> layers;
        std::vector<FusionBlock::Cache> fuse_in;
        std::vector<FusionBlock::Cache> fuse_out;
        std::size_t search_offset = 0;
        std::size_t search_count = 0;
    };

    static Backbone create(ParamStore& ps, const BackboneConfig& bc, Rng& rng,
                           bool trainable = false);

    const BackboneConfig& config() const { return config_; }
    const std::vector<EncoderLayer>& layers() const { return layers_; }

    /// Plain stacked encoder layers.
    Tensor forward(const ParamStore& ps, const Tensor& x) const;

    /// Applies each stage's input fusion before its first layer and output
    /// fusion after its last layer, using dsf_outputs[stage.dsf_index] when
    /// present. expected_state_rows is the row count a state tensor must have.
    BackboneOutput forward_with_fusion(const ParamStore& ps, const TokenSequence& seq,
                                       const std::vector<const Tensor*>& dsf_outputs,
                                       const std::vector<DsfModule>& dsfs,
                                       std::size_t expected_state_rows,
                                       Cache* cache = nullptr) const;

    /// dO: gradient w.r.t. the final sequence. dF[i] receives (accumulates) the
    /// gradient for dsf_outputs[i]. stage_input_grads, when given, injects
    /// gradients at the search rows of each stage input. Returns dZ.
    Tensor backward(ParamStore& ps, const Cache& cache, const Tensor& dO,
                    const std::vector<DsfModule>& dsfs, std::vector<Tensor>& dF,
                    const std::vector<Tensor>* stage_input_grads = nullptr) const;

private:
    BackboneConfig config_;
    std::vector<EncoderLayer> layers_;
};

}  // namespace unimd
