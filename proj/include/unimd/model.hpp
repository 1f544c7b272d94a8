#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "unimd/backbone.hpp"
#include "unimd/config.hpp"
#include "unimd/dsf.hpp"
#include "unimd/embedding.hpp"
#include "unimd/heads.hpp"
#include "unimd/mcp.hpp"

namespace unimd {

/// Frozen patch tokens for one frame's inputs.
struct FrameTokens {
    Tensor search;                  // [N_S×d]
    std::vector<Tensor> templates;  // each [N_T×d]
    std::optional<Tensor> text;     // raw description stub
};

struct FrameOutput {
    BackboneOutput backbone;
    BoxPrediction pred;  // search-region coordinates
    Tensor modality_logits;
    std::size_t search_offset = 0;
    std::size_t tokens = 0;  // backbone sequence length
};

struct FrameCache {
    McpModule::Cache mcp;
    bool memory_from_query = false;
    std::size_t memory_rows = 0;
    Backbone::Cache backbone;
    CenterHead::Cache center;
    ModalityHead::Cache modality;
    std::optional<Tensor> text_input;  // [1×text_dim]
    std::size_t text_row = 0;
    std::size_t tokens = 0;
};

/// Embedding, frozen backbone, MCP, DSF modules and heads over one parameter
/// store. Every component draws from its own seed substream, so switching a
/// module off leaves the others' initial values unchanged.
class Model {
public:
    static Model create(const Config& cfg);

    const Config& config() const { return cfg_; }

    ParamStore ps;
    Embedding embed;
    Backbone backbone;
    std::optional<McpModule> mcp;
    std::vector<DsfModule> dsfs;
    CenterHead center;
    ModalityHead modality;

    /// Crops must already be resampled to the configured sizes.
    FrameTokens tokens(const MultiModalFrame& search_crop,
                       const std::vector<const MultiModalFrame*>& template_crops) const;
    Tensor embed_crop(const MultiModalFrame& crop) const;

    /// memory == nullptr (or empty) uses the raw query tokens as the memory
    /// segment. F[i] is DSF module i's previous output, nullptr to skip fusion.
    FrameOutput run_frame(const FrameTokens& in, const std::vector<MemoryFrame>* memory,
                          const std::vector<const Tensor*>& F, FrameCache* cache = nullptr,
                          KvCache* kv = nullptr) const;

    /// Gradient of the head losses w.r.t. O_S.
    Tensor heads_backward(ParamStore& grads, const FrameCache& cache, const LossGrads& g) const;

    /// dO is the gradient of the whole final sequence. dF[i] accumulates the
    /// gradient for F[i]. Returns gradients for the memory frames' features
    /// when want_memory_grads is set.
    std::vector<Tensor> backward_frame(ParamStore& grads, const FrameCache& cache, const Tensor& dO,
                                       std::vector<Tensor>& dF,
                                       const std::vector<Tensor>* stage_input_grads,
                                       bool want_memory_grads) const;

    /// Rows of the tensor each DSF module reads.
    std::size_t state_rows(std::size_t total_tokens) const;
    /// Stage index whose input feeds DSF module i.
    std::size_t stage_of(std::size_t dsf_index) const;
    /// DSF module i's input for the configured source.
    const Tensor& dsf_input(const FrameOutput& out, std::size_t dsf_index) const;

    std::vector<ParamId> trainable_ids() const;
    /// FNV-1a over names and values of all frozen parameters.
    std::uint64_t frozen_hash() const;

private:
    Config cfg_;
};

}  // namespace unimd
