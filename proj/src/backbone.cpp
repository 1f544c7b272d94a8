#include "unimd/backbone.hpp"

namespace unimd {

std::vector<FusionStage> BackboneConfig::even_stages(std::size_t depth, std::size_t span,
                                                     std::size_t count) {
    if (span == 0) span = depth;
    if (count == 0) return {};
    if (span > depth || span % count != 0) {
        throw ConfigError("cannot split " + std::to_string(span) + " layers into " +
                          std::to_string(count) + " equal stages");
    }
    const std::size_t len = span / count;
    const std::size_t first = depth - span;
    std::vector<FusionStage> stages;
    for (std::size_t i = 0; i < count; ++i) {
        stages.push_back({i, first + i * len, first + (i + 1) * len - 1});
    }
    return stages;
}

BackboneConfig BackboneConfig::from(const Config& cfg) {
    BackboneConfig bc;
    bc.depth = cfg.backbone.depth;
    bc.d = cfg.backbone.d;
    bc.heads = cfg.backbone.heads;
    bc.ffn_mult = cfg.backbone.ffn_mult;
    if (cfg.dsf.enabled) {
        bc.fusion_stages = even_stages(bc.depth, cfg.backbone.dsf_span, cfg.dsf.count);
    }
    bc.validate();
    return bc;
}

void BackboneConfig::validate() const {
    std::size_t next_free = 0;
    for (const FusionStage& s : fusion_stages) {
        if (s.input_layer > s.output_layer || s.output_layer >= depth) {
            throw ConfigError("fusion stage layers out of range");
        }
        if (s.input_layer < next_free) throw ConfigError("fusion stages overlap or are unordered");
        next_free = s.output_layer + 1;
    }
}

EncoderLayer EncoderLayer::create(ParamStore& ps, const std::string& name,
                                  const BackboneConfig& bc, Rng& rng, bool trainable) {
    EncoderLayer l;
    l.ln1 = LayerNorm::create(ps, name + ".ln1", bc.d, trainable);
    l.attn = MultiHeadAttention::create(ps, name + ".attn", bc.d, bc.heads, trainable, rng);
    l.ln2 = LayerNorm::create(ps, name + ".ln2", bc.d, trainable);
    l.ffn = FeedForward::create(ps, name + ".ffn", bc.d, bc.d * bc.ffn_mult, bc.d, trainable, rng);
    // residual branches start small so the frozen stack stays close to identity
    for (ParamId id : {l.attn.wo.weight, l.ffn.fc2.weight}) ps[id].value *= 0.5;
    return l;
}

Tensor EncoderLayer::forward(const ParamStore& ps, const Tensor& x, Cache* cache) const {
    const Tensor a_in = ln1.forward(ps, x, cache ? &cache->ln1 : nullptr);
    Tensor x1 = x + attn.forward(ps, a_in, a_in, nullptr, cache ? &cache->attn : nullptr);
    const Tensor f_in = ln2.forward(ps, x1, cache ? &cache->ln2 : nullptr);
    return x1 + ffn.forward(ps, f_in, cache ? &cache->ffn : nullptr);
}

Tensor EncoderLayer::backward(ParamStore& ps, const Cache& cache, const Tensor& dy) const {
    const Tensor df_in = ffn.backward(ps, cache.ffn, dy);
    const Tensor dx1 = dy + ln2.backward(ps, cache.ln2, df_in);
    auto [dq, dkv] = attn.backward(ps, cache.attn, dx1);
    dq += dkv;
    return dx1 + ln1.backward(ps, cache.ln1, dq);
}

Backbone Backbone::create(ParamStore& ps, const BackboneConfig& bc, Rng& rng, bool trainable) {
    bc.validate();
    Backbone b;
    b.config_ = bc;
    for (std::size_t i = 0; i < bc.depth; ++i) {
        b.layers_.push_back(
            EncoderLayer::create(ps, "backbone.layer" + std::to_string(i), bc, rng, trainable));
    }
    return b;
}

Tensor Backbone::forward(const ParamStore& ps, const Tensor& x) const {
    Tensor h = x;
    for (const EncoderLayer& l : layers_) h = l.forward(ps, h);
    return h;
}

BackboneOutput Backbone::forward_with_fusion(const ParamStore& ps, const TokenSequence& seq,
                                             const std::vector<const Tensor*>& dsf_outputs,
                                             const std::vector<DsfModule>& dsfs,
                                             std::size_t expected_state_rows,
                                             Cache* cache) const {
    const std::size_t s_off = seq.offset(Segment::Search);
    const std::size_t s_cnt = seq.count(Segment::Search);
    const auto& stages = config_.fusion_stages;
    for (const FusionStage& st : stages) {
        if (st.dsf_index >= dsfs.size()) throw ConfigError("fusion stage without a DSF module");
        const Tensor* F = st.dsf_index < dsf_outputs.size() ? dsf_outputs[st.dsf_index] : nullptr;
        if (F && (F->rows() != expected_state_rows || F->cols() != config_.d)) {
            throw DimensionError("forward_with_fusion: state features " +
                                 shape_string(F->shape()) + " expected [" +
                                 std::to_string(expected_state_rows) + "x" +
                                 std::to_string(config_.d) + "]");
        }
    }
    if (cache) {
        cache->layers.assign(layers_.size(), {});
        cache->fuse_in.assign(stages.size(), {});
        cache->fuse_out.assign(stages.size(), {});
        cache->search_offset = s_off;
        cache->search_count = s_cnt;
    }

    BackboneOutput out;
    out.stage_inputs.resize(stages.size());
    Tensor x = seq.tokens;
    for (std::size_t li = 0; li < layers_.size(); ++li) {
        for (std::size_t si = 0; si < stages.size(); ++si) {
            const FusionStage& st = stages[si];
            if (st.input_layer != li) continue;
            out.stage_inputs[si] = slice_rows(x, s_off, s_cnt);
            const Tensor* F = st.dsf_index < dsf_outputs.size() ? dsf_outputs[st.dsf_index] : nullptr;
            x = dsfs[st.dsf_index].input_fusion.fuse(ps, x, F, cache ? &cache->fuse_in[si] : nullptr);
        }
        x = layers_[li].forward(ps, x, cache ? &cache->layers[li] : nullptr);
        for (std::size_t si = 0; si < stages.size(); ++si) {
            const FusionStage& st = stages[si];
            if (st.output_layer != li) continue;
            const Tensor* F = st.dsf_index < dsf_outputs.size() ? dsf_outputs[st.dsf_index] : nullptr;
            x = dsfs[st.dsf_index].output_fusion.fuse(ps, x, F, cache ? &cache->fuse_out[si] : nullptr);
        }
    }
    out.O_S = slice_rows(x, s_off, s_cnt);
    out.O = std::move(x);
    return out;
}

Tensor Backbone::backward(ParamStore& ps, const Cache& cache, const Tensor& dO,
                          const std::vector<DsfModule>& dsfs, std::vector<Tensor>& dF,
                          const std::vector<Tensor>* stage_input_grads) const {
    const auto& stages = config_.fusion_stages;
    Tensor g = dO;
    for (std::size_t li = layers_.size(); li-- > 0;) {
        for (std::size_t si = stages.size(); si-- > 0;) {
            const FusionStage& st = stages[si];
            if (st.output_layer != li) continue;
            Tensor* slot = st.dsf_index < dF.size() ? &dF[st.dsf_index] : nullptr;
            g = dsfs[st.dsf_index].output_fusion.backward(ps, cache.fuse_out[si], g, slot);
        }
        g = layers_[li].backward(ps, cache.layers[li], g);
        for (std::size_t si = stages.size(); si-- > 0;) {
            const FusionStage& st = stages[si];
            if (st.input_layer != li) continue;
            Tensor* slot = st.dsf_index < dF.size() ? &dF[st.dsf_index] : nullptr;
            g = dsfs[st.dsf_index].input_fusion.backward(ps, cache.fuse_in[si], g, slot);
            if (stage_input_grads && si < stage_input_grads->size() &&
                !(*stage_input_grads)[si].empty()) {
                add_rows(g, cache.search_offset, (*stage_input_grads)[si]);
            }
        }
    }
    return g;
}

}  // namespace unimd
