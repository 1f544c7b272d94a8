#include "unimd/model.hpp"


namespace unimd {

namespace {

enum SeedLabel : std::uint64_t {
    kEmbedSeed = 1,
    kBackboneSeed = 2,
    kMcpSeed = 3,
    kCenterSeed = 4,
    kModalitySeed = 5,
    kDsfSeed = 100,
};

}  // namespace

Model Model::create(const Config& cfg) {
    cfg.validate();
    Model m;
    m.cfg_ = cfg;
    {
        Rng rng(Rng::derive(cfg.seed, kEmbedSeed));
        m.embed = Embedding::create(m.ps, cfg, rng);
    }
    {
        Rng rng(Rng::derive(cfg.seed, kBackboneSeed));
        m.backbone = Backbone::create(m.ps, BackboneConfig::from(cfg), rng, false);
    }
    if (cfg.mcp.enabled) {
        Rng rng(Rng::derive(cfg.seed, kMcpSeed));
        m.mcp = McpModule::create(m.ps, cfg, rng);
    }
    if (cfg.dsf.enabled) {
        for (std::size_t i = 0; i < cfg.dsf.count; ++i) {
            Rng rng(Rng::derive(cfg.seed, kDsfSeed + i));
            m.dsfs.push_back(DsfModule::create(m.ps, "dsf" + std::to_string(i), cfg, rng));
        }
    }
    {
        Rng rng(Rng::derive(cfg.seed, kCenterSeed));
        m.center = CenterHead::create(m.ps, cfg.backbone.d, rng);
    }
    {
        Rng rng(Rng::derive(cfg.seed, kModalitySeed));
        m.modality = ModalityHead::create(m.ps, cfg.backbone.d, rng);
    }
    return m;
}

Tensor Model::embed_crop(const MultiModalFrame& crop) const {
    return embed.embed_image(ps, normalize_pixels(build_six_channel(crop)));
}

FrameTokens Model::tokens(const MultiModalFrame& search_crop,
                          const std::vector<const MultiModalFrame*>& template_crops) const {
    FrameTokens t;
    t.search = embed_crop(search_crop);
    for (const MultiModalFrame* f : template_crops) t.templates.push_back(embed_crop(*f));
    if (search_crop.text) t.text = *search_crop.text;
    return t;
}

FrameOutput Model::run_frame(const FrameTokens& in, const std::vector<MemoryFrame>* memory,
                             const std::vector<const Tensor*>& F, FrameCache* cache,
                             KvCache* kv) const {
    Tensor M;
    bool from_query = false;
    if (mcp) {
        if (!memory || memory->empty()) {
            M = ps.value(mcp->query);
            from_query = true;
        } else {
            M = mcp->compress(ps, *memory, cache ? &cache->mcp : nullptr, kv);
        }
    }
    std::optional<Tensor> text_token;
    if (in.text) {
        text_token = embed.project_text(ps, *in.text);
    }
    const TokenSequence seq = assemble_sequence(M, in.templates, in.search, text_token, embed.tables(ps));

    FrameOutput out;
    out.search_offset = seq.offset(Segment::Search);
    out.tokens = seq.tokens.rows();
    out.backbone = backbone.forward_with_fusion(ps, seq, F, dsfs, state_rows(out.tokens),
                                                cache ? &cache->backbone : nullptr);
    out.pred = center.forward(ps, out.backbone.O_S, cache ? &cache->center : nullptr);
    out.modality_logits = modality.forward(ps, out.backbone.O_S, cache ? &cache->modality : nullptr);
    if (cache) {
        cache->memory_from_query = from_query;
        cache->memory_rows = M.rows();
        cache->tokens = out.tokens;
        cache->text_input.reset();
        if (in.text) {
            cache->text_input = in.text->reshaped({1, in.text->size()});
            cache->text_row = seq.offset(Segment::Text);
        }
    }
    return out;
}

Tensor Model::heads_backward(ParamStore& grads, const FrameCache& cache, const LossGrads& g) const {
    Tensor d = center.backward(grads, cache.center, g.dscore, g.doffset, g.dsize);
    d += modality.backward(grads, cache.modality, g.dlogits);
    return d;
}

std::vector<Tensor> Model::backward_frame(ParamStore& grads, const FrameCache& cache,
                                          const Tensor& dO, std::vector<Tensor>& dF,
                                          const std::vector<Tensor>* stage_input_grads,
                                          bool want_memory_grads) const {
    const Tensor dZ = backbone.backward(grads, cache.backbone, dO, dsfs, dF, stage_input_grads);
    std::vector<Tensor> memory_grads;
    if (mcp && cache.memory_rows > 0) {
        const Tensor dM = slice_rows(dZ, 0, cache.memory_rows);
        if (cache.memory_from_query) {
            if (Tensor* g = grads.grad_slot(mcp->query)) *g += dM;
        } else {
            memory_grads = mcp->backward(grads, cache.mcp, dM, want_memory_grads);
        }
    }
    if (cache.text_input) {
        embed.text_proj.backward(grads, *cache.text_input, slice_rows(dZ, cache.text_row, 1));
    }
    return memory_grads;
}

std::size_t Model::state_rows(std::size_t total_tokens) const {
    return cfg_.dsf.source == DsfSource::WholeSequence ? total_tokens : cfg_.n_search();
}

std::size_t Model::stage_of(std::size_t dsf_index) const {
    const auto& stages = backbone.config().fusion_stages;
    for (std::size_t si = 0; si < stages.size(); ++si) {
        if (stages[si].dsf_index == dsf_index) return si;
    }
    throw ConfigError("no fusion stage for DSF module " + std::to_string(dsf_index));
}

const Tensor& Model::dsf_input(const FrameOutput& out, std::size_t dsf_index) const {
    switch (cfg_.dsf.source) {
        case DsfSource::WholeSequence: return out.backbone.O;
        case DsfSource::StageInput: return out.backbone.stage_inputs.at(stage_of(dsf_index));
        case DsfSource::FinalSearch: break;
    }
    return out.backbone.O_S;
}

std::vector<ParamId> Model::trainable_ids() const {
    std::vector<ParamId> ids;
    for (ParamId i = 0; i < ps.size(); ++i) {
        if (ps.trainable(i)) ids.push_back(i);
    }
    return ids;
}

std::uint64_t Model::frozen_hash() const {
    std::uint64_t h = 1469598103934665603ull;
    const auto mix = [&h](const void* p, std::size_t n) {
        const auto* b = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= b[i];
            h *= 1099511628211ull;
        }
    };
    for (const ParamTensor& p : ps.all()) {
        if (p.trainable) continue;
        mix(p.name.data(), p.name.size());
        mix(p.value.data(), p.value.size() * sizeof(double));
    }
    return h;
}

}  // namespace unimd
