#include "unimd/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace unimd {

void AdamW::step(ParamStore& ps) {
    ++t_;
    if (m_.size() < ps.size()) {
        m_.resize(ps.size());
        v_.resize(ps.size());
    }
    const double bc1 = 1.0 - std::pow(tc_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(tc_.beta2, static_cast<double>(t_));
    for (ParamId id = 0; id < ps.size(); ++id) {
        ParamTensor& p = ps[id];
        if (!p.trainable || !p.grad) continue;
        if (m_[id].empty()) {
            m_[id] = Tensor(p.value.shape());
            v_[id] = Tensor(p.value.shape());
        }
        Tensor& m = m_[id];
        Tensor& v = v_[id];
        const Tensor& g = *p.grad;
        for (std::size_t i = 0; i < g.size(); ++i) {
            m[i] = tc_.beta1 * m[i] + (1.0 - tc_.beta1) * g[i];
            v[i] = tc_.beta2 * v[i] + (1.0 - tc_.beta2) * g[i] * g[i];
            const double update = (m[i] / bc1) / (std::sqrt(v[i] / bc2) + tc_.adam_eps);
            p.value[i] -= tc_.lr * (update + tc_.weight_decay * p.value[i]);
        }
    }
}

double clip_grad_norm(ParamStore& ps, double max_norm) {
    double sq = 0.0;
    for (const ParamTensor& p : ps.all()) {
        if (!p.grad) continue;
        for (double g : p.grad->values()) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const double s = max_norm / norm;
        for (ParamTensor& p : ps.all()) {
            if (p.grad) *p.grad *= s;
        }
    }
    return norm;
}

std::vector<PackedSequence> training_set(const Config& cfg) {
    std::vector<PackedSequence> data;
    GenerateOptions opt;
    opt.frame_size = cfg.data.frame_size;
    opt.text_dim = cfg.image.text_dim;
    const auto& scenarios = all_scenarios();
    for (std::size_t i = 0; i < cfg.train.sequences; ++i) {
        const Scenario sc = scenarios[i % scenarios.size()];
        const auto mod = static_cast<Modality>((i + i / scenarios.size()) % kModalityCount);
        const std::uint64_t seed = Rng::derive(cfg.seed, 0x7a000 + i);
        data.push_back(PackedSequence::pack(generate(sc, mod, cfg.train.seq_length, seed, opt)));
    }
    return data;
}

namespace {

struct PassRecord {
    FrameCache cache;
    FrameOutput out;
    std::vector<DynamicStateLayer::Cache> dsf;
    std::vector<int> memory_indices;
    bool has_loss = false;
    LossGrads grads;
};

}  // namespace

LossBreakdown clip_loss_and_grads(Model& model, const PackedSequence& seq, std::size_t start,
                                  std::size_t stride, Rng& rng) {
    const Config& cfg = model.config();
    const TrainConfig& tc = cfg.train;
    const std::size_t n_tpl = tc.templates;
    if (start + (tc.clip_frames - 1) * stride >= seq.frames.size()) {
        throw ValidationError("clip exceeds sequence length");
    }
    const auto frame_at = [&](std::size_t k) { return start + k * stride; };

    std::vector<MultiModalFrame> tpl_crops;
    for (std::size_t k = 0; k < n_tpl; ++k) {
        const std::size_t f = frame_at(k);
        tpl_crops.push_back(seq.frames[f].crop(CropWindow::around(seq.gt_boxes[f], cfg.image.template_factor),
                                               cfg.image.template_size));
    }
    std::vector<const MultiModalFrame*> tpl;
    for (const MultiModalFrame& c : tpl_crops) tpl.push_back(&c);

    // pass 0: initialization on the last template frame; passes 1.. are search frames
    const std::size_t n_pass = tc.clip_frames - n_tpl + 1;
    std::vector<FrameTokens> inputs;
    std::vector<Box> gt_crop(n_pass);
    for (std::size_t j = 0; j < n_pass; ++j) {
        const std::size_t f = frame_at(n_tpl - 1 + j);
        const Box& gt = seq.gt_boxes[f];
        CropWindow win = CropWindow::around(gt, cfg.image.search_factor);
        if (j > 0) {
            const double side = win.side * std::exp(rng.uniform(-tc.jitter_scale, tc.jitter_scale));
            const double cx = gt.cx + rng.uniform(-tc.jitter_center, tc.jitter_center) * side;
            const double cy = gt.cy + rng.uniform(-tc.jitter_center, tc.jitter_center) * side;
            win = CropWindow{cx - 0.5 * side, cy - 0.5 * side, side};
        }
        gt_crop[j] = clamp_box(win.to_crop(gt));
        inputs.push_back(model.tokens(seq.frames[f].crop(win, cfg.image.search_size), tpl));
    }

    const std::size_t n_dsf = model.dsfs.size();
    std::vector<PassRecord> rec(n_pass);
    std::vector<DsfState> states;
    MemoryBank bank(cfg.mcp.bank_l, cfg.mcp.policy, cfg.mcp.fifo_k);
    LossBreakdown sum;
    const double inv = 1.0 / static_cast<double>(n_pass - 1);
    for (std::size_t j = 0; j < n_pass; ++j) {
        PassRecord& r = rec[j];
        std::vector<const Tensor*> F(n_dsf, nullptr);
        for (std::size_t i = 0; i < states.size(); ++i) {
            if (states[i].last_F) F[i] = &*states[i].last_F;
        }
        r.memory_indices = bank.indices();
        r.out = model.run_frame(inputs[j], &bank.frames(), F, &r.cache);
        if (j > 0) {
            const LossBreakdown l = total_loss(r.out.pred, r.out.modality_logits, gt_crop[j],
                                               seq.modality, cfg.loss, &r.grads);
            r.has_loss = true;
            sum.total += l.total * inv;
            sum.giou += l.giou * inv;
            sum.l1 += l.l1 * inv;
            sum.focal += l.focal * inv;
            sum.ce += l.ce * inv;
            for (Tensor* t : {&r.grads.dscore, &r.grads.doffset, &r.grads.dsize, &r.grads.dlogits}) *t *= inv;
        }
        if (j == 0) {
            for (std::size_t i = 0; i < n_dsf; ++i) {
                states.push_back(DsfState::initial(model.state_rows(r.out.tokens), cfg.dsf_inner(),
                                                   cfg.dsf.state_dim));
            }
        }
        if (j + 1 < n_pass) {
            r.dsf.resize(n_dsf);
            for (std::size_t i = 0; i < n_dsf; ++i) {
                DsfState next;
                model.dsfs[i].layer.forward(model.ps, model.dsf_input(r.out, i), states[i], next, &r.dsf[i]);
                states[i] = std::move(next);
            }
        }
        if (model.mcp) bank.insert(static_cast<int>(j), r.out.backbone.O_S);
    }
    if (!std::isfinite(sum.total)) return sum;

    // reverse pass: DSF states, fused features and memory carry gradient backwards in time
    std::vector<std::vector<Tensor>> dF(n_pass, std::vector<Tensor>(n_dsf));
    std::vector<Tensor> dh(n_dsf);
    std::vector<Tensor> dmem(n_pass);
    const bool stage_source = cfg.dsf.source == DsfSource::StageInput;
    for (std::size_t j = n_pass; j-- > 0;) {
        PassRecord& r = rec[j];
        const Tensor& O_S = r.out.backbone.O_S;
        Tensor dO_S(O_S.shape());
        Tensor dO(r.out.backbone.O.shape());
        std::vector<Tensor> stage_grads(stage_source ? model.backbone.config().fusion_stages.size() : 0);
        if (r.has_loss) dO_S += model.heads_backward(model.ps, r.cache, r.grads);
        if (j + 1 < n_pass) {
            for (std::size_t i = 0; i < n_dsf; ++i) {
                const Tensor& input = model.dsf_input(r.out, i);
                const Tensor dFi = dF[j][i].empty() ? Tensor({input.rows(), input.cols()}) : dF[j][i];
                Tensor dh_prev;
                const Tensor din = model.dsfs[i].layer.backward(model.ps, r.dsf[i], dFi, dh[i], dh_prev);
                dh[i] = std::move(dh_prev);
                switch (cfg.dsf.source) {
                    case DsfSource::FinalSearch: dO_S += din; break;
                    case DsfSource::WholeSequence: dO += din; break;
                    case DsfSource::StageInput: {
                        Tensor& sg = stage_grads[model.stage_of(i)];
                        if (sg.empty()) sg = din; else sg += din;
                    }
                }
            }
        }
        if (!dmem[j].empty()) dO_S += dmem[j];
        add_rows(dO, r.out.search_offset, dO_S);
        std::vector<Tensor> dF_prev(n_dsf);
        const std::vector<Tensor> mem_grads =
            model.backward_frame(model.ps, r.cache, dO, dF_prev, stage_source ? &stage_grads : nullptr,
                                 tc.memory_backprop);
        if (j > 0) dF[j - 1] = std::move(dF_prev);
        for (std::size_t k = 0; k < mem_grads.size(); ++k) {
            Tensor& slot = dmem[static_cast<std::size_t>(r.memory_indices[k])];
            if (slot.empty()) slot = mem_grads[k]; else slot += mem_grads[k];
        }
    }
    return sum;
}

TrainResult train(Model& model, const std::vector<PackedSequence>& data, const TrainHooks& hooks) {
    const TrainConfig& tc = model.config().train;
    if (data.empty()) throw ValidationError("train: empty dataset");
    TrainResult res;
    res.trainable_values = model.ps.count_values(true);
    res.total_values = model.ps.count_values(false);
    res.frozen_hash_before = model.frozen_hash();
    Rng rng(Rng::derive(model.config().seed, 0x7ca1));
    AdamW opt(tc);
    for (std::size_t step = 0; step < tc.steps; ++step) {
        const PackedSequence& seq = data[rng.index(data.size())];
        if (seq.frames.size() < tc.clip_frames) throw ValidationError("train: sequence shorter than a clip");
        const std::size_t max_stride = std::min<std::size_t>(2, (seq.frames.size() - 1) / (tc.clip_frames - 1));
        const std::size_t stride = 1 + rng.index(max_stride);
        const std::size_t span = (tc.clip_frames - 1) * stride;
        const std::size_t start = rng.index(seq.frames.size() - span);
        model.ps.zero_grad();
        StepLog log;
        log.step = step;
        log.loss = clip_loss_and_grads(model, seq, start, stride, rng);
        const bool finite = std::isfinite(log.loss.total) && std::isfinite(log.loss.giou) &&
                            std::isfinite(log.loss.l1) && std::isfinite(log.loss.focal) &&
                            std::isfinite(log.loss.ce);
        if (!finite) {
            std::ostringstream os;
            os << "non-finite loss at step " << step << " (sequence " << to_string(seq.scenario) << "-"
               << to_string(seq.modality) << "-" << seq.seed << ", start " << start << ", stride "
               << stride << "): total=" << log.loss.total << " giou=" << log.loss.giou
               << " l1=" << log.loss.l1 << " focal=" << log.loss.focal << " ce=" << log.loss.ce;
            for (const ParamTensor& p : model.ps.all()) {
                if (p.trainable && !p.value.all_finite()) os << "\n  non-finite parameter " << p.name;
            }
            throw TrainingAborted(os.str());
        }
        log.grad_norm = clip_grad_norm(model.ps, tc.grad_clip);
        opt.step(model.ps);
        res.steps.push_back(log);
        if (hooks.on_step) hooks.on_step(log);
    }
    model.ps.zero_grad();
    res.frozen_hash_after = model.frozen_hash();
    return res;
}

std::string loss_csv(const TrainResult& r) {
    std::ostringstream os;
    os.precision(10);
    os << "step,total,giou,l1,focal,ce,grad_norm\n";
    for (const StepLog& s : r.steps) {
        os << s.step << ',' << s.loss.total << ',' << s.loss.giou << ',' << s.loss.l1 << ','
           << s.loss.focal << ',' << s.loss.ce << ',' << s.grad_norm << '\n';
    }
    return os.str();
}

}  // namespace unimd
