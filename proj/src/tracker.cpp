#include "unimd/tracker.hpp"

namespace unimd {

Tracker::Tracker(const Model& model)
    : model_(&model),
      bank_(model.config().mcp.bank_l, model.config().mcp.policy, model.config().mcp.fifo_k) {}

FrameOutput Tracker::step(const MultiModalFrame& frame, const Box& center_on) {
    const Config& cfg = model_->config();
    const CropWindow win = CropWindow::around(center_on, cfg.image.search_factor);
    const MultiModalFrame search = crop_frame(frame, win, cfg.image.search_size);
    std::vector<const MultiModalFrame*> tpl;
    for (const MultiModalFrame& t : templates_) tpl.push_back(&t);
    last_tokens_ = model_->tokens(search, tpl);

    std::vector<const Tensor*> F(states_.size(), nullptr);
    for (std::size_t i = 0; i < states_.size(); ++i) {
        if (states_[i].last_F) F[i] = &*states_[i].last_F;
    }
    FrameOutput out = model_->run_frame(last_tokens_, &bank_.frames(), F, nullptr, &kv_);
    out.pred.box = clamp_box(win.to_frame(out.pred.box));
    return out;
}

void Tracker::initialize(const MultiModalFrame& frame, const Box& box) {
    validate_box(box);
    const Config& cfg = model_->config();
    const CropWindow twin = CropWindow::around(box, cfg.image.template_factor);
    templates_.assign(cfg.train.templates, crop_frame(frame, twin, cfg.image.template_size));
    bank_ = MemoryBank(cfg.mcp.bank_l, cfg.mcp.policy, cfg.mcp.fifo_k);
    kv_ = KvCache{};
    states_.clear();
    last_ = box;
    frame_ = 0;

    last_out_ = step(frame, box);
    const std::size_t rows = model_->state_rows(last_out_.tokens);
    for (std::size_t i = 0; i < model_->dsfs.size(); ++i) {
        states_.push_back(DsfState::initial(rows, cfg.dsf_inner(), cfg.dsf.state_dim));
    }
    update_states(last_out_);
    if (model_->mcp) {
        bank_.insert(frame_, last_out_.backbone.O_S);
        kv_.retain(bank_.frames());
    }
}

Box Tracker::track(const MultiModalFrame& frame) {
    if (frame_ < 0) throw StateError("Tracker::track before initialize");
    ++frame_;
    last_out_ = step(frame, last_);
    last_ = last_out_.pred.box;
    update_states(last_out_);
    if (model_->mcp) {
        bank_.insert(frame_, last_out_.backbone.O_S);
        kv_.retain(bank_.frames());
    }
    return last_;
}

void Tracker::update_states(const FrameOutput& out) {
    for (std::size_t i = 0; i < states_.size(); ++i) {
        dynamic_state_forward(model_->ps, model_->dsfs[i].layer, model_->dsf_input(out, i), states_[i]);
    }
}

TrackerRun track_sequence(const Model& model, const SyntheticSequence& seq) {
    TrackerRun run;
    run.sequence_id = seq.id();
    run.scenario = seq.scenario;
    run.modality = seq.modality;
    run.gt = seq.gt_boxes;
    run.occluded = seq.occluded;
    Tracker tracker(model);
    const auto record = [&](const Box& b) {
        run.boxes.push_back(b);
        run.ious.push_back(iou(b, seq.gt_boxes[run.boxes.size() - 1]));
        run.bank_trace.push_back(tracker.bank().indices());
        std::vector<double> norms;
        for (const DsfState& s : tracker.states()) norms.push_back(frobenius(s.h));
        run.dsf_norms.push_back(std::move(norms));
        run.token_counts.push_back(tracker.last_output().tokens);
    };
    tracker.initialize(seq.frames[0], seq.gt_boxes[0]);
    record(seq.gt_boxes[0]);
    for (std::size_t t = 1; t < seq.length(); ++t) record(tracker.track(seq.frames[t]));
    return run;
}

}  // namespace unimd
