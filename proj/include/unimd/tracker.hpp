#pragma once

#include <string>
#include <vector>

#include "unimd/model.hpp"
#include "unimd/synthetic.hpp"

namespace unimd {

struct TrackerRun {
    std::string sequence_id;
    Scenario scenario = Scenario::Plain;
    Modality modality = Modality::RGB;
    std::vector<Box> boxes;  // frame 0 is the given box
    std::vector<Box> gt;
    std::vector<double> ious;
    std::vector<bool> occluded;
    std::vector<std::vector<int>> bank_trace;    // bank indices after each frame
    std::vector<std::vector<double>> dsf_norms;  // ‖h‖ per module after each frame
    std::vector<std::size_t> token_counts;       // backbone sequence length per frame
};

/// Single-object tracker. Frame 0 runs an initialization pass on the
/// ground-truth-centered search region with the raw query tokens as memory,
/// seeding the memory bank and every DSF state.
class Tracker {
public:
    explicit Tracker(const Model& model);

    void initialize(const MultiModalFrame& frame, const Box& box);
    Box track(const MultiModalFrame& frame);

    /// Advances every DSF state from one frame's output.
    void update_states(const FrameOutput& out);

    const std::vector<DsfState>& states() const { return states_; }
    const MemoryBank& bank() const { return bank_; }
    const FrameOutput& last_output() const { return last_out_; }
    const FrameTokens& last_tokens() const { return last_tokens_; }
    int frame_index() const { return frame_; }

private:
    FrameOutput step(const MultiModalFrame& frame, const Box& center_on);

    const Model* model_;
    std::vector<MultiModalFrame> templates_;
    MemoryBank bank_;
    KvCache kv_;
    std::vector<DsfState> states_;
    Box last_;
    int frame_ = -1;
    FrameOutput last_out_;
    FrameTokens last_tokens_;
};

TrackerRun track_sequence(const Model& model, const SyntheticSequence& seq);

}  // namespace unimd
