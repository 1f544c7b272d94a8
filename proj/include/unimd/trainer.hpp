#pragma once

#include <functional>
#include <string>
#include <vector>

#include "unimd/model.hpp"
#include "unimd/synthetic.hpp"

namespace unimd {

/// Decoupled weight decay Adam over the trainable parameters of a store.
class AdamW {
public:
    explicit AdamW(const TrainConfig& tc) : tc_(tc) {}

    /// Updates every trainable parameter that holds a gradient.
    void step(ParamStore& ps);
    std::size_t steps() const { return t_; }

private:
    TrainConfig tc_;
    std::size_t t_ = 0;
    std::vector<Tensor> m_, v_;
};

/// Scales all gradients so their global L2 norm is at most max_norm
/// (0 disables). Returns the norm before scaling.
double clip_grad_norm(ParamStore& ps, double max_norm);

struct StepLog {
    std::size_t step = 0;
    LossBreakdown loss;  // averaged over the clip's search frames
    double grad_norm = 0;
};

/// Thrown when a step produces a non-finite loss; what() carries the dump.
struct TrainingAborted : NumericError {
    using NumericError::NumericError;
};

struct TrainResult {
    std::vector<StepLog> steps;
    std::size_t trainable_values = 0;
    std::size_t total_values = 0;
    std::uint64_t frozen_hash_before = 0;
    std::uint64_t frozen_hash_after = 0;
};

struct TrainHooks {
    std::function<void(const StepLog&)> on_step;
};

/// Training set drawn from the config: train.sequences sequences of length
/// train.seq_length cycling through scenarios and modalities.
std::vector<PackedSequence> training_set(const Config& cfg);

/// One clip's loss and gradients. Frame templates..clip_frames-1 are search
/// frames; the last template frame also runs an initialization pass that
/// seeds the clip-local memory and the DSF states, exactly as at inference.
LossBreakdown clip_loss_and_grads(Model& model, const PackedSequence& seq, std::size_t start,
                                  std::size_t stride, Rng& rng);

/// train.steps clips, each followed by one AdamW step on trainable parameters.
TrainResult train(Model& model, const std::vector<PackedSequence>& data, const TrainHooks& hooks = {});

/// step,total,giou,l1,focal,ce,grad_norm
std::string loss_csv(const TrainResult& r);

}  // namespace unimd
