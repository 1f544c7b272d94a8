#pragma once

#include <array>

#include "unimd/config.hpp"
#include "unimd/embedding.hpp"
#include "unimd/nn.hpp"

namespace unimd {

/// Center-form box, normalized coordinates.
struct Box {
    double cx = 0.5, cy = 0.5, w = 0.0, h = 0.0;

    double x1() const { return cx - 0.5 * w; }
    double y1() const { return cy - 0.5 * h; }
    double x2() const { return cx + 0.5 * w; }
    double y2() const { return cy + 0.5 * h; }
    double area() const { return w * h; }
    static Box from_corners(double x1, double y1, double x2, double y2);
    bool operator==(const Box&) const = default;
};

double iou(const Box& a, const Box& b);
double giou(const Box& a, const Box& b);
/// 1 − GIoU, with the gradient w.r.t. (cx, cy, w, h) of `pred` when grad is non-null.
double giou_loss(const Box& pred, const Box& gt, std::array<double, 4>* grad = nullptr);
/// Keeps the box inside [0,1]² with a small positive extent.
Box clamp_box(const Box& b);

/// Raw head outputs over the g×g search grid, all as logits.
struct BoxPrediction {
    std::size_t grid = 0;
    Tensor score;   // [N×1]
    Tensor offset;  // [N×2], sigmoid gives the in-cell position
    Tensor size;    // [N×2], sigmoid gives normalized (w, h)
    std::size_t argmax = 0;
    Box box;        // decoded at argmax, clamped
};

/// Smallest row-major index among the maxima.
std::size_t score_argmax(const Tensor& score);
/// Unclamped box encoded by the logits at `cell`.
Box cell_box(const BoxPrediction& p, std::size_t cell);
/// Argmax decode followed by clamping.
void decode(BoxPrediction& p);

std::size_t grid_side(std::size_t tokens);

/// Per-token MLP stacks for score, offset and size.
struct CenterHead {
    FeedForward score, offset, size;

    struct Cache {
        FeedForward::Cache score, offset, size;
    };

    static CenterHead create(ParamStore& ps, std::size_t d, Rng& rng);
    BoxPrediction forward(const ParamStore& ps, const Tensor& O_S, Cache* cache = nullptr) const;
    Tensor backward(ParamStore& ps, const Cache& cache, const Tensor& dscore, const Tensor& doffset,
                    const Tensor& dsize) const;
    std::vector<ParamId> params() const;
};

/// Token mean followed by a 2-layer MLP to one logit per modality.
struct ModalityHead {
    FeedForward mlp;

    struct Cache {
        std::size_t tokens = 0;
        FeedForward::Cache mlp;
    };

    static ModalityHead create(ParamStore& ps, std::size_t d, Rng& rng);
    Tensor forward(const ParamStore& ps, const Tensor& O_S, Cache* cache = nullptr) const;  // [1×5]
    Tensor backward(ParamStore& ps, const Cache& cache, const Tensor& dlogits) const;
    std::vector<ParamId> params() const;
};

/// Gaussian bump on the grid peaking at 1 on the cell holding the box center;
/// σ per axis is the box extent in cells over 6, floored at one cell.
Tensor center_target(const Box& gt, std::size_t grid);
std::size_t center_cell(const Box& gt, std::size_t grid);

/// Penalty-reduced pixel-wise focal loss over score logits, normalized by the
/// number of exact-peak cells. Writes d/dscore when grad is non-null.
double focal_loss(const Tensor& score, const Tensor& target, Tensor* grad = nullptr);
/// logsumexp(logits) − logits[label].
double cross_entropy(const Tensor& logits, std::size_t label, Tensor* grad = nullptr);
/// Mean absolute difference over (cx, cy, w, h).
double l1_loss(const Box& pred, const Box& gt, std::array<double, 4>* grad = nullptr);

struct LossBreakdown {
    double total = 0, giou = 0, l1 = 0, focal = 0, ce = 0;
};

struct LossGrads {
    Tensor dscore, doffset, dsize, dlogits;
};

/// Weighted sum of the four terms. Box terms use the box encoded at the
/// ground-truth center cell. Throws ValidationError on an invalid gt box.
LossBreakdown total_loss(const BoxPrediction& pred, const Tensor& modality_logits, const Box& gt,
                         Modality gt_modality, const LossWeights& w, LossGrads* grads = nullptr);

void validate_box(const Box& b);

}  // namespace unimd
