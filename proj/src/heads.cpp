#include "unimd/heads.hpp"

#include <algorithm>
#include <cmath>

namespace unimd {

Box Box::from_corners(double x1, double y1, double x2, double y2) {
    return Box{0.5 * (x1 + x2), 0.5 * (y1 + y2), x2 - x1, y2 - y1};
}

double iou(const Box& a, const Box& b) {
    const double iw = std::max(0.0, std::min(a.x2(), b.x2()) - std::max(a.x1(), b.x1()));
    const double ih = std::max(0.0, std::min(a.y2(), b.y2()) - std::max(a.y1(), b.y1()));
    const double inter = iw * ih;
    const double area_a = (a.x2() - a.x1()) * (a.y2() - a.y1());
    const double area_b = (b.x2() - b.x1()) * (b.y2() - b.y1());
    const double uni = area_a + area_b - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

double giou(const Box& a, const Box& b) { return 1.0 - giou_loss(a, b); }

double giou_loss(const Box& p, const Box& g, std::array<double, 4>* grad) {
    const double px1 = p.x1(), py1 = p.y1(), px2 = p.x2(), py2 = p.y2();
    const double gx1 = g.x1(), gy1 = g.y1(), gx2 = g.x2(), gy2 = g.y2();
    const double ix1 = std::max(px1, gx1), ix2 = std::min(px2, gx2);
    const double iy1 = std::max(py1, gy1), iy2 = std::min(py2, gy2);
    const double iw = std::max(0.0, ix2 - ix1), ih = std::max(0.0, iy2 - iy1);
    const double inter = iw * ih;
    const double ap = (px2 - px1) * (py2 - py1);
    const double ag = (gx2 - gx1) * (gy2 - gy1);
    const double uni = ap + ag - inter;
    const double ex1 = std::min(px1, gx1), ex2 = std::max(px2, gx2);
    const double ey1 = std::min(py1, gy1), ey2 = std::max(py2, gy2);
    const double ew = ex2 - ex1, eh = ey2 - ey1;
    const double enc = ew * eh;
    if (!(uni > 0.0) || !(enc > 0.0)) throw NumericError("giou_loss: degenerate boxes");
    const double loss = 2.0 - inter / uni - uni / enc;
    if (!grad) return loss;

    const double d_uni = inter / (uni * uni) - 1.0 / enc;
    const double d_inter = -1.0 / uni - d_uni;
    const double d_enc = uni / (enc * enc);
    double dx1 = 0, dy1 = 0, dx2 = 0, dy2 = 0;
    // area of pred
    dx2 += d_uni * (py2 - py1);
    dx1 -= d_uni * (py2 - py1);
    dy2 += d_uni * (px2 - px1);
    dy1 -= d_uni * (px2 - px1);
    // intersection
    if (iw > 0.0 && ih > 0.0) {
        const double diw = d_inter * ih, dih = d_inter * iw;
        if (px2 < gx2) dx2 += diw;
        if (px1 > gx1) dx1 -= diw;
        if (py2 < gy2) dy2 += dih;
        if (py1 > gy1) dy1 -= dih;
    }
    // enclosing box
    const double dew = d_enc * eh, deh = d_enc * ew;
    if (px2 > gx2) dx2 += dew;
    if (px1 < gx1) dx1 -= dew;
    if (py2 > gy2) dy2 += deh;
    if (py1 < gy1) dy1 -= deh;
    (*grad)[0] = dx1 + dx2;
    (*grad)[1] = dy1 + dy2;
    (*grad)[2] = 0.5 * (dx2 - dx1);
    (*grad)[3] = 0.5 * (dy2 - dy1);
    return loss;
}

Box clamp_box(const Box& b) {
    constexpr double kMin = 1e-4;
    double x1 = std::clamp(b.x1(), 0.0, 1.0 - kMin), x2 = std::clamp(b.x2(), kMin, 1.0);
    double y1 = std::clamp(b.y1(), 0.0, 1.0 - kMin), y2 = std::clamp(b.y2(), kMin, 1.0);
    if (x2 - x1 < kMin) x2 = std::min(1.0, x1 + kMin), x1 = x2 - kMin;
    if (y2 - y1 < kMin) y2 = std::min(1.0, y1 + kMin), y1 = y2 - kMin;
    return Box::from_corners(x1, y1, x2, y2);
}

std::size_t grid_side(std::size_t tokens) {
    const auto g = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(tokens))));
    if (g == 0 || g * g != tokens) {
        throw DimensionError("search token count " + std::to_string(tokens) +
                             " is not a perfect square");
    }
    return g;
}

std::size_t score_argmax(const Tensor& score) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < score.size(); ++i) {
        if (score[i] > score[best]) best = i;
    }
    return best;
}

Box cell_box(const BoxPrediction& p, std::size_t cell) {
    const double g = static_cast<double>(p.grid);
    const double r = static_cast<double>(cell / p.grid), c = static_cast<double>(cell % p.grid);
    return Box{(c + sigmoid(p.offset(cell, 0))) / g, (r + sigmoid(p.offset(cell, 1))) / g,
               sigmoid(p.size(cell, 0)), sigmoid(p.size(cell, 1))};
}

void decode(BoxPrediction& p) {
    p.argmax = score_argmax(p.score);
    p.box = clamp_box(cell_box(p, p.argmax));
}

CenterHead CenterHead::create(ParamStore& ps, std::size_t d, Rng& rng) {
    CenterHead h;
    h.score = FeedForward::create(ps, "head.center.score", d, d, 1, true, rng);
    h.offset = FeedForward::create(ps, "head.center.offset", d, d, 2, true, rng);
    h.size = FeedForward::create(ps, "head.center.size", d, d, 2, true, rng);
    return h;
}

BoxPrediction CenterHead::forward(const ParamStore& ps, const Tensor& O_S, Cache* cache) const {
    BoxPrediction p;
    p.grid = grid_side(O_S.rows());
    p.score = score.forward(ps, O_S, cache ? &cache->score : nullptr);
    p.offset = offset.forward(ps, O_S, cache ? &cache->offset : nullptr);
    p.size = size.forward(ps, O_S, cache ? &cache->size : nullptr);
    decode(p);
    return p;
}

Tensor CenterHead::backward(ParamStore& ps, const Cache& cache, const Tensor& dscore,
                            const Tensor& doffset, const Tensor& dsize) const {
    Tensor dx = score.backward(ps, cache.score, dscore);
    dx += offset.backward(ps, cache.offset, doffset);
    dx += size.backward(ps, cache.size, dsize);
    return dx;
}

std::vector<ParamId> CenterHead::params() const {
    std::vector<ParamId> ids = score.params();
    for (const auto& g : {offset.params(), size.params()}) ids.insert(ids.end(), g.begin(), g.end());
    return ids;
}

ModalityHead ModalityHead::create(ParamStore& ps, std::size_t d, Rng& rng) {
    ModalityHead h;
    h.mlp = FeedForward::create(ps, "head.modality", d, d, kModalityCount, true, rng);
    return h;
}

Tensor ModalityHead::forward(const ParamStore& ps, const Tensor& O_S, Cache* cache) const {
    if (cache) cache->tokens = O_S.rows();
    return mlp.forward(ps, row_mean(O_S), cache ? &cache->mlp : nullptr);
}

Tensor ModalityHead::backward(ParamStore& ps, const Cache& cache, const Tensor& dlogits) const {
    const Tensor dmean = mlp.backward(ps, cache.mlp, dlogits);
    Tensor dx({cache.tokens, dmean.cols()});
    const double inv = 1.0 / static_cast<double>(cache.tokens);
    for (std::size_t i = 0; i < cache.tokens; ++i) {
        for (std::size_t j = 0; j < dmean.cols(); ++j) dx(i, j) = dmean[j] * inv;
    }
    return dx;
}

std::vector<ParamId> ModalityHead::params() const { return mlp.params(); }

std::size_t center_cell(const Box& gt, std::size_t grid) {
    const auto cell = [grid](double v) {
        const double c = std::floor(v * static_cast<double>(grid));
        return static_cast<std::size_t>(std::clamp(c, 0.0, static_cast<double>(grid - 1)));
    };
    return cell(gt.cy) * grid + cell(gt.cx);
}

Tensor center_target(const Box& gt, std::size_t grid) {
    const std::size_t cell = center_cell(gt, grid);
    const double r0 = static_cast<double>(cell / grid), c0 = static_cast<double>(cell % grid);
    const double g = static_cast<double>(grid);
    const double sx = std::max(1.0, gt.w * g / 6.0), sy = std::max(1.0, gt.h * g / 6.0);
    Tensor t({grid * grid, 1});
    for (std::size_t r = 0; r < grid; ++r) {
        for (std::size_t c = 0; c < grid; ++c) {
            const double dx = static_cast<double>(c) - c0, dy = static_cast<double>(r) - r0;
            t[r * grid + c] = std::exp(-(dx * dx) / (2 * sx * sx) - (dy * dy) / (2 * sy * sy));
        }
    }
    return t;
}

double focal_loss(const Tensor& score, const Tensor& target, Tensor* grad) {
    if (score.size() != target.size()) throw DimensionError("focal_loss: score/target mismatch");
    std::size_t positives = 0;
    for (double y : target.values()) positives += (y == 1.0);
    const double norm = 1.0 / static_cast<double>(std::max<std::size_t>(positives, 1));
    if (grad) *grad = Tensor(score.shape());
    double loss = 0.0;
    for (std::size_t i = 0; i < score.size(); ++i) {
        const double s = score[i];
        const double p = sigmoid(s);
        const double log_p = -softplus(-s), log_1mp = -softplus(s);
        if (target[i] == 1.0) {
            const double q = 1.0 - p;
            loss -= q * q * log_p;
            if (grad) (*grad)[i] = norm * (2.0 * p * q * q * log_p - q * q * q);
        } else {
            const double w = std::pow(1.0 - target[i], 4);
            loss -= w * p * p * log_1mp;
            if (grad) (*grad)[i] = norm * w * (p * p * p - 2.0 * p * p * (1.0 - p) * log_1mp);
        }
    }
    return loss * norm;
}

double cross_entropy(const Tensor& logits, std::size_t label, Tensor* grad) {
    if (label >= logits.size()) throw DimensionError("cross_entropy: label out of range");
    double mx = logits[0];
    for (double v : logits.values()) mx = std::max(mx, v);
    double sum = 0.0;
    for (double v : logits.values()) sum += std::exp(v - mx);
    const double lse = mx + std::log(sum);
    if (grad) {
        *grad = Tensor(logits.shape());
        for (std::size_t i = 0; i < logits.size(); ++i) (*grad)[i] = std::exp(logits[i] - lse);
        (*grad)[label] -= 1.0;
    }
    return lse - logits[label];
}

double l1_loss(const Box& p, const Box& g, std::array<double, 4>* grad) {
    const std::array<double, 4> diff{p.cx - g.cx, p.cy - g.cy, p.w - g.w, p.h - g.h};
    double loss = 0.0;
    for (std::size_t i = 0; i < 4; ++i) {
        loss += std::abs(diff[i]);
        if (grad) (*grad)[i] = diff[i] > 0 ? 0.25 : (diff[i] < 0 ? -0.25 : 0.0);
    }
    return loss / 4.0;
}

void validate_box(const Box& b) {
    const bool ok = std::isfinite(b.cx) && std::isfinite(b.cy) && b.w > 0.0 && b.h > 0.0 &&
                    b.x1() >= -1e-9 && b.y1() >= -1e-9 && b.x2() <= 1.0 + 1e-9 &&
                    b.y2() <= 1.0 + 1e-9;
    if (!ok) throw ValidationError("ground-truth box outside [0,1]² or with non-positive size");
}

LossBreakdown total_loss(const BoxPrediction& pred, const Tensor& logits, const Box& gt,
                         Modality gt_modality, const LossWeights& w, LossGrads* grads) {
    validate_box(gt);
    const std::size_t g = pred.grid;
    const std::size_t cell = center_cell(gt, g);
    const Box box = cell_box(pred, cell);

    LossBreakdown out;
    std::array<double, 4> dg{}, dl{};
    out.giou = giou_loss(box, gt, grads ? &dg : nullptr);
    out.l1 = l1_loss(box, gt, grads ? &dl : nullptr);
    const Tensor target = center_target(gt, g);
    Tensor dscore, dlogits;
    out.focal = focal_loss(pred.score, target, grads ? &dscore : nullptr);
    out.ce = cross_entropy(logits, static_cast<std::size_t>(gt_modality), grads ? &dlogits : nullptr);
    out.total = w.giou * out.giou + w.l1 * out.l1 + w.focal * out.focal + w.ce * out.ce;
    if (!grads) return out;

    std::array<double, 4> db{};
    for (std::size_t i = 0; i < 4; ++i) db[i] = w.giou * dg[i] + w.l1 * dl[i];
    grads->dscore = dscore * w.focal;
    grads->dlogits = dlogits * w.ce;
    grads->doffset = Tensor(pred.offset.shape());
    grads->dsize = Tensor(pred.size.shape());
    const double gd = static_cast<double>(g);
    for (std::size_t k = 0; k < 2; ++k) {
        const double so = sigmoid(pred.offset(cell, k));
        grads->doffset(cell, k) = db[k] * so * (1.0 - so) / gd;
        const double ss = sigmoid(pred.size(cell, k));
        grads->dsize(cell, k) = db[2 + k] * ss * (1.0 - ss);
    }
    return out;
}

}  // namespace unimd
