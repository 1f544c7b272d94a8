#include "unimd/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <optional>

namespace unimd {

std::string to_string(Scenario s) {
    switch (s) {
        case Scenario::ScaleVariation: return "SCALE_VARIATION";
        case Scenario::Occlusion: return "OCCLUSION";
        case Scenario::Distractors: return "DISTRACTORS";
        case Scenario::FastMotion: return "FAST_MOTION";
        case Scenario::Plain: return "PLAIN";
    }
    return "?";
}

Scenario scenario_from_string(const std::string& s) {
    std::string up;
    for (char c : s) up += c == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    for (Scenario sc : all_scenarios()) {
        if (to_string(sc) == up) return sc;
    }
    throw ConfigError("unknown scenario '" + s + "'");
}

const std::vector<Scenario>& all_scenarios() {
    static const std::vector<Scenario> all{Scenario::ScaleVariation, Scenario::Occlusion,
                                           Scenario::Distractors, Scenario::FastMotion,
                                           Scenario::Plain};
    return all;
}

std::string SyntheticSequence::id() const {
    return to_string(scenario) + "-" + to_string(modality) + "-" + std::to_string(seed);
}

namespace {

struct Rgb {
    double r = 0, g = 0, b = 0;
};

Rgb hsv(double h, double s, double v) {
    h = h - std::floor(h);
    const double i = std::floor(h * 6.0), f = h * 6.0 - i;
    const double p = v * (1 - s), q = v * (1 - f * s), t = v * (1 - (1 - f) * s);
    switch (static_cast<int>(i) % 6) {
        case 0: return {v * 255, t * 255, p * 255};
        case 1: return {q * 255, v * 255, p * 255};
        case 2: return {p * 255, v * 255, t * 255};
        case 3: return {p * 255, q * 255, v * 255};
        case 4: return {t * 255, p * 255, v * 255};
        default: return {v * 255, p * 255, q * 255};
    }
}

double quantize(double v) { return std::clamp(std::round(v), 0.0, 255.0); }

struct Appearance {
    Rgb c1, c2;
    int pattern = 0;  // 0 checker, 1 stripes, 2 rings

    Rgb at(double u, double v) const {
        bool first = false;
        switch (pattern) {
            case 0: first = ((static_cast<int>(u * 4) + static_cast<int>(v * 4)) & 1) == 0; break;
            case 1: first = (static_cast<int>((u + v) * 4) & 1) == 0; break;
            default: {
                const double r = std::hypot(u - 0.5, v - 0.5);
                first = (static_cast<int>(r * 7) & 1) == 0;
            }
        }
        return first ? c1 : c2;
    }
};

/// A rectangle in pixel units.
struct Rect {
    double cx = 0, cy = 0, w = 0, h = 0;

    bool contains(double x, double y) const {
        return x >= cx - 0.5 * w && x < cx + 0.5 * w && y >= cy - 0.5 * h && y < cy + 0.5 * h;
    }
};

double overlap_area(const Rect& a, const Rect& b) {
    const double ox = std::min(a.cx + a.w / 2, b.cx + b.w / 2) - std::max(a.cx - a.w / 2, b.cx - b.w / 2);
    const double oy = std::min(a.cy + a.h / 2, b.cy + b.h / 2) - std::max(a.cy - a.h / 2, b.cy - b.h / 2);
    return std::max(0.0, ox) * std::max(0.0, oy);
}

struct Mover {
    double x = 0, y = 0, vx = 0, vy = 0;

    void step(Rng& rng, double accel, double max_speed, double half_w, double half_h, double size) {
        vx += rng.normal(0.0, accel);
        vy += rng.normal(0.0, accel);
        const double sp = std::hypot(vx, vy);
        if (sp > max_speed) {
            vx *= max_speed / sp;
            vy *= max_speed / sp;
        }
        x += vx;
        y += vy;
        const double margin = 2.0;
        if (x - half_w < margin) { x = margin + half_w; vx = std::abs(vx); }
        if (x + half_w > size - margin) { x = size - margin - half_w; vx = -std::abs(vx); }
        if (y - half_h < margin) { y = margin + half_h; vy = std::abs(vy); }
        if (y + half_h > size - margin) { y = size - margin - half_h; vy = -std::abs(vy); }
    }
};

enum Layer : unsigned char { kBackground = 0, kTarget = 1, kDistractor = 2, kOccluder = 3 };

}  // namespace

SyntheticSequence generate(Scenario scenario, Modality modality, std::size_t length,
                           std::uint64_t seed, const GenerateOptions& opt) {
    if (length < 2) throw ValidationError("generate: length must be at least 2");
    if (opt.frame_size < 32) throw ValidationError("generate: frame_size must be at least 32");
    const std::size_t S = opt.frame_size;
    const double Sd = static_cast<double>(S);
    Rng rng(Rng::derive(seed, 0x5eed0000u + static_cast<std::uint64_t>(scenario)));

    // background: desaturated gratings plus low-resolution value noise
    const double a1 = rng.uniform(0.05, 0.2), b1 = rng.uniform(-0.2, 0.2), p1 = rng.uniform(0, 6.3);
    const double a2 = rng.uniform(-0.3, 0.3), b2 = rng.uniform(0.05, 0.3), p2 = rng.uniform(0, 6.3);
    const double base = rng.uniform(90, 150);
    const std::array<double, 3> tint{rng.uniform(0.85, 1.15), rng.uniform(0.85, 1.15),
                                     rng.uniform(0.85, 1.15)};
    const std::size_t nr = 9;
    const Tensor noise = rng.uniform_tensor({nr, nr}, -1.0, 1.0);
    Tensor texture({S, S});
    for (std::size_t y = 0; y < S; ++y) {
        for (std::size_t x = 0; x < S; ++x) {
            const double fx = static_cast<double>(x) / Sd * (nr - 1), fy = static_cast<double>(y) / Sd * (nr - 1);
            const std::size_t ix = static_cast<std::size_t>(fx), iy = static_cast<std::size_t>(fy);
            const double tx = fx - ix, ty = fy - iy;
            const double n = (1 - tx) * (1 - ty) * noise(iy, ix) + tx * (1 - ty) * noise(iy, ix + 1) +
                             (1 - tx) * ty * noise(iy + 1, ix) + tx * ty * noise(iy + 1, ix + 1);
            texture(y, x) = 0.5 * std::sin(a1 * x + b1 * y + p1) + 0.3 * std::sin(a2 * x + b2 * y + p2) + 0.4 * n;
        }
    }

    // target
    Appearance target;
    const double hue = rng.uniform();
    target.c1 = hsv(hue, rng.uniform(0.75, 1.0), rng.uniform(0.75, 1.0));
    target.c2 = hsv(hue + rng.uniform(0.35, 0.65), rng.uniform(0.6, 1.0), rng.uniform(0.25, 0.6));
    target.pattern = static_cast<int>(rng.index(3));
    const bool scale_var = scenario == Scenario::ScaleVariation;
    const double base_w = rng.uniform(scale_var ? 13.0 : 16.0, scale_var ? 18.0 : 28.0);
    const double base_h = base_w * rng.uniform(0.75, 1.33);

    // size schedule: log-linear triangle wave between smin and smax
    const double smin = scale_var ? 0.7 : 0.95, smax = scale_var ? 1.55 : 1.05;
    const double half_period = static_cast<double>(std::min<std::size_t>(length - 1, 40));
    const auto scale_at = [&](std::size_t t) {
        const double u = std::fmod(static_cast<double>(t) / half_period, 2.0);
        const double tri = u <= 1.0 ? u : 2.0 - u;
        return smin * std::pow(smax / smin, tri);
    };

    double max_speed = 1.0, accel = 0.2;
    if (scenario == Scenario::FastMotion) { max_speed = 8.0; accel = 3.0; }
    if (scenario == Scenario::Distractors) { max_speed = 1.3; accel = 0.25; }
    Mover tm;
    const double max_half_w = 0.5 * base_w * smax, max_half_h = 0.5 * base_h * smax;
    tm.x = rng.uniform(max_half_w + 4, Sd - max_half_w - 4);
    tm.y = rng.uniform(max_half_h + 4, Sd - max_half_h - 4);
    tm.vx = rng.normal(0.0, max_speed * 0.5);
    tm.vy = rng.normal(0.0, max_speed * 0.5);

    std::vector<Mover> distractors;
    std::vector<Appearance> distractor_look;
    if (scenario == Scenario::Distractors) {
        for (int k = 0; k < 2; ++k) {
            Mover m;
            m.x = rng.uniform(max_half_w + 4, Sd - max_half_w - 4);
            m.y = rng.uniform(max_half_h + 4, Sd - max_half_h - 4);
            m.vx = rng.normal(0.0, 1.0);
            m.vy = rng.normal(0.0, 1.0);
            distractors.push_back(m);
            Appearance a = target;
            const double shift = rng.uniform(0.03, 0.08);
            a.c1 = hsv(hue + shift, 0.9, 0.9);
            distractor_look.push_back(a);
        }
    }

    // occlusion events: an occluder sweeps across the target, fully covering it at tc
    std::vector<std::size_t> events;
    if (scenario == Scenario::Occlusion) {
        for (std::size_t tc = std::min<std::size_t>(length / 2, 25); tc < length; tc += 50) events.push_back(tc);
    }
    const double occ_speed = 2.0;
    const double occ_w = 1.7 * base_w * smax, occ_h = 1.7 * base_h * smax;
    const Rgb occ_color{rng.uniform(60, 90), rng.uniform(60, 90), rng.uniform(60, 90)};

    std::vector<double> text;
    if (modality == Modality::RGBL) {
        const std::array<double, 8> desc{target.c1.r, target.c1.g, target.c1.b, target.c2.r,
                                         target.c2.g, target.c2.b, 85.0 * target.pattern,
                                         255.0 * base_h / (base_w + base_h)};
        text.assign(opt.text_dim, 0.0);
        for (std::size_t i = 0; i < std::min(opt.text_dim, desc.size()); ++i) text[i] = desc[i] / 255.0 - 0.5;
    }

    SyntheticSequence seq;
    seq.scenario = scenario;
    seq.modality = modality;
    seq.seed = seed;
    std::vector<double> prev_luma;
    for (std::size_t t = 0; t < length; ++t) {
        const double s = scale_at(t);
        const double w = base_w * s, h = base_h * s;
        if (t > 0) tm.step(rng, accel, max_speed, 0.5 * w, 0.5 * h, Sd);
        for (Mover& m : distractors) m.step(rng, 0.3, 1.6, 0.5 * w, 0.5 * h, Sd);
        const Rect tr{tm.x, tm.y, w, h};

        std::optional<Rect> occ;
        for (std::size_t tc : events) {
            const double off = (static_cast<double>(t) - static_cast<double>(tc)) * occ_speed;
            if (std::abs(off) < 0.5 * (occ_w + w) + 4.0) occ = Rect{tm.x + off, tm.y, occ_w, occ_h};
        }
        const double vis = occ ? 1.0 - overlap_area(tr, *occ) / (w * h) : 1.0;

        MultiModalFrame f;
        f.modality = modality;
        f.rgb = Tensor({S, S, 3});
        std::vector<unsigned char> layer(S * S, kBackground);
        for (std::size_t y = 0; y < S; ++y) {
            for (std::size_t x = 0; x < S; ++x) {
                const double px = x + 0.5, py = y + 0.5;
                const double g = base + 45.0 * texture(y, x);
                Rgb c{g * tint[0], g * tint[1], g * tint[2]};
                for (std::size_t k = 0; k < distractors.size(); ++k) {
                    const Rect dr{distractors[k].x, distractors[k].y, w, h};
                    if (dr.contains(px, py)) {
                        c = distractor_look[k].at((px - dr.cx + 0.5 * w) / w, (py - dr.cy + 0.5 * h) / h);
                        layer[y * S + x] = kDistractor;
                    }
                }
                if (tr.contains(px, py)) {
                    c = target.at((px - tr.cx + 0.5 * w) / w, (py - tr.cy + 0.5 * h) / h);
                    layer[y * S + x] = kTarget;
                }
                if (occ && occ->contains(px, py)) {
                    const double shade = 10.0 * texture(y, x);
                    c = {occ_color.r + shade, occ_color.g + shade, occ_color.b + shade};
                    layer[y * S + x] = kOccluder;
                }
                double* out = f.rgb.data() + (y * S + x) * 3;
                out[0] = quantize(c.r);
                out[1] = quantize(c.g);
                out[2] = quantize(c.b);
            }
        }

        std::vector<double> luma(S * S);
        for (std::size_t i = 0; i < S * S; ++i) {
            luma[i] = (f.rgb[3 * i] + f.rgb[3 * i + 1] + f.rgb[3 * i + 2]) / 3.0;
        }
        if (has_aux(modality)) {
            Tensor aux({S, S, 3});
            for (std::size_t y = 0; y < S; ++y) {
                for (std::size_t x = 0; x < S; ++x) {
                    const std::size_t i = y * S + x;
                    std::array<double, 3> v{};
                    if (modality == Modality::RGBD) {
                        double d = 0;
                        switch (layer[i]) {
                            case kTarget: d = 70; break;
                            case kDistractor: d = 115; break;
                            case kOccluder: d = 35; break;
                            default: d = 185.0 - 50.0 * y / Sd + 8.0 * texture(y, x);
                        }
                        v = {d, d, d};
                    } else if (modality == Modality::RGBT) {
                        double heat = 0;
                        switch (layer[i]) {
                            case kTarget: heat = 225; break;
                            case kDistractor: heat = 120; break;
                            case kOccluder: heat = 70; break;
                            default: heat = 55.0 + 15.0 * texture(y, x);
                        }
                        v = {heat, 0.6 * heat, 255.0 - heat};
                    } else {
                        const double diff = t == 0 ? 0.0 : luma[i] - prev_luma[i];
                        v = {std::max(0.0, 2.0 * diff), std::max(0.0, -2.0 * diff), 2.0 * std::abs(diff)};
                    }
                    for (std::size_t c = 0; c < 3; ++c) aux[i * 3 + c] = quantize(v[c]);
                }
            }
            f.aux = std::move(aux);
        }
        if (!text.empty()) f.text = Tensor({text.size()}, text);
        prev_luma = std::move(luma);

        seq.frames.push_back(std::move(f));
        seq.gt_boxes.push_back(Box{tm.x / Sd, tm.y / Sd, w / Sd, h / Sd});
        seq.visibility.push_back(vis);
        seq.occluded.push_back(vis < 0.2);
    }
    return seq;
}

CropWindow CropWindow::around(const Box& box, double factor) {
    const double side = factor * std::sqrt(std::max(box.w * box.h, 1e-8));
    return {box.cx - 0.5 * side, box.cy - 0.5 * side, side};
}

Box CropWindow::to_crop(const Box& b) const {
    return {(b.cx - x0) / side, (b.cy - y0) / side, b.w / side, b.h / side};
}

Box CropWindow::to_frame(const Box& b) const {
    return {x0 + b.cx * side, y0 + b.cy * side, b.w * side, b.h * side};
}

namespace {

/// Bilinear sampling through `at(y, x, c)`, which handles out-of-range reads.
template <class At>
Tensor resample(std::size_t H, std::size_t W, std::size_t C, const CropWindow& win, std::size_t out,
                const At& at) {
    if (!(win.side > 0.0) || !std::isfinite(win.x0) || !std::isfinite(win.y0)) {
        throw ValidationError("crop_resize: degenerate window");
    }
    Tensor res({out, out, C});
    for (std::size_t i = 0; i < out; ++i) {
        const double fy = (win.y0 + (i + 0.5) / out * win.side) * H - 0.5;
        const long y0 = static_cast<long>(std::floor(fy));
        const double ty = fy - y0;
        for (std::size_t j = 0; j < out; ++j) {
            const double fx = (win.x0 + (j + 0.5) / out * win.side) * W - 0.5;
            const long x0 = static_cast<long>(std::floor(fx));
            const double tx = fx - x0;
            for (std::size_t c = 0; c < C; ++c) {
                res[(i * out + j) * C + c] = (1 - ty) * ((1 - tx) * at(y0, x0, c) + tx * at(y0, x0 + 1, c)) +
                                             ty * ((1 - tx) * at(y0 + 1, x0, c) + tx * at(y0 + 1, x0 + 1, c));
            }
        }
    }
    return res;
}

template <class Pixels>
Tensor crop_pixels(const Pixels& px, std::size_t H, std::size_t W, std::size_t C, const CropWindow& win,
                   std::size_t out, double fill) {
    return resample(H, W, C, win, out, [&](long y, long x, std::size_t c) {
        if (y < 0 || x < 0 || y >= static_cast<long>(H) || x >= static_cast<long>(W)) return fill;
        return static_cast<double>(px[(static_cast<std::size_t>(y) * W + static_cast<std::size_t>(x)) * C + c]);
    });
}

}  // namespace

Tensor crop_resize(const Tensor& image, const CropWindow& win, std::size_t out, double fill) {
    if (image.rank() != 3) throw DimensionError("crop_resize: image must be HxWxC");
    return crop_pixels(image.values(), image.shape()[0], image.shape()[1], image.shape()[2], win, out, fill);
}

MultiModalFrame crop_frame(const MultiModalFrame& frame, const CropWindow& win, std::size_t out) {
    MultiModalFrame c;
    c.modality = frame.modality;
    c.text = frame.text;
    c.rgb = crop_resize(frame.rgb, win, out);
    if (frame.aux) c.aux = crop_resize(*frame.aux, win, out, 0.0);
    return c;
}

namespace {

std::vector<std::uint8_t> to_bytes(const Tensor& t) {
    std::vector<std::uint8_t> b(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
        const double v = t[i];
        if (!(v >= 0.0 && v <= 255.0) || v != std::round(v)) {
            throw ValidationError("PackedFrame: pixel values must be whole numbers in [0,255]");
        }
        b[i] = static_cast<std::uint8_t>(v);
    }
    return b;
}

Tensor from_bytes(const std::vector<std::uint8_t>& b, std::size_t h, std::size_t w) {
    Tensor t({h, w, 3});
    for (std::size_t i = 0; i < b.size(); ++i) t[i] = b[i];
    return t;
}

}  // namespace

PackedFrame PackedFrame::pack(const MultiModalFrame& frame) {
    frame.validate();
    PackedFrame p;
    p.height = frame.rgb.shape()[0];
    p.width = frame.rgb.shape()[1];
    p.rgb = to_bytes(frame.rgb);
    if (frame.aux) p.aux = to_bytes(*frame.aux);
    p.text = frame.text;
    p.modality = frame.modality;
    return p;
}

MultiModalFrame PackedFrame::unpack() const {
    MultiModalFrame f;
    f.modality = modality;
    f.text = text;
    f.rgb = from_bytes(rgb, height, width);
    if (!aux.empty()) f.aux = from_bytes(aux, height, width);
    return f;
}

MultiModalFrame PackedFrame::crop(const CropWindow& win, std::size_t out) const {
    MultiModalFrame c;
    c.modality = modality;
    c.text = text;
    c.rgb = crop_pixels(rgb, height, width, 3, win, out, 127.5);
    if (!aux.empty()) c.aux = crop_pixels(aux, height, width, 3, win, out, 0.0);
    return c;
}

PackedSequence PackedSequence::pack(const SyntheticSequence& seq) {
    PackedSequence p;
    for (const MultiModalFrame& f : seq.frames) p.frames.push_back(PackedFrame::pack(f));
    p.gt_boxes = seq.gt_boxes;
    p.scenario = seq.scenario;
    p.modality = seq.modality;
    p.seed = seq.seed;
    return p;
}

}  // namespace unimd
