#include "unimd/embedding.hpp"

#include <cctype>
#include <cmath>

namespace unimd {

std::string to_string(Modality m) {
    switch (m) {
        case Modality::RGB: return "RGB";
        case Modality::RGBD: return "RGBD";
        case Modality::RGBT: return "RGBT";
        case Modality::RGBE: return "RGBE";
        case Modality::RGBL: return "RGBL";
    }
    return "?";
}

Modality modality_from_string(const std::string& s) {
    std::string upper = s;
    for (char& c : upper) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    for (int i = 0; i < static_cast<int>(kModalityCount); ++i) {
        if (to_string(static_cast<Modality>(i)) == upper) return static_cast<Modality>(i);
    }
    throw ConfigError("unknown modality: " + s);
}

bool has_aux(Modality m) {
    return m == Modality::RGBD || m == Modality::RGBT || m == Modality::RGBE;
}

namespace {

void check_pixels(const Tensor& t, const char* what) {
    for (double v : t.values()) {
        if (!(v >= 0.0 && v <= 255.0)) {
            throw ValidationError(std::string(what) + ": pixel value outside [0,255]");
        }
    }
}

}  // namespace

void MultiModalFrame::validate() const {
    if (rgb.rank() != 3 || rgb.shape()[2] != 3) throw ValidationError("rgb must be H×W×3");
    check_pixels(rgb, "rgb");
    if (aux.has_value() != has_aux(modality)) {
        throw ValidationError("aux image presence does not match modality " + to_string(modality));
    }
    if (aux) {
        if (aux->shape() != rgb.shape()) throw ValidationError("aux shape differs from rgb");
        check_pixels(*aux, "aux");
    }
}

Tensor build_six_channel(const MultiModalFrame& frame) {
    frame.validate();
    const std::size_t h = frame.rgb.shape()[0], w = frame.rgb.shape()[1];
    const Tensor& second = frame.aux ? *frame.aux : frame.rgb;
    Tensor out({h, w, 6});
    for (std::size_t i = 0; i < h * w; ++i) {
        for (std::size_t c = 0; c < 3; ++c) {
            out[i * 6 + c] = frame.rgb[i * 3 + c];
            out[i * 6 + 3 + c] = second[i * 3 + c];
        }
    }
    return out;
}

Tensor normalize_pixels(const Tensor& image) {
    Tensor out = image;
    for (double& v : out.values()) v = (v / 255.0 - 0.5) / 0.25;
    return out;
}

Tensor patch_embed(const Tensor& image, std::size_t patch, const Tensor& weight,
                   const Tensor& bias) {
    if (image.rank() != 3) throw DimensionError("patch_embed: expected H×W×C image");
    const std::size_t h = image.shape()[0], w = image.shape()[1], c = image.shape()[2];
    if (patch == 0 || h % patch != 0 || w % patch != 0) {
        throw DimensionError("patch_embed: image " + shape_string(image.shape()) +
                             " not divisible by patch " + std::to_string(patch));
    }
    const std::size_t flat = patch * patch * c;
    if (weight.rows() != flat || bias.size() != weight.cols()) {
        throw DimensionError("patch_embed: weight " + shape_string(weight.shape()) +
                             " does not match patch length " + std::to_string(flat));
    }
    const std::size_t gh = h / patch, gw = w / patch;
    Tensor patches({gh * gw, flat});
    for (std::size_t py = 0; py < gh; ++py) {
        for (std::size_t px = 0; px < gw; ++px) {
            double* dst = patches.data() + (py * gw + px) * flat;
            for (std::size_t y = 0; y < patch; ++y) {
                const double* src = image.data() + ((py * patch + y) * w + px * patch) * c;
                std::copy(src, src + patch * c, dst + y * patch * c);
            }
        }
    }
    Tensor tokens = matmul(patches, weight);
    for (std::size_t i = 0; i < tokens.rows(); ++i) {
        auto r = tokens.row(i);
        for (std::size_t j = 0; j < r.size(); ++j) r[j] += bias[j];
    }
    return tokens;
}

std::size_t TokenSequence::count(Segment s) const {
    std::size_t n = 0;
    for (Segment t : segments) n += (t == s);
    return n;
}

std::size_t TokenSequence::offset(Segment s) const {
    for (std::size_t i = 0; i < segments.size(); ++i) {
        if (segments[i] == s) return i;
    }
    return segments.size();
}

TokenSequence assemble_sequence(const Tensor& memory, const std::vector<Tensor>& templates,
                                const Tensor& search, const std::optional<Tensor>& text,
                                const SequenceEmbeddings& emb, int frame_index) {
    const std::size_t d = search.cols();
    const auto check = [d](const Tensor& t, const char* what) {
        if (!t.empty() && t.cols() != d) {
            throw ValidationError(std::string("assemble_sequence: ") + what + " width " +
                                  std::to_string(t.cols()) + " != " + std::to_string(d));
        }
    };
    check(memory, "memory");
    for (const Tensor& t : templates) check(t, "template");
    if (text) {
        check(*text, "text");
        if (text->rows() != 1) throw ValidationError("assemble_sequence: text must be one token");
    }
    if (emb.search_pos && emb.search_pos->rows() != search.rows()) {
        throw ValidationError("assemble_sequence: search token count does not match its table");
    }
    if (emb.template_pos) {
        for (const Tensor& t : templates) {
            if (t.rows() != emb.template_pos->rows()) {
                throw ValidationError("assemble_sequence: template token count mismatch");
            }
        }
    }

    std::vector<const Tensor*> parts{&memory};
    for (const Tensor& t : templates) parts.push_back(&t);
    parts.push_back(&search);
    if (text) parts.push_back(&*text);

    TokenSequence seq;
    seq.frame_index = frame_index;
    seq.tokens = concat_rows(parts);
    seq.segments.reserve(seq.tokens.rows());

    const auto add_type = [&](std::size_t row, Segment s) {
        if (!emb.type) return;
        const auto t = emb.type->row(static_cast<std::size_t>(s));
        auto r = seq.tokens.row(row);
        for (std::size_t j = 0; j < d; ++j) r[j] += t[j];
    };
    const auto add_pos = [&](std::size_t row, const Tensor* table, std::size_t k) {
        if (!table) return;
        const auto p = table->row(k);
        auto r = seq.tokens.row(row);
        for (std::size_t j = 0; j < d; ++j) r[j] += p[j];
    };

    std::size_t row = 0;
    for (std::size_t i = 0; i < memory.rows(); ++i, ++row) {
        seq.segments.push_back(Segment::Memory);
        add_type(row, Segment::Memory);
    }
    for (const Tensor& t : templates) {
        for (std::size_t i = 0; i < t.rows(); ++i, ++row) {
            seq.segments.push_back(Segment::Template);
            add_pos(row, emb.template_pos, i);
            add_type(row, Segment::Template);
        }
    }
    for (std::size_t i = 0; i < search.rows(); ++i, ++row) {
        seq.segments.push_back(Segment::Search);
        add_pos(row, emb.search_pos, i);
        add_type(row, Segment::Search);
    }
    if (text) {
        seq.segments.push_back(Segment::Text);
        add_type(row, Segment::Text);
        ++row;
    }
    return seq;
}

namespace {

// 2-D sine/cosine table, half the channels encoding rows and half columns.
Tensor sincos_table(std::size_t grid, std::size_t d, double amplitude) {
    Tensor t({grid * grid, d});
    const std::size_t quarter = std::max<std::size_t>(d / 4, 1);
    for (std::size_t r = 0; r < grid; ++r) {
        for (std::size_t c = 0; c < grid; ++c) {
            auto row = t.row(r * grid + c);
            for (std::size_t j = 0; j < d; ++j) {
                const std::size_t band = j % quarter;
                const double freq = 1.0 / std::pow(100.0, static_cast<double>(band) /
                                                              static_cast<double>(quarter));
                const double coord = (j < d / 2) ? static_cast<double>(r) : static_cast<double>(c);
                const bool use_sin = ((j / quarter) % 2) == 0;
                row[j] = amplitude * (use_sin ? std::sin(coord * freq) : std::cos(coord * freq));
            }
        }
    }
    return t;
}

}  // namespace

Embedding Embedding::create(ParamStore& ps, const Config& cfg, Rng& rng) {
    const std::size_t d = cfg.backbone.d;
    const std::size_t flat = cfg.image.patch * cfg.image.patch * 6;
    Embedding e;
    e.patch = cfg.image.patch;
    e.patch_weight = ps.add("embed.patch.weight",
                            rng.normal_tensor({flat, d}, 1.0 / std::sqrt(static_cast<double>(flat))),
                            false);
    e.patch_bias = ps.add("embed.patch.bias", Tensor({d}), false);
    e.template_pos = ps.add("embed.template_pos", sincos_table(cfg.template_grid(), d, 0.5), false);
    e.search_pos = ps.add("embed.search_pos", sincos_table(cfg.search_grid(), d, 0.5), false);
    e.type = ps.add("embed.type", rng.normal_tensor({4, d}, 0.1), false);
    e.text_proj = Linear::create(ps, "embed.text_proj", cfg.image.text_dim, d, true, rng);
    return e;
}

Tensor Embedding::embed_image(const ParamStore& ps, const Tensor& six_channel) const {
    return patch_embed(six_channel, patch, ps.value(patch_weight), ps.value(patch_bias));
}

Tensor Embedding::project_text(const ParamStore& ps, const Tensor& text) const {
    return text_proj.forward(ps, text.reshaped({1, text.size()}));
}

SequenceEmbeddings Embedding::tables(const ParamStore& ps) const {
    return SequenceEmbeddings{&ps.value(template_pos), &ps.value(search_pos), &ps.value(type)};
}

}  // namespace unimd
