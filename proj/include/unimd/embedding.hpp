#pragma once

#include <optional>
#include <string>
#include <vector>

#include "unimd/config.hpp"
#include "unimd/nn.hpp"
#include "unimd/numerics.hpp"

namespace unimd {

enum class Modality : int { RGB = 0, RGBD = 1, RGBT = 2, RGBE = 3, RGBL = 4 };
inline constexpr std::size_t kModalityCount = 5;

std::string to_string(Modality m);
Modality modality_from_string(const std::string& s);
/// True for the modalities that carry a depth/thermal/event image.
bool has_aux(Modality m);

struct MultiModalFrame {
    Tensor rgb;                 // [H×W×3], values in [0,255]
    std::optional<Tensor> aux;  // [H×W×3], present iff modality is RGBD/RGBT/RGBE
    Modality modality = Modality::RGB;
    std::optional<Tensor> text; // [text_dim] description stub (RGBL)

    void validate() const;
};

/// Channels 0..2 are RGB; channels 3..5 are the auxiliary image, or a copy of
/// RGB when the frame has none.
Tensor build_six_channel(const MultiModalFrame& frame);

/// Maps [0,255] pixels to roughly zero-mean unit-range inputs.
Tensor normalize_pixels(const Tensor& image);

/// Non-overlapping P×P patches flattened in (row, col, channel) order and
/// projected: weight is [P·P·C × d], bias is [d].
Tensor patch_embed(const Tensor& image, std::size_t patch, const Tensor& weight,
                   const Tensor& bias);

enum class Segment : int { Memory = 0, Template = 1, Search = 2, Text = 3 };

struct TokenSequence {
    Tensor tokens;  // [N×d]
    std::vector<Segment> segments;
    int frame_index = 0;

    std::size_t count(Segment s) const;
    /// Row offset of the first token with the given tag (N when absent).
    std::size_t offset(Segment s) const;
};

/// Additive tables used when concatenating segments.
struct SequenceEmbeddings {
    const Tensor* template_pos = nullptr;  // [N_T×d]
    const Tensor* search_pos = nullptr;    // [N_S×d]
    const Tensor* type = nullptr;          // [4×d], rows indexed by Segment
};

/// [memory | template_1 | ... | search | text?]. Positional tables are added to
/// template and search tokens; every token gets its segment's type vector.
TokenSequence assemble_sequence(const Tensor& memory, const std::vector<Tensor>& templates,
                                const Tensor& search, const std::optional<Tensor>& text,
                                const SequenceEmbeddings& emb, int frame_index = 0);

/// Frozen patch/position/type tables plus the trainable text projection.
struct Embedding {
    ParamId patch_weight = 0;
    ParamId patch_bias = 0;
    ParamId template_pos = 0;
    ParamId search_pos = 0;
    ParamId type = 0;
    Linear text_proj;
    std::size_t patch = 8;

    static Embedding create(ParamStore& ps, const Config& cfg, Rng& rng);

    /// Normalized 6-channel image to patch tokens.
    Tensor embed_image(const ParamStore& ps, const Tensor& six_channel) const;
    Tensor project_text(const ParamStore& ps, const Tensor& text) const;
    SequenceEmbeddings tables(const ParamStore& ps) const;
};

}  // namespace unimd
