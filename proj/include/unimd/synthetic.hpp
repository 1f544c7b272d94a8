#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "unimd/embedding.hpp"
#include "unimd/heads.hpp"

namespace unimd {

enum class Scenario : int { ScaleVariation = 0, Occlusion = 1, Distractors = 2, FastMotion = 3, Plain = 4 };
inline constexpr std::size_t kScenarioCount = 5;

std::string to_string(Scenario s);
/// Accepts the enum spelling (SCALE_VARIATION) or lower case (scale_variation).
Scenario scenario_from_string(const std::string& s);
const std::vector<Scenario>& all_scenarios();

struct SyntheticSequence {
    std::vector<MultiModalFrame> frames;
    std::vector<Box> gt_boxes;       // normalized frame coordinates
    std::vector<double> visibility;  // visible fraction of the target
    std::vector<bool> occluded;      // visibility < 0.2
    Scenario scenario = Scenario::Plain;
    Modality modality = Modality::RGB;
    std::uint64_t seed = 0;

    std::size_t length() const { return frames.size(); }
    std::string id() const;
};

struct GenerateOptions {
    std::size_t frame_size = 128;
    std::size_t text_dim = 8;
};

/// Pure function of its arguments. Pixels are whole numbers in [0,255].
/// Throws ValidationError for length < 2.
SyntheticSequence generate(Scenario scenario, Modality modality, std::size_t length,
                           std::uint64_t seed, const GenerateOptions& opt = {});

/// Square crop region in normalized frame coordinates.
struct CropWindow {
    double x0 = 0, y0 = 0, side = 1;

    /// Side = factor·√(w·h), centered on (cx, cy).
    static CropWindow around(const Box& box, double factor);
    Box to_crop(const Box& frame_box) const;
    Box to_frame(const Box& crop_box) const;
};

/// Bilinear resample of the window to out×out pixels. Samples outside the
/// image read the fill value.
Tensor crop_resize(const Tensor& image, const CropWindow& win, std::size_t out, double fill = 127.5);

/// Both channel groups of the frame, cropped.
MultiModalFrame crop_frame(const MultiModalFrame& frame, const CropWindow& win, std::size_t out);

/// One byte per channel value; generated pixels are whole numbers, so packing
/// is lossless.
struct PackedFrame {
    std::size_t height = 0, width = 0;
    std::vector<std::uint8_t> rgb, aux;
    std::optional<Tensor> text;
    Modality modality = Modality::RGB;

    static PackedFrame pack(const MultiModalFrame& frame);
    MultiModalFrame unpack() const;
    MultiModalFrame crop(const CropWindow& win, std::size_t out) const;
};

struct PackedSequence {
    std::vector<PackedFrame> frames;
    std::vector<Box> gt_boxes;
    Scenario scenario = Scenario::Plain;
    Modality modality = Modality::RGB;
    std::uint64_t seed = 0;

    static PackedSequence pack(const SyntheticSequence& seq);
};

}  // namespace unimd
