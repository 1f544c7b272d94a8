#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "unimd/io.hpp"
#include "unimd/synthetic.hpp"

using namespace unimd;

namespace {

bool same_pixels(const Tensor& a, const Tensor& b) { return a.shape() == b.shape() && a.values() == b.values(); }

std::filesystem::path scratch(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("unimd_test_" + name);
    std::filesystem::remove_all(p);
    return p;
}

}  // namespace

TEST_CASE("scenario names round trip") {
    for (Scenario s : all_scenarios()) CHECK(scenario_from_string(to_string(s)) == s);
    CHECK(scenario_from_string("fast-motion") == Scenario::FastMotion);
    CHECK(to_string(Scenario::ScaleVariation) == "SCALE_VARIATION");
    CHECK_THROWS_AS(scenario_from_string("sideways"), ConfigError);
}

TEST_CASE("generator is a pure function of its arguments") {
    const auto a = generate(Scenario::Distractors, Modality::RGBT, 12, 77);
    const auto b = generate(Scenario::Distractors, Modality::RGBT, 12, 77);
    const auto c = generate(Scenario::Distractors, Modality::RGBT, 12, 78);
    REQUIRE(a.length() == 12);
    bool differs = false;
    for (std::size_t t = 0; t < 12; ++t) {
        CHECK(same_pixels(a.frames[t].rgb, b.frames[t].rgb));
        CHECK(same_pixels(*a.frames[t].aux, *b.frames[t].aux));
        CHECK(a.gt_boxes[t].cx == b.gt_boxes[t].cx);
        differs = differs || !same_pixels(a.frames[t].rgb, c.frames[t].rgb);
    }
    CHECK(differs);
    CHECK(a.id() == "DISTRACTORS-RGBT-77");
}

TEST_CASE("modality changes only the auxiliary channels") {
    const auto rgb = generate(Scenario::Plain, Modality::RGB, 5, 3);
    const auto rgbd = generate(Scenario::Plain, Modality::RGBD, 5, 3);
    const auto rgbl = generate(Scenario::Plain, Modality::RGBL, 5, 3, {64, 8});
    for (std::size_t t = 0; t < 5; ++t) {
        CHECK(same_pixels(rgb.frames[t].rgb, rgbd.frames[t].rgb));
        CHECK_FALSE(rgb.frames[t].aux);
        CHECK(rgbd.frames[t].aux);
        REQUIRE(rgbl.frames[t].text);
        CHECK(rgbl.frames[t].text->size() == 8);
    }
    CHECK(rgbl.frames[0].rgb.shape() == std::vector<std::size_t>{64, 64, 3});
}

TEST_CASE("pixels are whole numbers in range and boxes stay inside the frame") {
    bool whole = true;
    for (Scenario s : all_scenarios()) {
        const auto seq = generate(s, Modality::RGBE, 30, 11);
        for (std::size_t t = 0; t < seq.length(); ++t) {
            for (const Tensor* img : {&seq.frames[t].rgb, &*seq.frames[t].aux}) {
                for (double v : img->values()) whole = whole && v == std::floor(v) && v >= 0.0 && v <= 255.0;
            }
            const Box& b = seq.gt_boxes[t];
            CHECK(b.w > 0.0);
            CHECK(b.h > 0.0);
            CHECK(b.x1() >= 0.0);
            CHECK(b.y1() >= 0.0);
            CHECK(b.x2() <= 1.0);
            CHECK(b.y2() <= 1.0);
        }
    }
    CHECK(whole);
}

TEST_CASE("scale variation spans at least a 4x area change") {
    const auto seq = generate(Scenario::ScaleVariation, Modality::RGB, 100, 5);
    double lo = INFINITY, hi = 0.0;
    for (const Box& b : seq.gt_boxes) {
        lo = std::min(lo, b.w * b.h);
        hi = std::max(hi, b.w * b.h);
    }
    CHECK(hi / lo >= 4.0);
}

TEST_CASE("occlusion sequences contain occluded frames, plain ones none") {
    const auto occ = generate(Scenario::Occlusion, Modality::RGB, 100, 9);
    const auto plain = generate(Scenario::Plain, Modality::RGB, 100, 9);
    const auto n_occ = std::count(occ.occluded.begin(), occ.occluded.end(), true);
    CHECK(n_occ > 0);
    CHECK(std::count(plain.occluded.begin(), plain.occluded.end(), true) == 0);
    for (std::size_t t = 0; t < occ.length(); ++t) CHECK(occ.occluded[t] == (occ.visibility[t] < 0.2));
    CHECK_FALSE(occ.occluded[0]);
}

TEST_CASE("fast motion moves further per frame than plain") {
    const auto step = [](const SyntheticSequence& s) {
        double total = 0.0;
        for (std::size_t t = 1; t < s.length(); ++t) {
            total += std::hypot(s.gt_boxes[t].cx - s.gt_boxes[t - 1].cx, s.gt_boxes[t].cy - s.gt_boxes[t - 1].cy);
        }
        return total / static_cast<double>(s.length() - 1);
    };
    double fast = 0.0, plain = 0.0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        fast += step(generate(Scenario::FastMotion, Modality::RGB, 40, seed));
        plain += step(generate(Scenario::Plain, Modality::RGB, 40, seed));
    }
    CHECK(fast > 2.0 * plain);
}

TEST_CASE("generator rejects sequences shorter than two frames") {
    CHECK_THROWS_AS(generate(Scenario::Plain, Modality::RGB, 1, 0), ValidationError);
}

TEST_CASE("crop window maps boxes both ways") {
    const Box box{0.3, 0.6, 0.1, 0.2};
    const CropWindow win = CropWindow::around(box, 4.0);
    CHECK(win.side == doctest::Approx(4.0 * std::sqrt(0.02)).epsilon(1e-15));
    const Box in_crop = win.to_crop(box);
    CHECK(in_crop.cx == doctest::Approx(0.5));
    CHECK(in_crop.cy == doctest::Approx(0.5));
    CHECK(in_crop.w == doctest::Approx(0.1 / win.side));
    const Box back = win.to_frame(in_crop);
    CHECK(back.cx == doctest::Approx(box.cx).epsilon(1e-14));
    CHECK(back.cy == doctest::Approx(box.cy).epsilon(1e-14));
    CHECK(back.w == doctest::Approx(box.w).epsilon(1e-14));
    CHECK(back.h == doctest::Approx(box.h).epsilon(1e-14));
}

TEST_CASE("crop_resize reproduces pixel centers and fills outside") {
    Tensor img({4, 4, 3});
    for (std::size_t y = 0; y < 4; ++y) {
        for (std::size_t x = 0; x < 4; ++x) {
            for (std::size_t c = 0; c < 3; ++c) img[(y * 4 + x) * 3 + c] = static_cast<double>(10 * y + x + c);
        }
    }
    const Tensor same = crop_resize(img, CropWindow{0, 0, 1}, 4);
    CHECK(same.values() == img.values());
    const Tensor outside = crop_resize(img, CropWindow{2, 2, 1}, 3, 42.0);
    for (double v : outside.values()) CHECK(v == 42.0);
}

TEST_CASE("packing is lossless") {
    const auto seq = generate(Scenario::Occlusion, Modality::RGBD, 6, 4);
    const auto packed = PackedSequence::pack(seq);
    REQUIRE(packed.frames.size() == 6);
    for (std::size_t t = 0; t < 6; ++t) {
        const MultiModalFrame f = packed.frames[t].unpack();
        CHECK(same_pixels(f.rgb, seq.frames[t].rgb));
        CHECK(same_pixels(*f.aux, *seq.frames[t].aux));
        const CropWindow win = CropWindow::around(seq.gt_boxes[t], 3.0);
        const MultiModalFrame a = packed.frames[t].crop(win, 24);
        const MultiModalFrame b = crop_frame(seq.frames[t], win, 24);
        CHECK(same_pixels(a.rgb, b.rgb));
        CHECK(same_pixels(*a.aux, *b.aux));
    }
}

TEST_CASE("sequence directory round trip") {
    const auto dir = scratch("seq");
    const auto seq = generate(Scenario::FastMotion, Modality::RGBL, 4, 21, {32, 8});
    save_sequence(seq, dir);
    CHECK(std::filesystem::exists(dir / "meta.json"));
    CHECK(std::filesystem::exists(dir / "frame_0003.ppm"));
    const auto back = load_sequence(dir);
    REQUIRE(back.length() == 4);
    CHECK(back.id() == seq.id());
    for (std::size_t t = 0; t < 4; ++t) {
        CHECK(same_pixels(back.frames[t].rgb, seq.frames[t].rgb));
        CHECK(back.frames[t].text->values() == seq.frames[t].text->values());
        CHECK(back.gt_boxes[t].cx == seq.gt_boxes[t].cx);
        CHECK(back.occluded[t] == seq.occluded[t]);
    }
    std::filesystem::remove(dir / "frame_0002.ppm");
    CHECK_THROWS_AS(load_sequence(dir), ValidationError);
    std::filesystem::remove_all(dir);
}
