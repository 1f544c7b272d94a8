#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sstream>

#include "support.hpp"
#include "unimd/config.hpp"
#include "unimd/embedding.hpp"

using namespace unimd;

TEST_CASE("six-channel input duplicates RGB when there is no auxiliary image") {
    Rng rng(1);
    MultiModalFrame f;
    f.rgb = rng.uniform_tensor({4, 4, 3}, 0.0, 255.0);
    const Tensor six = build_six_channel(f);
    CHECK(six.shape() == std::vector<std::size_t>{4, 4, 6});
    for (std::size_t i = 0; i < 16; ++i) {
        for (std::size_t c = 0; c < 3; ++c) {
            CHECK(six[i * 6 + c] == f.rgb[i * 3 + c]);
            CHECK(six[i * 6 + 3 + c] == f.rgb[i * 3 + c]);
        }
    }
    f.modality = Modality::RGBT;
    CHECK_THROWS_AS(build_six_channel(f), ValidationError);
    f.aux = Tensor({4, 4, 3}, 7.0);
    CHECK(build_six_channel(f)[5] == 7.0);
    f.aux = Tensor({4, 4, 3}, 300.0);
    CHECK_THROWS_AS(build_six_channel(f), ValidationError);
}

TEST_CASE("patch embedding layout and errors") {
    // 2x2 image, 1 channel, patch 1: tokens are the pixels times the weight
    const Tensor img({2, 2, 1}, std::vector<double>{1, 2, 3, 4});
    const Tensor w = Tensor::matrix(1, 2, {1.0, -1.0});
    const Tensor b({2}, std::vector<double>{0.5, 0.0});
    const Tensor t = patch_embed(img, 1, w, b);
    CHECK(t.values() == std::vector<double>{1.5, -1, 2.5, -2, 3.5, -3, 4.5, -4});

    // patch 2 flattens (row, column, channel)
    const Tensor w4 = Tensor::matrix(4, 1, {1, 10, 100, 1000});
    CHECK(patch_embed(img, 2, w4, Tensor({1}))[0] == 4321.0);
    CHECK_THROWS_AS(patch_embed(Tensor({3, 2, 1}), 2, w4, Tensor({1})), DimensionError);
    CHECK_THROWS_AS(patch_embed(img, 2, w, b), DimensionError);
}

TEST_CASE("sequence assembly order, segment bookkeeping and embeddings") {
    Rng rng(2);
    const std::size_t d = 4;
    const Tensor memory = rng.normal_tensor({2, d}, 1.0);
    const std::vector<Tensor> templates{rng.normal_tensor({3, d}, 1.0), rng.normal_tensor({3, d}, 1.0)};
    const Tensor search = rng.normal_tensor({4, d}, 1.0);
    const Tensor text = rng.normal_tensor({1, d}, 1.0);
    const Tensor tpos = rng.normal_tensor({3, d}, 1.0), spos = rng.normal_tensor({4, d}, 1.0);
    const Tensor type = rng.normal_tensor({4, d}, 1.0);
    const TokenSequence seq = assemble_sequence(memory, templates, search, text, {&tpos, &spos, &type});
    CHECK(seq.tokens.rows() == 2 + 6 + 4 + 1);
    CHECK(seq.offset(Segment::Template) == 2);
    CHECK(seq.offset(Segment::Search) == 8);
    CHECK(seq.count(Segment::Search) == 4);
    CHECK(seq.count(Segment::Text) == 1);
    CHECK(seq.tokens(0, 1) == doctest::Approx(memory(0, 1) + type(0, 1)).epsilon(1e-15));
    CHECK(seq.tokens(5, 2) == doctest::Approx(templates[1](0, 2) + tpos(0, 2) + type(1, 2)).epsilon(1e-15));
    CHECK(seq.tokens(9, 3) == doctest::Approx(search(1, 3) + spos(1, 3) + type(2, 3)).epsilon(1e-15));
    CHECK(seq.tokens(12, 0) == doctest::Approx(text(0, 0) + type(3, 0)).epsilon(1e-15));

    const TokenSequence bare = assemble_sequence(Tensor(), templates, search, std::nullopt, {});
    CHECK(bare.tokens.rows() == 10);
    CHECK(bare.count(Segment::Memory) == 0);
    CHECK_THROWS_AS(assemble_sequence(rng.normal_tensor({2, 5}, 1.0), templates, search, std::nullopt, {}),
                    ValidationError);
}

TEST_CASE("embedding partitions") {
    Config cfg;
    Rng rng(3);
    ParamStore ps;
    const Embedding e = Embedding::create(ps, cfg, rng);
    CHECK_FALSE(ps.trainable(e.patch_weight));
    CHECK_FALSE(ps.trainable(e.search_pos));
    CHECK(ps.trainable(e.text_proj.weight));
    MultiModalFrame f;
    f.rgb = rng.uniform_tensor({cfg.image.search_size, cfg.image.search_size, 3}, 0, 255);
    const Tensor tokens = e.embed_image(ps, normalize_pixels(build_six_channel(f)));
    CHECK(tokens.rows() == cfg.n_search());
    CHECK(tokens.cols() == cfg.backbone.d);
}

TEST_CASE("config text round trip and rejection of unknown keys") {
    Config cfg;
    cfg.set("mcp.n_tokens", "8");
    cfg.set("mcp.policy", "fifo");
    cfg.set("train.lr", "0.0005");
    cfg.set("dsf.source", "stage_input");
    const Config back = Config::parse(cfg.to_text());
    CHECK(back.to_text() == cfg.to_text());
    CHECK(back.mcp.n_tokens == 8);
    CHECK(back.mcp.policy == MemoryPolicy::FifoEveryK);
    CHECK(back.train.lr == 0.0005);
    CHECK(back.dsf.source == DsfSource::StageInput);
    CHECK_THROWS_AS(cfg.set("mcp.unknown", "1"), ConfigError);
    CHECK_THROWS_AS(Config::parse("seed=1\nbogus.key=2\n"), ConfigError);
    CHECK_THROWS_AS(cfg.set("mcp.n_tokens", "-3"), ConfigError);
    const Config c = Config::parse("# comment\nseed = 9\n\nmcp.bank_l=20\n");
    CHECK(c.seed == 9);
    CHECK(c.mcp.bank_l == 20);
    Config bad;
    bad.backbone.d = 30;
    bad.backbone.heads = 4;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}
