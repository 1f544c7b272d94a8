#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace unimd {

enum class MemoryPolicy { Uniform, FifoEveryK };
enum class PositionBias { Alibi, None, Absolute };
enum class AlibiDistance { BankPosition, FrameIndex };
enum class DsfSource { FinalSearch, WholeSequence, StageInput };

struct ImageConfig {
    std::size_t search_size = 64;
    std::size_t template_size = 32;
    std::size_t patch = 8;
    std::size_t text_dim = 8;
    double search_factor = 4.0;
    double template_factor = 2.0;
};

struct BackboneConfigValues {
    std::size_t d = 64;
    std::size_t depth = 8;
    std::size_t heads = 4;
    std::size_t ffn_mult = 4;
    std::size_t dsf_span = 0;  // trailing layers split into DSF stages; 0 = all
};

struct McpConfig {
    bool enabled = true;
    std::size_t n_tokens = 16;
    std::size_t bank_l = 50;
    MemoryPolicy policy = MemoryPolicy::Uniform;
    std::size_t fifo_k = 5;
    PositionBias bias = PositionBias::Alibi;
    AlibiDistance distance = AlibiDistance::BankPosition;
};

struct DsfConfig {
    bool enabled = true;
    std::size_t count = 4;
    std::size_t inner_mult = 2;
    std::size_t state_dim = 16;
    std::size_t conv_width = 4;
    std::size_t dt_rank = 0;  // 0 = ceil(d/16)
    DsfSource source = DsfSource::FinalSearch;
};

struct LossWeights {
    double giou = 2.0;
    double l1 = 5.0;
    double focal = 1.0;
    double ce = 1.0;
};

struct TrainConfig {
    double lr = 1e-3;
    std::size_t steps = 2000;
    double weight_decay = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double grad_clip = 1.0;  // global norm; 0 disables
    std::size_t clip_frames = 7;
    std::size_t templates = 2;
    bool memory_backprop = false;
    std::size_t sequences = 40;
    std::size_t seq_length = 60;
    double jitter_center = 0.15;
    double jitter_scale = 0.15;
    std::size_t log_every = 50;
};

struct DataConfig {
    std::size_t frame_size = 128;
};

struct EvalConfig {
    std::size_t seeds_per_scenario = 10;
    std::size_t length = 100;
    std::uint64_t seed = 100000;
};

/// Flat key=value configuration. Every key is namespaced (`mcp.n_tokens`);
/// unknown keys are rejected.
struct Config {
    std::uint64_t seed = 1;
    ImageConfig image;
    BackboneConfigValues backbone;
    McpConfig mcp;
    DsfConfig dsf;
    LossWeights loss;
    TrainConfig train;
    DataConfig data;
    EvalConfig eval;

    std::size_t search_grid() const { return image.search_size / image.patch; }
    std::size_t template_grid() const { return image.template_size / image.patch; }
    std::size_t n_search() const { return search_grid() * search_grid(); }
    std::size_t n_template() const { return template_grid() * template_grid(); }
    std::size_t n_memory() const { return mcp.enabled ? mcp.n_tokens : 0; }
    std::size_t dsf_inner() const { return dsf.inner_mult * backbone.d; }
    std::size_t dsf_dt_rank() const;

    /// Throws ConfigError on inconsistent values.
    void validate() const;

    void set(const std::string& key, const std::string& value);
    std::string get(const std::string& key) const;
    static const std::vector<std::string>& keys();

    /// Canonical serialization: every key in fixed order, one per line.
    std::string to_text() const;
    static Config parse(const std::string& text);
    static Config load(const std::filesystem::path& path);
};

std::string to_string(MemoryPolicy p);
std::string to_string(PositionBias b);
std::string to_string(DsfSource s);

}  // namespace unimd
