#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "unimd/metrics.hpp"
#include "unimd/model.hpp"
#include "unimd/synthetic.hpp"
#include "unimd/tracker.hpp"

namespace unimd {

/// Held-out evaluation sequences, generated on demand: every scenario ×
/// seeds_per_scenario, with modality cycling over the seed index.
struct SuiteSpec {
    std::vector<Scenario> scenarios = all_scenarios();
    std::size_t seeds_per_scenario = 10;
    std::size_t length = 100;
    std::uint64_t seed = 100000;
    GenerateOptions gen;

    static SuiteSpec from(const Config& cfg);
    std::size_t size() const { return scenarios.size() * seeds_per_scenario; }
    SyntheticSequence sequence(std::size_t index) const;
};

/// Tracks every suite sequence on `jobs` worker threads (0 = hardware
/// concurrency). Results are in suite order regardless of scheduling.
std::vector<TrackerRun> run_suite(const Model& model, const SuiteSpec& suite, std::size_t jobs = 0);

struct AblationCell {
    bool mcp = true;
    bool dsf = true;
    std::size_t n_m = 16;
    std::size_t bank_l = 50;
    MemoryPolicy policy = MemoryPolicy::Uniform;
    PositionBias bias = PositionBias::Alibi;
    DsfSource source = DsfSource::FinalSearch;

    static AblationCell of(const Config& cfg);
    void apply(Config& cfg) const;
};

/// Text grid: `key=value` lines set the base config, `grid.<axis>=v1,v2,...`
/// lines define axes (mcp, dsf, n_m, bank_l, policy, bias, dsf_source) and
/// `seeds=a,b,...` lists training seeds. Cells are the cartesian product in
/// axis order mcp, dsf, n_m, bank_l, policy, bias, dsf_source.
struct AblationGrid {
    Config base;
    std::vector<AblationCell> cells;
    std::vector<std::uint64_t> seeds{1};

    static AblationGrid parse(const std::string& text);
};

struct AblationRow {
    std::size_t cell_id = 0;
    AblationCell cell;
    double mean_iou = 0, auc = 0, precision = 0;  // averaged over seeds
    std::vector<Metrics> per_seed;
};

struct AblationHooks {
    std::function<void(const std::string&)> log;
    std::size_t jobs = 0;
    /// Called with each trained model before it is discarded.
    std::function<void(std::size_t cell_id, std::uint64_t seed, const Model&)> on_model;
};

/// Trains each cell once per seed and evaluates on the suite from the base config.
std::vector<AblationRow> run_ablation(const AblationGrid& grid, const AblationHooks& hooks = {});

/// cell_id,mcp,dsf,n_m,bank_l,policy,bias,dsf_source,mean_iou,auc,precision
std::string ablation_csv(const std::vector<AblationRow>& rows);

struct Series {
    std::string name;
    std::vector<double> x, y;
};

/// Static SVG line chart.
std::string line_chart_svg(const std::string& title, const std::string& x_label,
                           const std::string& y_label, const std::vector<Series>& series);

}  // namespace unimd
