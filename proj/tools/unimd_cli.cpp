#include <filesystem>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "unimd/io.hpp"
#include "unimd/metrics.hpp"
#include "unimd/report.hpp"
#include "unimd/theory.hpp"
#include "unimd/trainer.hpp"

using namespace unimd;
namespace fs = std::filesystem;

namespace {

fs::path sibling(const fs::path& p, const std::string& suffix) {
    fs::path out = p;
    out.replace_extension();
    out += suffix;
    return out;
}

std::vector<double> parse_doubles(const std::string& list) {
    std::vector<double> out;
    std::istringstream in(list);
    std::string item;
    while (std::getline(in, item, ',')) {
        if (item.find_first_not_of(" \t") == std::string::npos) continue;
        std::size_t used = 0;
        const double v = std::stod(item, &used);
        if (item.find_first_not_of(" \t", used) != std::string::npos) {
            throw ConfigError("not a number: '" + item + "'");
        }
        out.push_back(v);
    }
    return out;
}

std::vector<TrackerRun> load_runs(const std::vector<std::string>& paths) {
    std::vector<fs::path> files;
    for (const std::string& p : paths) {
        if (fs::is_directory(p)) {
            for (const auto& e : fs::directory_iterator(p)) {
                if (e.path().extension() == ".json") files.push_back(e.path());
            }
        } else {
            files.emplace_back(p);
        }
    }
    std::sort(files.begin(), files.end());
    std::vector<TrackerRun> runs;
    for (const fs::path& f : files) runs.push_back(run_from_json(read_file(f)));
    return runs;
}

std::string summary(const Metrics& m) {
    std::ostringstream os;
    os << "AUC " << m.auc << "  mean IoU " << m.mean_iou << "  precision@20px " << m.precision << "\n";
    for (const auto& [sc, s] : m.per_scenario) {
        os << "  " << to_string(sc) << ": AUC " << s.auc << "  mean IoU " << s.mean_iou << "\n";
    }
    return os.str();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Memory-compressed multimodal tracker with dynamic state fusion"};
    app.require_subcommand(1);

    auto* gen = app.add_subcommand("gen-data", "Generate one synthetic sequence as PPM frames plus meta.json");
    std::string scenario = "plain", modality = "rgb", gen_out;
    std::size_t length = 100, frame_size = 128, text_dim = 8;
    std::uint64_t seed = 0;
    gen->add_option("--scenario", scenario, "scale_variation, occlusion, distractors, fast_motion or plain");
    gen->add_option("--modality", modality, "rgb, rgbd, rgbt, rgbe or rgbl");
    gen->add_option("--length", length, "frames")->check(CLI::Range(2, 100000));
    gen->add_option("--seed", seed);
    gen->add_option("--frame-size", frame_size)->check(CLI::Range(16, 4096));
    gen->add_option("--text-dim", text_dim);
    gen->add_option("--out", gen_out, "output directory")->required();

    auto* tr = app.add_subcommand("train", "Train the trainable partition and write a checkpoint");
    std::string config_path, ckpt_out;
    tr->add_option("--config", config_path, "key=value config file")->required()->check(CLI::ExistingFile);
    tr->add_option("--out-checkpoint", ckpt_out)->required();

    auto* tk = app.add_subcommand("track", "Track a sequence directory with a checkpoint");
    std::string ckpt_in, seq_dir, run_out;
    tk->add_option("--checkpoint", ckpt_in)->required()->check(CLI::ExistingFile);
    tk->add_option("--sequence", seq_dir)->required()->check(CLI::ExistingDirectory);
    tk->add_option("--out-run", run_out)->required();

    auto* ev = app.add_subcommand("eval", "Score run files; writes per-sequence CSV and a success plot");
    std::vector<std::string> run_paths;
    std::string eval_csv;
    double eval_frame = 128;
    ev->add_option("--runs", run_paths, "run files or directories of them")->required();
    ev->add_option("--out-csv", eval_csv)->required();
    ev->add_option("--frame-size", eval_frame, "pixels per frame side, for center precision");

    auto* ab = app.add_subcommand("ablate", "Train and evaluate every cell of a grid");
    std::string grid_path, ablate_csv;
    std::size_t jobs = 0;
    ab->add_option("--grid", grid_path)->required()->check(CLI::ExistingFile);
    ab->add_option("--out-csv", ablate_csv)->required();
    ab->add_option("--jobs", jobs, "tracking threads, 0 = all cores");

    auto* th = app.add_subcommand("verify-theory", "Check tail-mass, horizon, ratio-law and SSM decay bounds");
    std::string beta_grid = "-0.01,-0.05,-0.1,-0.5", report_out;
    std::size_t heads = 0, K = 50, L = 200, draws = 100;
    std::string etas = "0.1,0.01,0.001";
    th->add_option("--beta-grid", beta_grid, "comma-separated negative slopes");
    th->add_option("--heads", heads, "also check the ALiBi slopes of this many heads");
    th->add_option("--K", K);
    th->add_option("--L", L);
    th->add_option("--etas", etas);
    th->add_option("--ssm-draws", draws);
    th->add_option("--out-report", report_out)->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*gen) {
            GenerateOptions opt{frame_size, text_dim};
            const auto seq = generate(scenario_from_string(scenario), modality_from_string(modality), length, seed, opt);
            save_sequence(seq, gen_out);
            std::cout << "wrote " << seq.length() << " frames of " << seq.id() << " to " << gen_out << "\n";
        } else if (*tr) {
            const Config cfg = Config::load(config_path);
            Model model = Model::create(cfg);
            const auto data = training_set(cfg);
            TrainHooks hooks;
            hooks.on_step = [&](const StepLog& s) {
                if (cfg.train.log_every && (s.step + 1) % cfg.train.log_every == 0) {
                    std::cerr << "step " << s.step + 1 << "/" << cfg.train.steps << " loss " << s.loss.total
                              << " grad_norm " << s.grad_norm << "\n";
                }
            };
            const TrainResult r = train(model, data, hooks);
            save_checkpoint(model, ckpt_out);
            write_file(sibling(ckpt_out, ".loss.csv"), loss_csv(r));
            Series total{"total", {}, {}}, giou{"giou", {}, {}}, l1{"l1", {}, {}};
            for (const StepLog& s : r.steps) {
                for (Series* se : {&total, &giou, &l1}) se->x.push_back(static_cast<double>(s.step));
                total.y.push_back(s.loss.total);
                giou.y.push_back(s.loss.giou);
                l1.y.push_back(s.loss.l1);
            }
            write_file(sibling(ckpt_out, ".loss.svg"), line_chart_svg("training loss", "step", "loss", {total, giou, l1}));
            std::cout << "trainable " << r.trainable_values << " of " << r.total_values << " values ("
                      << 100.0 * static_cast<double>(r.trainable_values) / static_cast<double>(r.total_values)
                      << "%), frozen partition " << (r.frozen_hash_before == r.frozen_hash_after ? "unchanged" : "CHANGED")
                      << "\nwrote " << ckpt_out << "\n";
        } else if (*tk) {
            const Model model = load_checkpoint(ckpt_in);
            const TrackerRun run = track_sequence(model, load_sequence(seq_dir));
            write_file(run_out, run_to_json(run));
            double mean = 0.0;
            for (std::size_t t = 1; t < run.ious.size(); ++t) mean += run.ious[t];
            std::cout << run.sequence_id << ": mean IoU " << mean / static_cast<double>(run.ious.size() - 1) << "\n";
        } else if (*ev) {
            const Metrics m = evaluate(load_runs(run_paths), EvalOptions{eval_frame, 20.0});
            write_file(eval_csv, sequence_csv(m));
            Series success{"success", success_thresholds(), m.success_curve};
            write_file(sibling(eval_csv, ".success.svg"),
                       line_chart_svg("success plot, AUC " + std::to_string(m.auc), "IoU threshold", "success rate", {success}));
            std::cout << summary(m);
        } else if (*ab) {
            AblationHooks hooks;
            hooks.jobs = jobs;
            hooks.log = [](const std::string& line) { std::cerr << line << "\n"; };
            const auto rows = run_ablation(AblationGrid::parse(read_file(grid_path)), hooks);
            write_file(ablate_csv, unimd::ablation_csv(rows));
            std::cout << unimd::ablation_csv(rows);
        } else if (*th) {
            std::vector<double> betas = parse_doubles(beta_grid);
            for (std::size_t h = 1; h <= heads; ++h) betas.push_back(-alibi_slope(h));
            for (double b : betas) {
                if (!(b < 0.0)) throw ConfigError("slopes in --beta-grid must be negative");
            }
            const TheoryReport rep = verify_theory(betas, K, L, parse_doubles(etas), draws, 7);
            write_file(report_out, rep.text);
            write_file(sibling(report_out, ".csv"), rep.csv);
            std::cout << rep.text << (rep.all_passed ? "all checks passed\n" : "some checks FAILED\n");
            return rep.all_passed ? 0 : 1;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
