#include "unimd/report.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "unimd/trainer.hpp"

namespace unimd {

SuiteSpec SuiteSpec::from(const Config& cfg) {
    SuiteSpec s;
    s.seeds_per_scenario = cfg.eval.seeds_per_scenario;
    s.length = cfg.eval.length;
    s.seed = cfg.eval.seed;
    s.gen.frame_size = cfg.data.frame_size;
    s.gen.text_dim = cfg.image.text_dim;
    return s;
}

SyntheticSequence SuiteSpec::sequence(std::size_t index) const {
    if (index >= size()) throw ValidationError("suite index out of range");
    const Scenario sc = scenarios[index / seeds_per_scenario];
    const std::size_t k = index % seeds_per_scenario;
    return generate(sc, static_cast<Modality>(k % kModalityCount), length, seed + k, gen);
}

std::vector<TrackerRun> run_suite(const Model& model, const SuiteSpec& suite, std::size_t jobs) {
    const std::size_t n = suite.size();
    std::vector<TrackerRun> runs(n);
    if (jobs == 0) jobs = std::max(1u, std::thread::hardware_concurrency());
    jobs = std::min(jobs, n);
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    const auto worker = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                runs[i] = track_sequence(model, suite.sequence(i));
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
            }
        }
    };
    if (jobs <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
        for (std::thread& t : pool) t.join();
    }
    if (failure) std::rethrow_exception(failure);
    return runs;
}

AblationCell AblationCell::of(const Config& cfg) {
    AblationCell c;
    c.mcp = cfg.mcp.enabled;
    c.dsf = cfg.dsf.enabled;
    c.n_m = cfg.mcp.n_tokens;
    c.bank_l = cfg.mcp.bank_l;
    c.policy = cfg.mcp.policy;
    c.bias = cfg.mcp.bias;
    c.source = cfg.dsf.source;
    return c;
}

void AblationCell::apply(Config& cfg) const {
    cfg.mcp.enabled = mcp;
    cfg.dsf.enabled = dsf;
    cfg.mcp.n_tokens = n_m;
    cfg.mcp.bank_l = bank_l;
    cfg.mcp.policy = policy;
    cfg.mcp.bias = bias;
    cfg.dsf.source = source;
}

namespace {

const std::vector<std::pair<std::string, std::string>>& axis_keys() {
    static const std::vector<std::pair<std::string, std::string>> axes{
        {"mcp", "mcp.enabled"}, {"dsf", "dsf.enabled"},   {"n_m", "mcp.n_tokens"},
        {"bank_l", "mcp.bank_l"}, {"policy", "mcp.policy"}, {"bias", "mcp.bias"},
        {"dsf_source", "dsf.source"}};
    return axes;
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(s);
    while (std::getline(in, cur, sep)) {
        const auto b = cur.find_first_not_of(" \t");
        const auto e = cur.find_last_not_of(" \t\r");
        if (b != std::string::npos) out.push_back(cur.substr(b, e - b + 1));
    }
    return out;
}

}  // namespace

AblationGrid AblationGrid::parse(const std::string& text) {
    AblationGrid g;
    std::map<std::string, std::vector<std::string>> axes;
    std::istringstream in(text);
    std::string line;
    std::string base_text;
    while (std::getline(in, line)) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const auto eq = line.find('=');
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        if (eq == std::string::npos) throw ConfigError("grid: expected key=value, got '" + line + "'");
        const auto parts = split(line.substr(0, eq), ' ');
        const std::string key = parts.empty() ? "" : parts[0];
        const std::string value = line.substr(eq + 1);
        if (key.rfind("grid.", 0) == 0) {
            const std::string axis = key.substr(5);
            const bool known = std::any_of(axis_keys().begin(), axis_keys().end(),
                                           [&](const auto& a) { return a.first == axis; });
            if (!known) throw ConfigError("grid: unknown axis '" + axis + "'");
            axes[axis] = split(value, ',');
            if (axes[axis].empty()) throw ConfigError("grid: axis '" + axis + "' has no values");
        } else if (key == "seeds") {
            g.seeds.clear();
            for (const std::string& v : split(value, ',')) g.seeds.push_back(std::stoull(v));
            if (g.seeds.empty()) throw ConfigError("grid: seeds list is empty");
        } else {
            base_text += line + "\n";
        }
    }
    g.base = Config::parse(base_text);

    std::vector<Config> cells{g.base};
    for (const auto& [axis, key] : axis_keys()) {
        auto it = axes.find(axis);
        if (it == axes.end()) continue;
        std::vector<Config> expanded;
        for (const Config& c : cells) {
            for (const std::string& v : it->second) {
                Config e = c;
                e.set(key, v);
                expanded.push_back(e);
            }
        }
        cells = std::move(expanded);
    }
    for (const Config& c : cells) g.cells.push_back(AblationCell::of(c));
    return g;
}

std::vector<AblationRow> run_ablation(const AblationGrid& grid, const AblationHooks& hooks) {
    const SuiteSpec suite = SuiteSpec::from(grid.base);
    std::vector<AblationRow> rows;
    for (std::size_t id = 0; id < grid.cells.size(); ++id) {
        AblationRow row;
        row.cell_id = id;
        row.cell = grid.cells[id];
        for (std::uint64_t seed : grid.seeds) {
            Config cfg = grid.base;
            row.cell.apply(cfg);
            cfg.seed = seed;
            cfg.validate();
            Model model = Model::create(cfg);
            train(model, training_set(cfg));
            const Metrics m = evaluate(run_suite(model, suite, hooks.jobs),
                                       EvalOptions{static_cast<double>(cfg.data.frame_size), 20.0});
            if (hooks.on_model) hooks.on_model(id, seed, model);
            if (hooks.log) {
                std::ostringstream os;
                os << "cell " << id << " seed " << seed << ": auc " << m.auc << " mean_iou " << m.mean_iou;
                hooks.log(os.str());
            }
            row.mean_iou += m.mean_iou / grid.seeds.size();
            row.auc += m.auc / grid.seeds.size();
            row.precision += m.precision / grid.seeds.size();
            row.per_seed.push_back(m);
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
    std::ostringstream os;
    os.precision(10);
    os << "cell_id,mcp,dsf,n_m,bank_l,policy,bias,dsf_source,mean_iou,auc,precision\n";
    for (const AblationRow& r : rows) {
        const AblationCell& c = r.cell;
        os << r.cell_id << ',' << (c.mcp ? "on" : "off") << ',' << (c.dsf ? "on" : "off") << ','
           << c.n_m << ',' << c.bank_l << ',' << to_string(c.policy) << ',' << to_string(c.bias) << ','
           << to_string(c.source) << ',' << r.mean_iou << ',' << r.auc << ',' << r.precision << '\n';
    }
    return os.str();
}

namespace {

std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '&': out += "&amp;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

}  // namespace

std::string line_chart_svg(const std::string& title, const std::string& x_label,
                           const std::string& y_label, const std::vector<Series>& series) {
    const double W = 640, H = 400, left = 60, right = 150, top = 40, bottom = 50;
    double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
    for (const Series& s : series) {
        for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
            x0 = std::min(x0, s.x[i]);
            x1 = std::max(x1, s.x[i]);
            y0 = std::min(y0, s.y[i]);
            y1 = std::max(y1, s.y[i]);
        }
    }
    if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    if (x1 == x0) x1 = x0 + 1;
    if (y1 == y0) y1 = y0 + 1;
    const auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * (W - left - right); };
    const auto py = [&](double y) { return H - bottom - (y - y0) / (y1 - y0) * (H - top - bottom); };
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"};

    std::ostringstream os;
    os.precision(6);
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n"
       << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
       << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">"
       << escape(title) << "</text>\n"
       << "<line x1=\"" << left << "\" y1=\"" << H - bottom << "\" x2=\"" << W - right << "\" y2=\"" << H - bottom
       << "\" stroke=\"black\"/>\n"
       << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << H - bottom
       << "\" stroke=\"black\"/>\n";
    for (int k = 0; k <= 4; ++k) {
        const double xv = x0 + (x1 - x0) * k / 4.0, yv = y0 + (y1 - y0) * k / 4.0;
        os << "<text x=\"" << px(xv) << "\" y=\"" << H - bottom + 16
           << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << xv << "</text>\n"
           << "<text x=\"" << left - 6 << "\" y=\"" << py(yv) + 4
           << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << yv << "</text>\n";
    }
    os << "<text x=\"" << (left + W - right) / 2 << "\" y=\"" << H - 12
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << escape(x_label) << "</text>\n"
       << "<text x=\"16\" y=\"" << (top + H - bottom) / 2 << "\" transform=\"rotate(-90 16 "
       << (top + H - bottom) / 2 << ")\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">"
       << escape(y_label) << "</text>\n";
    for (std::size_t si = 0; si < series.size(); ++si) {
        const Series& s = series[si];
        const char* color = colors[si % 7];
        os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
            os << px(s.x[i]) << ',' << py(s.y[i]) << ' ';
        }
        os << "\"/>\n<text x=\"" << W - right + 10 << "\" y=\"" << top + 16 * (si + 1) << "\" fill=\"" << color
           << "\" font-family=\"sans-serif\" font-size=\"12\">" << escape(s.name) << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

}  // namespace unimd
