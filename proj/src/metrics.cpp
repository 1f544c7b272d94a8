#include "unimd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace unimd {

const std::vector<double>& success_thresholds() {
    static const std::vector<double> t = [] {
        std::vector<double> v;
        for (int i = 0; i <= 20; ++i) v.push_back(i / 20.0);
        return v;
    }();
    return t;
}

namespace {

SequenceMetrics score_run(const TrackerRun& run, const EvalOptions& opt,
                          std::vector<double>& precision_curve) {
    if (run.boxes.size() != run.gt.size() || run.boxes.size() < 2) {
        throw ValidationError("evaluate: run " + run.sequence_id + " needs matching boxes for at least two frames");
    }
    SequenceMetrics s;
    s.sequence_id = run.sequence_id;
    s.scenario = run.scenario;
    const auto& th = success_thresholds();
    s.success.assign(th.size(), 0.0);
    precision_curve.assign(51, 0.0);
    const std::size_t n = run.boxes.size() - 1;
    for (std::size_t t = 1; t < run.boxes.size(); ++t) {
        const double v = iou(run.boxes[t], run.gt[t]);
        s.mean_iou += v;
        for (std::size_t k = 0; k < th.size(); ++k) {
            if (v >= th[k]) s.success[k] += 1.0;
        }
        const double err = std::hypot(run.boxes[t].cx - run.gt[t].cx, run.boxes[t].cy - run.gt[t].cy) *
                           opt.frame_size;
        if (err <= opt.precision_px) s.precision += 1.0;
        for (std::size_t px = 0; px < precision_curve.size(); ++px) {
            if (err <= static_cast<double>(px)) precision_curve[px] += 1.0;
        }
    }
    s.mean_iou /= n;
    s.precision /= n;
    for (double& v : s.success) v /= n;
    for (double& v : precision_curve) v /= n;
    for (double v : s.success) s.auc += v;
    s.auc /= static_cast<double>(th.size());
    return s;
}

void accumulate(SequenceMetrics& into, const SequenceMetrics& s) {
    into.mean_iou += s.mean_iou;
    into.auc += s.auc;
    into.precision += s.precision;
    if (into.success.empty()) into.success.assign(s.success.size(), 0.0);
    for (std::size_t k = 0; k < s.success.size(); ++k) into.success[k] += s.success[k];
}

void scale(SequenceMetrics& m, double f) {
    m.mean_iou *= f;
    m.auc *= f;
    m.precision *= f;
    for (double& v : m.success) v *= f;
}

}  // namespace

Metrics evaluate(const std::vector<TrackerRun>& runs, const EvalOptions& opt) {
    if (runs.empty()) throw ValidationError("evaluate: no runs");
    // canonical order, so the averages do not depend on how runs were listed
    std::vector<const TrackerRun*> order;
    for (const TrackerRun& r : runs) order.push_back(&r);
    std::stable_sort(order.begin(), order.end(),
                     [](const TrackerRun* a, const TrackerRun* b) { return a->sequence_id < b->sequence_id; });
    Metrics m;
    SequenceMetrics total;
    std::map<Scenario, std::size_t> counts;
    m.precision_curve.assign(51, 0.0);
    for (const TrackerRun* r : order) {
        std::vector<double> pc;
        SequenceMetrics s = score_run(*r, opt, pc);
        for (std::size_t k = 0; k < pc.size(); ++k) m.precision_curve[k] += pc[k];
        accumulate(total, s);
        SequenceMetrics& sc = m.per_scenario[s.scenario];
        sc.scenario = s.scenario;
        sc.sequence_id = to_string(s.scenario);
        accumulate(sc, s);
        ++counts[s.scenario];
        m.sequences.push_back(std::move(s));
    }
    const double inv = 1.0 / static_cast<double>(runs.size());
    scale(total, inv);
    for (double& v : m.precision_curve) v *= inv;
    for (auto& [sc, s] : m.per_scenario) scale(s, 1.0 / static_cast<double>(counts[sc]));
    m.mean_iou = total.mean_iou;
    m.auc = total.auc;
    m.precision = total.precision;
    m.success_curve = total.success;
    return m;
}

std::string sequence_csv(const Metrics& m) {
    std::ostringstream os;
    os.precision(10);
    os << "sequence_id,scenario,mean_iou,auc\n";
    for (const SequenceMetrics& s : m.sequences) {
        os << s.sequence_id << ',' << to_string(s.scenario) << ',' << s.mean_iou << ',' << s.auc << '\n';
    }
    return os.str();
}

}  // namespace unimd
