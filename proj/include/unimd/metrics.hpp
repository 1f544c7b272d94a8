#pragma once

#include <map>
#include <string>
#include <vector>

#include "unimd/tracker.hpp"

namespace unimd {

/// IoU thresholds 0.00, 0.05, ..., 1.00; success counts IoU ≥ τ.
const std::vector<double>& success_thresholds();

struct SequenceMetrics {
    std::string sequence_id;
    Scenario scenario = Scenario::Plain;
    double mean_iou = 0;
    double auc = 0;
    double precision = 0;          // center error ≤ precision_px
    std::vector<double> success;   // per threshold
};

struct Metrics {
    double mean_iou = 0;
    double auc = 0;
    double precision = 0;
    std::vector<double> success_curve;    // mean over sequences
    std::vector<double> precision_curve;  // pixel thresholds 0..50
    std::map<Scenario, SequenceMetrics> per_scenario;  // scenario means
    std::vector<SequenceMetrics> sequences;
};

struct EvalOptions {
    double frame_size = 128;  // pixels per normalized unit
    double precision_px = 20;
};

/// Frames after the first are scored; sequence scores are averaged with
/// equal weight, in sequence-id order. Throws ValidationError on an empty run list.
Metrics evaluate(const std::vector<TrackerRun>& runs, const EvalOptions& opt = {});

/// sequence_id,scenario,mean_iou,auc
std::string sequence_csv(const Metrics& m);

}  // namespace unimd
