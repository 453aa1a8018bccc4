// Per-class nucleus composition of train/valid splits and fold selection by
// how closely the two compositions agree.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nucleoforge/types.hpp"

namespace nucleoforge {

/// counts[c-1] for class c.
using ClassCounts = std::vector<std::int64_t>;

struct LabeledTile {
    InstanceMap inst;
    ClassMap cls;
};

/// Instances per class over a split; an instance's class is its majority
/// pixel class.
ClassCounts class_counts(const std::vector<LabeledTile>& split, int num_classes);

/// counts / total. Throws EmptySplitError when the total is zero.
std::vector<double> ratios(const ClassCounts& counts);

struct Similarity {
    std::vector<double> sim;
    std::vector<bool> flagged;  // train share with no valid share: sim is +inf
};

/// Elementwise train/valid ratio; 0/0 counts as identical (1).
Similarity similarity(const std::vector<double>& r_train, const std::vector<double>& r_valid);

/// Sum of (sim - 1)^2; +inf if any entry is infinite.
double fold_score(const std::vector<double>& sim);

struct FoldReport {
    int fold_id = 0;
    ClassCounts c_train, c_valid;
    std::vector<double> r_train, r_valid;
    Similarity sim;
    double score = 0.0;
};

FoldReport fold_report(int fold_id, const ClassCounts& train, const ClassCounts& valid);

struct FoldInput {
    int fold_id = 0;
    std::vector<LabeledTile> train, valid;
};

/// Sorted ascending by score, ties by fold id; the front is the selection.
std::vector<FoldReport> rank_reports(std::vector<FoldReport> reports);
std::vector<FoldReport> rank_folds(const std::vector<FoldInput>& folds, int num_classes);

/// fold_id, score, then C_train, C_valid, R_train, R_valid, Sim per class.
std::string ranking_csv(const std::vector<FoldReport>& ranked);

}  // namespace nucleoforge
