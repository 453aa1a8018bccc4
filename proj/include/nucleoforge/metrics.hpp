// Instance matching and challenge metrics: panoptic quality, dataset-level
// multi-class PQ (mPQ+) and multi-class R² over per-image nucleus counts.
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "nucleoforge/numeric.hpp"
#include "nucleoforge/types.hpp"

namespace nucleoforge {

/// Damping added to the DQ and SQ denominators.
inline constexpr double kPqEpsilon = 1e-6;

struct MatchPair {
    std::int32_t gt = 0;
    std::int32_t pred = 0;
    double iou = 0.0;
};

struct MatchResult {
    std::vector<MatchPair> pairs;  // ascending gt id
    std::vector<std::int32_t> unmatched_gt;
    std::vector<std::int32_t> unmatched_pred;
};

/// Pairs every (gt, pred) with IoU > 0.5. At that threshold each id can take
/// part in at most one pair, so no assignment step is needed.
MatchResult match_instances(const InstanceMap& gt, const InstanceMap& pred);

struct PQStats {
    std::int64_t tp = 0, fp = 0, fn = 0;
    CompensatedSum sum_iou;

    PQStats& operator+=(const PQStats& o);
};

PQStats match_stats(const MatchResult& m);

struct PQResult {
    double dq = 0.0, sq = 0.0, pq = 0.0;
    std::int64_t tp = 0, fp = 0, fn = 0;
    double sum_iou = 0.0;
};

PQResult pq_from_stats(const PQStats& s);
PQResult pq(const InstanceMap& gt, const InstanceMap& pred);

/// Instance map keeping only instances typed `cls`.
InstanceMap restrict_to_class(const TypedInstances& t, int cls);

struct MPQResult {
    std::vector<double> per_class;  // index c-1 for class c
    std::vector<bool> absent;       // class seen in neither gt nor pred
    double mean = 0.0;
};

MPQResult mpq_plus(const std::vector<std::pair<TypedInstances, TypedInstances>>& dataset,
                   int num_classes);

/// counts[c-1] = number of instances typed c.
std::vector<std::int64_t> count_per_class(const TypedInstances& t, int num_classes);

/// images × classes.
using CountsTable = Eigen::Array<std::int64_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct R2Result {
    std::vector<double> per_class;
    double mean = 0.0;
};

R2Result multi_r2(const CountsTable& gt, const CountsTable& pred);

struct EvaluationReport {
    int num_classes = 0;
    std::vector<PQResult> per_image;
    MPQResult mpq;
    R2Result r2;
    CountsTable gt_counts, pred_counts;
};

EvaluationReport evaluate(const std::vector<TypedInstances>& gt,
                          const std::vector<TypedInstances>& pred, int num_classes);

nlohmann::json report_json(const EvaluationReport& r);
std::string report_csv(const EvaluationReport& r);

}  // namespace nucleoforge
