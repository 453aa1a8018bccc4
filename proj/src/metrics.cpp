#include "nucleoforge/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_map>

#include "nucleoforge/errors.hpp"
#include "nucleoforge/targets.hpp"

namespace nucleoforge {

MatchResult match_instances(const InstanceMap& gt, const InstanceMap& pred) {
    if (!same_extent(gt, pred)) throw ShapeError("ground truth and prediction extents differ");
    const InstanceIndex gi(gt), pi(pred);
    std::vector<std::int64_t> gt_area(gi.size(), 0), pred_area(pi.size(), 0);
    std::unordered_map<std::uint64_t, std::int64_t> overlap;
    for (Index i = 0; i < gt.size(); ++i) {
        const auto g = gi.slot(gt.data()[i]);
        const auto p = pi.slot(pred.data()[i]);
        if (g >= 0) ++gt_area[static_cast<std::size_t>(g)];
        if (p >= 0) ++pred_area[static_cast<std::size_t>(p)];
        if (g >= 0 && p >= 0)
            ++overlap[static_cast<std::uint64_t>(g) * pi.size() + static_cast<std::uint64_t>(p)];
    }

    MatchResult out;
    std::vector<bool> gt_hit(gi.size(), false), pred_hit(pi.size(), false);
    for (const auto& [key, inter] : overlap) {
        const auto g = static_cast<std::size_t>(key / pi.size());
        const auto p = static_cast<std::size_t>(key % pi.size());
        const auto uni = gt_area[g] + pred_area[p] - inter;
        // IoU > 0.5  <=>  2 * inter > union, decided in integers.
        if (2 * inter <= uni) continue;
        out.pairs.push_back({gi.ids()[g], pi.ids()[p],
                             static_cast<double>(inter) / static_cast<double>(uni)});
        gt_hit[g] = pred_hit[p] = true;
    }
    std::sort(out.pairs.begin(), out.pairs.end(),
              [](const MatchPair& a, const MatchPair& b) { return a.gt < b.gt; });
    for (std::size_t g = 0; g < gi.size(); ++g)
        if (!gt_hit[g]) out.unmatched_gt.push_back(gi.ids()[g]);
    for (std::size_t p = 0; p < pi.size(); ++p)
        if (!pred_hit[p]) out.unmatched_pred.push_back(pi.ids()[p]);
    return out;
}

PQStats& PQStats::operator+=(const PQStats& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    sum_iou += o.sum_iou;
    return *this;
}

PQStats match_stats(const MatchResult& m) {
    PQStats s;
    s.tp = static_cast<std::int64_t>(m.pairs.size());
    s.fp = static_cast<std::int64_t>(m.unmatched_pred.size());
    s.fn = static_cast<std::int64_t>(m.unmatched_gt.size());
    for (const auto& p : m.pairs) s.sum_iou.add(p.iou);
    return s;
}

PQResult pq_from_stats(const PQStats& s) {
    PQResult r;
    r.tp = s.tp;
    r.fp = s.fp;
    r.fn = s.fn;
    r.sum_iou = s.sum_iou.value();
    const auto tp = static_cast<double>(s.tp);
    r.dq = tp / (tp + 0.5 * static_cast<double>(s.fp) + 0.5 * static_cast<double>(s.fn) +
                 kPqEpsilon);
    r.sq = r.sum_iou / (tp + kPqEpsilon);
    r.pq = r.dq * r.sq;
    return r;
}

PQResult pq(const InstanceMap& gt, const InstanceMap& pred) {
    return pq_from_stats(match_stats(match_instances(gt, pred)));
}

InstanceMap restrict_to_class(const TypedInstances& t, int cls) {
    InstanceMap out = t.inst;
    for (Index i = 0; i < out.size(); ++i) {
        auto& id = out.data()[i];
        if (id <= 0) continue;
        const auto it = t.types.find(id);
        if (it == t.types.end() || it->second != cls) id = 0;
    }
    return out;
}

MPQResult mpq_plus(const std::vector<std::pair<TypedInstances, TypedInstances>>& dataset,
                   int num_classes) {
    if (num_classes < 1) throw ParameterError("mPQ+ needs at least one class");
    MPQResult out;
    CompensatedSum total;
    for (int c = 1; c <= num_classes; ++c) {
        PQStats acc;
        for (const auto& [gt, pred] : dataset)
            acc += match_stats(match_instances(restrict_to_class(gt, c), restrict_to_class(pred, c)));
        out.per_class.push_back(pq_from_stats(acc).pq);
        out.absent.push_back(acc.tp + acc.fp + acc.fn == 0);
        total.add(out.per_class.back());
    }
    out.mean = total.value() / num_classes;
    return out;
}

std::vector<std::int64_t> count_per_class(const TypedInstances& t, int num_classes) {
    std::vector<std::int64_t> counts(static_cast<std::size_t>(std::max(num_classes, 0)), 0);
    for (const auto& [id, cls] : t.types)
        if (cls >= 1 && cls <= num_classes) ++counts[static_cast<std::size_t>(cls - 1)];
    return counts;
}

R2Result multi_r2(const CountsTable& gt, const CountsTable& pred) {
    if (!same_extent(gt, pred)) throw ShapeError("count tables differ in shape");
    if (gt.rows() < 2) throw InsufficientDataError("multi-class R² needs at least two images");
    R2Result out;
    CompensatedSum total;
    for (Index c = 0; c < gt.cols(); ++c) {
        const Eigen::ArrayXd g = gt.col(c).cast<double>();
        const Eigen::ArrayXd p = pred.col(c).cast<double>();
        const double mean = compensated_sum(g) / static_cast<double>(g.size());
        const double ss_res = compensated_sum((g - p).square());
        const double ss_tot = compensated_sum((g - mean).square());
        double r2;
        if (ss_tot == 0.0)
            r2 = ss_res == 0.0 ? 1.0 : 0.0;
        else
            r2 = 1.0 - ss_res / ss_tot;
        out.per_class.push_back(r2);
        total.add(r2);
    }
    out.mean = gt.cols() ? total.value() / static_cast<double>(gt.cols()) : 0.0;
    return out;
}

EvaluationReport evaluate(const std::vector<TypedInstances>& gt,
                          const std::vector<TypedInstances>& pred, int num_classes) {
    if (gt.size() != pred.size()) throw ShapeError("image counts differ");
    EvaluationReport r;
    r.num_classes = num_classes;
    const auto n = static_cast<Index>(gt.size());
    r.gt_counts = CountsTable::Zero(n, num_classes);
    r.pred_counts = CountsTable::Zero(n, num_classes);
    std::vector<std::pair<TypedInstances, TypedInstances>> dataset;
    for (Index i = 0; i < n; ++i) {
        const auto& g = gt[static_cast<std::size_t>(i)];
        const auto& p = pred[static_cast<std::size_t>(i)];
        r.per_image.push_back(pq(g.inst, p.inst));
        const auto gc = count_per_class(g, num_classes);
        const auto pc = count_per_class(p, num_classes);
        for (int c = 0; c < num_classes; ++c) {
            r.gt_counts(i, c) = gc[static_cast<std::size_t>(c)];
            r.pred_counts(i, c) = pc[static_cast<std::size_t>(c)];
        }
        dataset.emplace_back(g, p);
    }
    r.mpq = mpq_plus(dataset, num_classes);
    if (n >= 2) {
        r.r2 = multi_r2(r.gt_counts, r.pred_counts);
    } else {
        r.r2.per_class.assign(static_cast<std::size_t>(num_classes), std::numeric_limits<double>::quiet_NaN());
        r.r2.mean = std::numeric_limits<double>::quiet_NaN();
    }
    return r;
}

namespace {

nlohmann::json number(double v) {
    if (!std::isfinite(v)) return nullptr;
    return round6(v);
}

nlohmann::json numbers(const std::vector<double>& v) {
    auto a = nlohmann::json::array();
    for (double x : v) a.push_back(number(x));
    return a;
}

}  // namespace

nlohmann::json report_json(const EvaluationReport& r) {
    nlohmann::json j;
    j["num_classes"] = r.num_classes;
    auto images = nlohmann::json::array();
    CompensatedSum pq_sum;
    for (std::size_t i = 0; i < r.per_image.size(); ++i) {
        const auto& p = r.per_image[i];
        images.push_back({{"image", i},
                          {"pq", number(p.pq)},
                          {"dq", number(p.dq)},
                          {"sq", number(p.sq)},
                          {"tp", p.tp},
                          {"fp", p.fp},
                          {"fn", p.fn}});
        pq_sum.add(p.pq);
    }
    j["per_image"] = images;
    j["pq_mean"] = r.per_image.empty()
                       ? nlohmann::json(nullptr)
                       : number(pq_sum.value() / static_cast<double>(r.per_image.size()));
    j["mpq_plus"] = {{"per_class", numbers(r.mpq.per_class)},
                     {"mean", number(r.mpq.mean)},
                     {"absent", r.mpq.absent}};
    j["multi_r2"] = {{"per_class", numbers(r.r2.per_class)}, {"mean", number(r.r2.mean)}};
    return j;
}

std::string report_csv(const EvaluationReport& r) {
    std::ostringstream out;
    out << "image,pq,dq,sq,tp,fp,fn,mpq_plus,multi_r2\n";
    CompensatedSum pq_sum, dq_sum, sq_sum;
    std::int64_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < r.per_image.size(); ++i) {
        const auto& p = r.per_image[i];
        out << i << ',' << format6(p.pq) << ',' << format6(p.dq) << ',' << format6(p.sq) << ','
            << p.tp << ',' << p.fp << ',' << p.fn << ",,\n";
        pq_sum.add(p.pq);
        dq_sum.add(p.dq);
        sq_sum.add(p.sq);
        tp += p.tp;
        fp += p.fp;
        fn += p.fn;
    }
    const double n = static_cast<double>(std::max<std::size_t>(r.per_image.size(), 1));
    out << "summary," << format6(pq_sum.value() / n) << ',' << format6(dq_sum.value() / n) << ','
        << format6(sq_sum.value() / n) << ',' << tp << ',' << fp << ',' << fn << ','
        << format6(r.mpq.mean) << ',' << format6(r.r2.mean) << '\n';
    return out.str();
}

}  // namespace nucleoforge
