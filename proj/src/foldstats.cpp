#include "nucleoforge/foldstats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "nucleoforge/errors.hpp"
#include "nucleoforge/numeric.hpp"
#include "nucleoforge/targets.hpp"

namespace nucleoforge {

ClassCounts class_counts(const std::vector<LabeledTile>& split, int num_classes) {
    ClassCounts counts(static_cast<std::size_t>(num_classes), 0);
    for (const auto& tile : split) {
        const auto typed = majority_types(tile.inst, tile.cls, num_classes);
        for (const auto& [id, cls] : typed.types)
            if (cls >= 1) ++counts[static_cast<std::size_t>(cls - 1)];
    }
    return counts;
}

std::vector<double> ratios(const ClassCounts& counts) {
    std::int64_t total = 0;
    for (auto c : counts) {
        if (c < 0) throw ParameterError("negative class count");
        total += c;
    }
    if (total == 0) throw EmptySplitError("split contains no counted nuclei");
    std::vector<double> out;
    out.reserve(counts.size());
    for (auto c : counts) out.push_back(static_cast<double>(c) / static_cast<double>(total));
    return out;
}

Similarity similarity(const std::vector<double>& r_train, const std::vector<double>& r_valid) {
    if (r_train.size() != r_valid.size()) throw ShapeError("ratio vectors differ in length");
    Similarity s;
    for (std::size_t i = 0; i < r_train.size(); ++i) {
        const double t = r_train[i], v = r_valid[i];
        if (v == 0.0) {
            const bool inf = t > 0.0;
            s.sim.push_back(inf ? std::numeric_limits<double>::infinity() : 1.0);
            s.flagged.push_back(inf);
        } else {
            s.sim.push_back(t / v);
            s.flagged.push_back(false);
        }
    }
    return s;
}

double fold_score(const std::vector<double>& sim) {
    CompensatedSum total;
    for (double s : sim) {
        if (std::isinf(s)) return std::numeric_limits<double>::infinity();
        total.add((s - 1.0) * (s - 1.0));
    }
    return total.value();
}

FoldReport fold_report(int fold_id, const ClassCounts& train, const ClassCounts& valid) {
    FoldReport r;
    r.fold_id = fold_id;
    r.c_train = train;
    r.c_valid = valid;
    r.r_train = ratios(train);
    r.r_valid = ratios(valid);
    r.sim = similarity(r.r_train, r.r_valid);
    r.score = fold_score(r.sim.sim);
    return r;
}

std::vector<FoldReport> rank_reports(std::vector<FoldReport> reports) {
    std::sort(reports.begin(), reports.end(), [](const FoldReport& a, const FoldReport& b) {
        if (a.score != b.score) return a.score < b.score;
        return a.fold_id < b.fold_id;
    });
    return reports;
}

std::vector<FoldReport> rank_folds(const std::vector<FoldInput>& folds, int num_classes) {
    if (folds.empty()) throw ParameterError("no folds to rank");
    std::vector<FoldReport> reports;
    for (const auto& f : folds)
        reports.push_back(fold_report(f.fold_id, class_counts(f.train, num_classes),
                                      class_counts(f.valid, num_classes)));
    return rank_reports(std::move(reports));
}

std::string ranking_csv(const std::vector<FoldReport>& ranked) {
    std::ostringstream out;
    const std::size_t C = ranked.empty() ? 0 : ranked.front().c_train.size();
    out << "fold_id,score";
    for (std::size_t c = 1; c <= C; ++c)
        out << ",C_train_" << c << ",C_valid_" << c << ",R_train_" << c << ",R_valid_" << c
            << ",Sim_" << c;
    out << '\n';
    for (const auto& r : ranked) {
        char id[16];
        std::snprintf(id, sizeof id, "%02d", r.fold_id);
        out << id << ',' << format6(r.score);
        for (std::size_t c = 0; c < C; ++c)
            out << ',' << r.c_train[c] << ',' << r.c_valid[c] << ',' << format6(r.r_train[c])
                << ',' << format6(r.r_valid[c]) << ',' << format6(r.sim.sim[c]);
        out << '\n';
    }
    return out.str();
}

}  // namespace nucleoforge
