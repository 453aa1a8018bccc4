// Instance recovery from predicted nucleus-pixel, HV and type maps:
// threshold, drop small objects, build the max(|h|, |v|) energy, seed
// markers in low-energy basins and flood them with a marker-controlled
// watershed.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <queue>
#include <vector>

#include "nucleoforge/errors.hpp"
#include "nucleoforge/targets.hpp"
#include "nucleoforge/types.hpp"

namespace nucleoforge {

struct PostprocConfig {
    double np_threshold = 0.5;
    int min_size = 10;
    double marker_threshold = 0.4;
    int connectivity = 8;

    /// Throws ParameterError on out-of-range fields.
    void validate() const;
};

template <class Scalar = double>
struct PredictionBundle {
    ScalarField<Scalar> np_prob;
    HVMaps<Scalar> hv;
    ChannelField<Scalar> tp_prob;  // num_classes + 1 channels, channel 0 background
};

/// 1 where the probability is strictly above `t`.
template <class Scalar>
Mask threshold_np(const ScalarField<Scalar>& prob, Scalar t) {
    if (!(t > Scalar(0) && t < Scalar(1))) throw ParameterError("threshold must lie in (0, 1)");
    return (prob > t).template cast<std::uint8_t>();
}

/// Drops instances with fewer than `min_size` pixels and relabels the rest
/// 1..K in raster order of their first pixel.
InstanceMap remove_small(const InstanceMap& inst, int min_size);

template <class Scalar>
ScalarField<Scalar> energy_landscape(const HVMaps<Scalar>& hv) {
    if (hv.channels() != 2) throw ShapeError("HV maps need 2 channels");
    return hv.channel(0).abs().max(hv.channel(1).abs());
}

/// Connected components of foreground pixels whose energy is below `t`.
template <class Scalar>
InstanceMap extract_markers(const Mask& fg, const ScalarField<Scalar>& energy, Scalar t,
                            int connectivity = 8) {
    if (!same_extent(fg, energy)) throw ShapeError("mask and energy extents differ");
    const Mask basin = ((fg != 0) && (energy < t)).template cast<std::uint8_t>();
    return connected_components(basin, connectivity);
}

namespace detail {

struct NeighbourOffsets {
    int count;
    int dr[8];
    int dc[8];
};

inline NeighbourOffsets neighbour_offsets(int connectivity) {
    if (connectivity == 4) return {4, {-1, 0, 0, 1}, {0, -1, 1, 0}};
    if (connectivity == 8) return {8, {-1, -1, -1, 0, 0, 1, 1, 1}, {-1, 0, 1, -1, 1, -1, 0, 1}};
    throw ParameterError("connectivity must be 4 or 8");
}

template <class Scalar>
struct FloodEntry {
    Scalar level;
    std::uint64_t seq;
    Index pixel;

    // std::priority_queue is a max-heap: invert for lowest level, then FIFO.
    bool operator<(const FloodEntry& o) const {
        if (level != o.level) return level > o.level;
        return seq > o.seq;
    }
};

}  // namespace detail

/// Marker-controlled priority flood. Each foreground pixel reachable from a
/// marker takes the label of the marker with the lowest minimax-elevation
/// path to it (ties resolved first-in first-out). Foreground components
/// without a marker become new instances numbered after the largest marker.
template <class Scalar>
InstanceMap watershed(const ScalarField<Scalar>& energy, const InstanceMap& markers,
                      const Mask& fg, int connectivity = 8) {
    if (!same_extent(energy, markers) || !same_extent(energy, fg))
        throw ShapeError("energy, marker and mask extents differ");
    const auto nb = detail::neighbour_offsets(connectivity);
    const Index h = energy.rows(), w = energy.cols();

    InstanceMap labels = InstanceMap::Zero(h, w);
    std::priority_queue<detail::FloodEntry<Scalar>> queue;
    std::uint64_t seq = 0;
    std::int32_t max_marker = 0;
    for (Index i = 0; i < markers.size(); ++i) {
        const auto m = markers.data()[i];
        if (m <= 0) continue;
        if (!fg.data()[i]) throw LabelError("marker pixel outside the foreground mask");
        labels.data()[i] = m;
        max_marker = std::max(max_marker, m);
        queue.push({energy.data()[i], seq++, i});
    }

    while (!queue.empty()) {
        const auto top = queue.top();
        queue.pop();
        const Index r = top.pixel / w, c = top.pixel % w;
        const auto label = labels.data()[top.pixel];
        for (int k = 0; k < nb.count; ++k) {
            const Index rr = r + nb.dr[k], cc = c + nb.dc[k];
            if (rr < 0 || cc < 0 || rr >= h || cc >= w) continue;
            const Index q = rr * w + cc;
            if (!fg.data()[q] || labels.data()[q]) continue;
            labels.data()[q] = label;
            queue.push({std::max(energy.data()[q], top.level), seq++, q});
        }
    }

    const Mask orphan = ((fg != 0) && (labels == 0)).template cast<std::uint8_t>();
    const InstanceMap extra = connected_components(orphan, connectivity);
    return (extra > 0).select(extra + max_marker, labels);
}

/// Sums type probabilities of classes 1..C over each instance; the type is
/// the argmax (lowest id on ties) and the score its mean per-pixel value.
template <class Scalar>
TypedInstances assign_types(const InstanceMap& inst, const ChannelField<Scalar>& tp_prob) {
    if (tp_prob.height != inst.rows() || tp_prob.width != inst.cols())
        throw ShapeError("instance map and type probabilities differ in extent");
    const InstanceIndex index(inst);
    const Index C = tp_prob.channels() - 1;
    Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> sums =
        Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>::Zero(
            static_cast<Index>(index.size()), std::max<Index>(C, 0));
    std::vector<std::int64_t> area(index.size(), 0);
    for (Index i = 0; i < inst.size(); ++i) {
        const auto s = index.slot(inst.data()[i]);
        if (s < 0) continue;
        ++area[static_cast<std::size_t>(s)];
        if (C > 0) sums.row(s) += tp_prob.data.row(i).tail(C).template cast<double>();
    }
    TypedInstances out{inst, {}, {}};
    for (std::size_t s = 0; s < index.size(); ++s) {
        int best = 0;
        double best_sum = 0.0;
        for (Index k = 0; k < C; ++k) {
            const double v = sums(static_cast<Index>(s), k);
            if (best == 0 || v > best_sum) {
                best = static_cast<int>(k) + 1;
                best_sum = v;
            }
        }
        const auto id = index.ids()[s];
        out.types[id] = best;
        out.scores[id] = best_sum / static_cast<double>(area[s]);
    }
    return out;
}

template <class Scalar>
TypedInstances postprocess(const PredictionBundle<Scalar>& pred, const PostprocConfig& cfg) {
    cfg.validate();
    const auto& p = pred.np_prob;
    if (pred.hv.height != p.rows() || pred.hv.width != p.cols() ||
        pred.tp_prob.height != p.rows() || pred.tp_prob.width != p.cols())
        throw ShapeError("prediction bundle extents are inconsistent");

    const Mask binary = threshold_np(p, static_cast<Scalar>(cfg.np_threshold));
    const InstanceMap blobs =
        remove_small(connected_components(binary, cfg.connectivity), cfg.min_size);
    const Mask fg = (blobs > 0).template cast<std::uint8_t>();
    const ScalarField<Scalar> energy = energy_landscape(pred.hv);
    const InstanceMap markers = extract_markers(
        fg, energy, static_cast<Scalar>(cfg.marker_threshold), cfg.connectivity);
    const InstanceMap split =
        remove_small(watershed(energy, markers, fg, cfg.connectivity), cfg.min_size);
    return assign_types(split, pred.tp_prob);
}

}  // namespace nucleoforge
