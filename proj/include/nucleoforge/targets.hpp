// Training targets derived from instance/class label maps: nucleus-pixel
// mask, horizontal/vertical distance maps, smoothed type labels. Also the
// labelling primitives shared with post-processing and synthetic fixtures.
#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "nucleoforge/errors.hpp"
#include "nucleoforge/stain.hpp"
#include "nucleoforge/types.hpp"

namespace nucleoforge {

/// Dense slot lookup for the positive ids present in a label map.
class InstanceIndex {
public:
    explicit InstanceIndex(const LabelMap& labels);

    const std::vector<std::int32_t>& ids() const& { return ids_; }
    std::vector<std::int32_t> ids() && { return std::move(ids_); }
    std::size_t size() const { return ids_.size(); }
    /// Slot of `id`, or -1 when absent.
    std::ptrdiff_t slot(std::int32_t id) const;

private:
    std::vector<std::int32_t> ids_;
    std::vector<std::int32_t> lookup_;  // id -> slot + 1, 0 if absent
};

/// Labels maximal connected foreground regions 1..K in row-major order of
/// each region's first pixel. `connectivity` is 4 or 8.
InstanceMap connected_components(const Mask& mask, int connectivity = 8);

struct Centroid {
    double row = 0.0;
    double col = 0.0;
};

Centroid center_of_mass(const InstanceMap& inst, std::int32_t id);

Mask np_target(const InstanceMap& inst);

namespace detail {
// Offsets are measured from the instance's bounding-box corner so that the
// centroid arithmetic is identical under translation.
struct InstanceGeometry {
    Index origin_row = 0, origin_col = 0;
    Centroid local;  // centroid relative to the origin
    double min_dx = 0.0, max_dx = 0.0, min_dy = 0.0, max_dy = 0.0;

    double dx(Index c) const { return static_cast<double>(c - origin_col) - local.col; }
    double dy(Index r) const { return static_cast<double>(r - origin_row) - local.row; }
};
std::vector<InstanceGeometry> instance_geometry(const InstanceMap& inst,
                                                const InstanceIndex& index);

inline double side_scaled(double d, double lo, double hi) {
    if (d < 0.0) return d / -lo;
    if (d > 0.0) return d / hi;
    return 0.0;
}
}  // namespace detail

/// Horizontal and vertical offsets to each instance's centre of mass, scaled
/// per side so the extreme pixels left/above the centre are -1 and those
/// right/below are +1. Background is (0, 0).
template <class Scalar = double>
HVMaps<Scalar> hv_targets(const InstanceMap& inst) {
    const InstanceIndex index(inst);
    const auto geom = detail::instance_geometry(inst, index);
    HVMaps<Scalar> out(inst.rows(), inst.cols(), 2);
    for (Index r = 0; r < inst.rows(); ++r) {
        for (Index c = 0; c < inst.cols(); ++c) {
            const auto id = inst(r, c);
            if (id <= 0) continue;
            const auto& g = geom[static_cast<std::size_t>(index.slot(id))];
            out.at(r, c)(0) = static_cast<Scalar>(detail::side_scaled(g.dx(c), g.min_dx, g.max_dx));
            out.at(r, c)(1) = static_cast<Scalar>(detail::side_scaled(g.dy(r), g.min_dy, g.max_dy));
        }
    }
    return out;
}

/// Majority pixel class (1..num_classes) per instance; ties go to the lowest
/// class id. Class-0 pixels do not vote; an instance with no voting pixels is
/// typed 0. The score is the winning fraction of the instance area.
TypedInstances majority_types(const InstanceMap& inst, const ClassMap& cls, int num_classes);

template <class Scalar = double>
struct TrainingTargets {
    Mask np;
    HVMaps<Scalar> hv;
    ChannelField<Scalar> tp;
};

template <class Scalar = double>
TrainingTargets<Scalar> make_training_targets(const InstanceMap& inst, const ClassMap& cls,
                                              const RgbImage& img, int num_classes,
                                              SmoothingOptions opts = {}) {
    if (!same_extent(inst, cls) || img.height != inst.rows() || img.width != inst.cols())
        throw ShapeError("image, instance and class maps must share extents");
    const auto hn = haematoxylin_norm(rgb_to_hed<Scalar>(img));
    return {np_target(inst), hv_targets<Scalar>(inst),
            smooth_onehot<Scalar>(cls, hn, num_classes, opts)};
}

struct SynthOptions {
    double min_axis = 4.0;    // semi-axis bounds, pixels
    double max_axis = 10.0;
    double max_aspect = 2.0;  // major / minor
    int gap = 1;              // Chebyshev clearance between distinct blobs
    bool touching_pairs = false;  // place blobs as pairs sharing a boundary
    int max_attempts = 2000;  // per blob
};

struct SynthLabels {
    InstanceMap inst;
    ClassMap cls;
};

/// Deterministic non-overlapping elliptical blobs with random classes
/// 1..num_classes. Uses only IEEE-exact arithmetic so a seed reproduces the
/// same maps on every platform.
SynthLabels synth_instances(std::uint64_t seed, Index height, Index width, int n,
                            int num_classes, const SynthOptions& opts = {});

}  // namespace nucleoforge
