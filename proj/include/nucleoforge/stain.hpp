// Colour deconvolution into haematoxylin / eosin / DAB optical densities and
// haematoxylin-weighted one-hot label smoothing.
//
// Pixels are row vectors: od = -log(rgb) / -log(eps) and hed = od * D with
// D = inverse(M), M holding one stain vector per row.
#pragma once

#include <cmath>
#include <cstdint>
#include <limits>

#include <Eigen/Dense>

#include "nucleoforge/errors.hpp"
#include "nucleoforge/types.hpp"

namespace nucleoforge {

/// Lower clamp applied to u8-derived transmittance before taking logs.
inline constexpr double kOdFloor = 1e-6;

template <class Scalar>
using Matrix3 = Eigen::Matrix<Scalar, 3, 3, Eigen::RowMajor>;

/// Ruifrok–Johnston H, E and DAB stain vectors, one per row.
template <class Scalar = double>
const Matrix3<Scalar>& rgb_from_hed() {
    static const Matrix3<Scalar> m = [] {
        Matrix3<Scalar> r;
        r << Scalar(0.65), Scalar(0.70), Scalar(0.29),
             Scalar(0.07), Scalar(0.99), Scalar(0.11),
             Scalar(0.27), Scalar(0.57), Scalar(0.78);
        return r;
    }();
    return m;
}

template <class Scalar = double>
const Matrix3<Scalar>& hed_from_rgb() {
    // Eigen inverts fixed 3×3 matrices by cofactors.
    static const Matrix3<Scalar> d = rgb_from_hed<double>().inverse().template cast<Scalar>();
    return d;
}

/// Deconvolves transmittance values in [0,1]. Values are clamped below at
/// `floor` before the log; the default keeps the map an exact inverse of
/// hed_to_rgb for any finite stains.
template <class Scalar>
StainMap<Scalar> rgb_to_hed(const ChannelField<Scalar>& rgb01,
                            Scalar floor = std::numeric_limits<Scalar>::min()) {
    if (rgb01.channels() != 3) throw ShapeError("rgb_to_hed expects 3 channels");
    const Scalar log_eps = std::log(Scalar(kOdFloor));
    const auto od = (rgb01.data.max(floor).log() / log_eps).matrix();
    StainMap<Scalar> out(rgb01.height, rgb01.width, 3);
    out.data = (od * hed_from_rgb<Scalar>()).array();
    return out;
}

/// Deconvolves an 8-bit RGB tile; zero bytes are clamped to kOdFloor.
template <class Scalar = double>
StainMap<Scalar> rgb_to_hed(const RgbImage& img) {
    if (img.channels() != 3) throw ShapeError("rgb_to_hed expects 3 channels");
    ChannelField<Scalar> rgb01(img.height, img.width,
                               (img.data.template cast<Scalar>() / Scalar(255)).eval());
    return rgb_to_hed<Scalar>(rgb01, Scalar(kOdFloor));
}

/// Recombines stains into transmittance in [0,1].
template <class Scalar>
ChannelField<Scalar> hed_to_rgb(const StainMap<Scalar>& hed) {
    if (hed.channels() != 3) throw ShapeError("hed_to_rgb expects 3 channels");
    const Scalar log_eps = std::log(Scalar(kOdFloor));
    ChannelField<Scalar> out(hed.height, hed.width, 3);
    out.data = ((hed.data.matrix() * rgb_from_hed<Scalar>()).array() * log_eps)
                   .exp()
                   .min(Scalar(1))
                   .max(Scalar(0));
    return out;
}

/// Rounds transmittance to 8-bit RGB.
template <class Scalar>
RgbImage quantize_rgb(const ChannelField<Scalar>& rgb01) {
    RgbImage out(rgb01.height, rgb01.width, rgb01.channels());
    out.data = (rgb01.data.max(Scalar(0)).min(Scalar(1)) * Scalar(255))
                   .round()
                   .template cast<std::uint8_t>();
    return out;
}

/// Min-max rescale of the haematoxylin channel over the whole tile. A
/// constant channel maps to zero.
template <class Scalar>
ScalarField<Scalar> haematoxylin_norm(const StainMap<Scalar>& hed) {
    ScalarField<Scalar> h = hed.channel(0);
    if (h.size() == 0) return h;
    const Scalar lo = h.minCoeff();
    const Scalar hi = h.maxCoeff();
    if (!(hi > lo)) return ScalarField<Scalar>::Zero(h.rows(), h.cols());
    return (h - lo) / (hi - lo);
}

struct SmoothingOptions {
    /// When set, background (class 0) keeps its hard 1 and only nuclei
    /// channels are modulated.
    bool foreground_only = false;
};

/// One-hot encodes `cls` into `num_classes + 1` channels and replaces each 1
/// with 0.5 + 0.5·hn at that pixel.
template <class Scalar>
ChannelField<Scalar> smooth_onehot(const ClassMap& cls, const ScalarField<Scalar>& hn,
                                   int num_classes, SmoothingOptions opts = {}) {
    if (!same_extent(cls, hn)) throw ShapeError("class map and H_norm extents differ");
    if (num_classes < 0) throw ParameterError("num_classes must be non-negative");
    ChannelField<Scalar> out(cls.rows(), cls.cols(), num_classes + 1);
    for (Index r = 0; r < cls.rows(); ++r) {
        for (Index c = 0; c < cls.cols(); ++c) {
            const auto k = cls(r, c);
            if (k < 0 || k > num_classes)
                throw LabelError("class id " + std::to_string(k) + " outside 0.." +
                                 std::to_string(num_classes));
            const Scalar weight = (k == 0 && opts.foreground_only)
                                      ? Scalar(1)
                                      : Scalar(0.5) + Scalar(0.5) * hn(r, c);
            out.at(r, c)(k) = weight;
        }
    }
    return out;
}

}  // namespace nucleoforge
