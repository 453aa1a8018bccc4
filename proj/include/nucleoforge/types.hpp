#pragma once

#include <cstdint>

#include <Eigen/Core>

namespace nucleoforge {

using Eigen::Index;

/// Dense H×W map, row-major so that it shares layout with NPY payloads.
template <class T>
using Field = Eigen::Array<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Mask = Field<std::uint8_t>;
using LabelMap = Field<std::int32_t>;
using InstanceMap = LabelMap;
using ClassMap = LabelMap;

template <class Scalar>
using ScalarField = Field<Scalar>;

/// H×W×C map stored as an (H·W)×C row-major array: one row per pixel, one
/// column per channel. Identical to interleaved HWC memory order.
template <class T>
struct ChannelField {
    using Scalar = T;
    using Storage = Eigen::Array<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using Stride = Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>;
    using ChannelView = Eigen::Map<Field<T>, Eigen::Unaligned, Stride>;
    using ConstChannelView = Eigen::Map<const Field<T>, Eigen::Unaligned, Stride>;

    Index height = 0;
    Index width = 0;
    Storage data;

    ChannelField() = default;
    ChannelField(Index h, Index w, Index channels)
        : height(h), width(w), data(Storage::Zero(h * w, channels)) {}
    ChannelField(Index h, Index w, Storage values)
        : height(h), width(w), data(std::move(values)) {
        eigen_assert(data.rows() == h * w);
    }

    Index channels() const { return data.cols(); }
    Index pixels() const { return data.rows(); }

    // Strided H×W view of one channel.
    ChannelView channel(Index c) {
        return ChannelView(data.data() + (data.size() ? c : 0), height, width,
                           Stride(width * channels(), channels()));
    }
    ConstChannelView channel(Index c) const {
        return ConstChannelView(data.data() + (data.size() ? c : 0), height, width,
                                Stride(width * channels(), channels()));
    }

    auto at(Index r, Index c) { return data.row(r * width + c); }
    auto at(Index r, Index c) const { return data.row(r * width + c); }

    template <class U>
    ChannelField<U> cast() const {
        return ChannelField<U>(height, width, data.template cast<U>());
    }

    bool operator==(const ChannelField& o) const {
        return height == o.height && width == o.width && channels() == o.channels() &&
               (data == o.data).all();
    }
};

using RgbImage = ChannelField<std::uint8_t>;

template <class Scalar>
using StainMap = ChannelField<Scalar>;

/// (h, v) pair per pixel; channel 0 horizontal, channel 1 vertical.
template <class Scalar>
using HVMaps = ChannelField<Scalar>;

template <class A, class B>
bool same_extent(const A& a, const B& b) {
    return a.rows() == b.rows() && a.cols() == b.cols();
}

}  // namespace nucleoforge

#include <map>

namespace nucleoforge {

/// Instance map plus per-instance class and confidence. Every positive id in
/// `inst` has an entry in `types`.
struct TypedInstances {
    InstanceMap inst;
    std::map<std::int32_t, int> types;
    std::map<std::int32_t, double> scores;
};

}  // namespace nucleoforge
