// NPY container I/O and PPM export.
//
// Reads NPY v1.0 and v2.0, writes v1.0. Only little-endian, C-order arrays of
// u8, i32, f32, f64 and bool are accepted; anything else is rejected rather
// than converted so that the payload stays byte-identical across a round trip.
#pragma once

#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "nucleoforge/errors.hpp"
#include "nucleoforge/types.hpp"

namespace nucleoforge {

enum class DType { u8, i32, f32, f64, boolean };

std::size_t dtype_size(DType d);
const char* dtype_descr(DType d);

template <class T>
constexpr DType dtype_of();
template <> constexpr DType dtype_of<std::uint8_t>() { return DType::u8; }
template <> constexpr DType dtype_of<std::int32_t>() { return DType::i32; }
template <> constexpr DType dtype_of<float>() { return DType::f32; }
template <> constexpr DType dtype_of<double>() { return DType::f64; }
template <> constexpr DType dtype_of<bool>() { return DType::boolean; }

struct NpyError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct FormatError : NpyError {
    using NpyError::NpyError;
};
struct UnsupportedLayoutError : NpyError {
    using NpyError::NpyError;
};
struct UnsupportedDtypeError : NpyError {
    using NpyError::NpyError;
};

struct Tensor {
    DType dtype = DType::u8;
    std::vector<std::size_t> shape;
    std::vector<std::byte> data;  // row-major, little-endian

    Tensor() = default;
    Tensor(DType d, std::vector<std::size_t> s);

    std::size_t size() const;
    std::size_t rank() const { return shape.size(); }

    template <class T>
    static Tensor from_values(std::vector<std::size_t> s, std::span<const T> values) {
        Tensor t(dtype_of<T>(), std::move(s));
        if (values.size() != t.size()) throw ShapeError("value count does not match shape");
        if (!values.empty()) std::memcpy(t.data.data(), values.data(), t.data.size());
        return t;
    }

    /// Element `i` converted to T, whatever the stored dtype.
    template <class T>
    T get(std::size_t i) const {
        const std::byte* p = data.data() + i * dtype_size(dtype);
        switch (dtype) {
            case DType::u8: return static_cast<T>(load<std::uint8_t>(p));
            case DType::boolean: return static_cast<T>(load<std::uint8_t>(p) != 0);
            case DType::i32: return static_cast<T>(load<std::int32_t>(p));
            case DType::f32: return static_cast<T>(load<float>(p));
            case DType::f64: return static_cast<T>(load<double>(p));
        }
        return T{};
    }

    template <class T>
    std::vector<T> values() const {
        std::vector<T> out(size());
        if (dtype == dtype_of<T>()) {
            if (!out.empty()) std::memcpy(out.data(), data.data(), data.size());
        } else {
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = get<T>(i);
        }
        return out;
    }

    bool operator==(const Tensor&) const = default;

private:
    template <class T>
    static T load(const std::byte* p) {
        T v;
        std::memcpy(&v, p, sizeof(T));
        return v;
    }
};

Tensor read_npy(const std::filesystem::path& path);
Tensor parse_npy(std::span<const std::byte> bytes);
void write_npy(const std::filesystem::path& path, const Tensor& t);
std::vector<std::byte> serialize_npy(const Tensor& t);

/// Binary P6, maxval 255. Requires a u8 H×W×3 tensor.
void write_ppm(const std::filesystem::path& path, const Tensor& img);
void write_ppm(const std::filesystem::path& path, const RgbImage& img);

// Stack <-> per-item field conversion. A stack is N×H×W or N×H×W×C.

/// Item n of a stack as an (H·W)×C field (C = 1 for rank-3 stacks).
template <class T>
ChannelField<T> stack_item(const Tensor& t, std::size_t n) {
    if (t.rank() != 3 && t.rank() != 4) throw ShapeError("expected an N×H×W or N×H×W×C stack");
    if (n >= t.shape[0]) throw ShapeError("stack index out of range");
    const auto h = static_cast<Index>(t.shape[1]);
    const auto w = static_cast<Index>(t.shape[2]);
    const auto c = t.rank() == 4 ? static_cast<Index>(t.shape[3]) : Index{1};
    ChannelField<T> out(h, w, c);
    const std::size_t count = static_cast<std::size_t>(h * w * c);
    const std::size_t base = n * count;
    T* dst = out.data.data();
    if (t.dtype == dtype_of<T>()) {
        if (count) std::memcpy(dst, t.data.data() + base * sizeof(T), count * sizeof(T));
    } else {
        for (std::size_t i = 0; i < count; ++i) dst[i] = t.get<T>(base + i);
    }
    return out;
}

/// Builds an N×H×W×C stack (or N×H×W when `squeeze_single_channel`).
template <class Out, class T>
Tensor make_stack(const std::vector<ChannelField<T>>& items, Index h, Index w, Index c,
                  bool squeeze_single_channel = false) {
    std::vector<std::size_t> shape{items.size(), static_cast<std::size_t>(h),
                                   static_cast<std::size_t>(w)};
    if (!(squeeze_single_channel && c == 1)) shape.push_back(static_cast<std::size_t>(c));
    Tensor t(dtype_of<Out>(), std::move(shape));
    const std::size_t count = static_cast<std::size_t>(h * w * c);
    for (std::size_t n = 0; n < items.size(); ++n) {
        const auto& it = items[n];
        if (it.height != h || it.width != w || it.channels() != c)
            throw ShapeError("stack items have inconsistent extents");
        for (std::size_t i = 0; i < count; ++i) {
            const Out v = static_cast<Out>(it.data.data()[i]);
            std::memcpy(t.data.data() + (n * count + i) * sizeof(Out), &v, sizeof(Out));
        }
    }
    return t;
}

template <class Out, class T>
Tensor make_stack(const std::vector<Field<T>>& items, Index h, Index w) {
    std::vector<ChannelField<T>> wrapped;
    wrapped.reserve(items.size());
    for (const auto& f : items) {
        if (f.rows() != h || f.cols() != w) throw ShapeError("stack items have inconsistent extents");
        wrapped.emplace_back(h, w, Eigen::Map<const typename ChannelField<T>::Storage>(
                                       f.data(), h * w, 1));
    }
    return make_stack<Out>(wrapped, h, w, 1, true);
}

/// Converts a single-channel ChannelField into a plain H×W field.
template <class T>
Field<T> to_field(const ChannelField<T>& f) {
    return f.channel(0);
}

}  // namespace nucleoforge
