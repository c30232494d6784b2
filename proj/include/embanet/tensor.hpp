#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <random>
#include <vector>

#include "embanet/common.hpp"

namespace embanet {

/// Dense rank-4 activation tensor, N x C x H x W, row-major with W fastest.
/// Vectors and matrices are modeled as degenerate shapes, e.g. (n, f, 1, 1).
template <typename T>
struct Tensor4 {
    int n = 0, c = 0, h = 0, w = 0;
    std::vector<T> data;

    Tensor4() = default;
    Tensor4(int n_, int c_, int h_, int w_, T fill = T(0))
        : n(n_), c(c_), h(h_), w(w_) {
        if (n < 1 || c < 1 || h < 1 || w < 1)
            throw ShapeMismatch("Tensor4: all dimensions must be >= 1");
        data.assign(static_cast<std::size_t>(n) * c * h * w, fill);
    }

    std::size_t size() const { return data.size(); }

    std::size_t index(int i, int j, int y, int x) const {
        return ((static_cast<std::size_t>(i) * c + j) * h + y) * w + x;
    }
    T& at(int i, int j, int y, int x) { return data[index(i, j, y, x)]; }
    const T& at(int i, int j, int y, int x) const { return data[index(i, j, y, x)]; }

    bool same_shape(const Tensor4& o) const {
        return n == o.n && c == o.c && h == o.h && w == o.w;
    }

    template <typename U>
    Tensor4<U> cast() const {
        Tensor4<U> out(n, c, h, w);
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }

    bool all_finite() const {
        for (T v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }
};

/// Ordered channel slices of a tensor; all parts share (n, h, w).
template <typename T>
struct ChannelSlices {
    std::vector<Tensor4<T>> parts;
};

template <typename T>
ChannelSlices<T> split_channels(const Tensor4<T>& x, int s) {
    if (s < 1) throw NonDivisibleChannels("split_channels: s must be positive");
    if (x.c % s != 0)
        throw NonDivisibleChannels("split_channels: " + std::to_string(s) +
                                   " does not divide c=" + std::to_string(x.c));
    ChannelSlices<T> out;
    int cp = x.c / s;
    std::size_t plane = static_cast<std::size_t>(x.h) * x.w;
    for (int i = 0; i < s; ++i) {
        Tensor4<T> part(x.n, cp, x.h, x.w);
        for (int b = 0; b < x.n; ++b) {
            const T* src = x.data.data() + (static_cast<std::size_t>(b) * x.c + i * cp) * plane;
            T* dst = part.data.data() + static_cast<std::size_t>(b) * cp * plane;
            std::copy(src, src + static_cast<std::size_t>(cp) * plane, dst);
        }
        out.parts.push_back(std::move(part));
    }
    return out;
}

template <typename T>
ChannelSlices<T> multiplex_channels(const Tensor4<T>& x, int s) {
    if (s < 1) throw ShapeMismatch("multiplex_channels: s must be positive");
    ChannelSlices<T> out;
    out.parts.assign(s, x);
    return out;
}

template <typename T>
Tensor4<T> concat_channels(const ChannelSlices<T>& slices) {
    if (slices.parts.empty()) throw ShapeMismatch("concat_channels: no parts");
    const auto& first = slices.parts.front();
    int ctot = 0;
    for (const auto& p : slices.parts) {
        if (p.n != first.n || p.h != first.h || p.w != first.w)
            throw ShapeMismatch("concat_channels: parts disagree on batch/spatial dims");
        ctot += p.c;
    }
    Tensor4<T> out(first.n, ctot, first.h, first.w);
    std::size_t plane = static_cast<std::size_t>(first.h) * first.w;
    for (int b = 0; b < first.n; ++b) {
        int coff = 0;
        for (const auto& p : slices.parts) {
            const T* src = p.data.data() + static_cast<std::size_t>(b) * p.c * plane;
            T* dst = out.data.data() + (static_cast<std::size_t>(b) * ctot + coff) * plane;
            std::copy(src, src + static_cast<std::size_t>(p.c) * plane, dst);
            coff += p.c;
        }
    }
    return out;
}

/// out[n,c,h,w] = x[n,c,h,w] * weight[n,c]; weight shaped (n, c, 1, 1).
template <typename T>
Tensor4<T> channelwise_mul(const Tensor4<T>& x, const Tensor4<T>& weight) {
    if (weight.n != x.n || weight.c != x.c || weight.h != 1 || weight.w != 1)
        throw ShapeMismatch("channelwise_mul: weight must be (n, c, 1, 1) matching x");
    Tensor4<T> out(x.n, x.c, x.h, x.w);
    std::size_t plane = static_cast<std::size_t>(x.h) * x.w;
    for (int b = 0; b < x.n; ++b)
        for (int j = 0; j < x.c; ++j) {
            T s = weight.at(b, j, 0, 0);
            const T* src = x.data.data() + (static_cast<std::size_t>(b) * x.c + j) * plane;
            T* dst = out.data.data() + (static_cast<std::size_t>(b) * x.c + j) * plane;
            for (std::size_t i = 0; i < plane; ++i) dst[i] = src[i] * s;
        }
    return out;
}

// --- flat binary serialization ---------------------------------------------
// 16-byte header of four little-endian uint32 dims (n, c, h, w), then
// n*c*h*w little-endian float32 values in layout order.

inline void write_u32_le(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32_le(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw DataFormat("tensor read: truncated header");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

template <typename T>
void write_tensor(std::ostream& os, const Tensor4<T>& t) {
    write_u32_le(os, static_cast<std::uint32_t>(t.n));
    write_u32_le(os, static_cast<std::uint32_t>(t.c));
    write_u32_le(os, static_cast<std::uint32_t>(t.h));
    write_u32_le(os, static_cast<std::uint32_t>(t.w));
    for (T v : t.data) {
        float f = static_cast<float>(v);
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        write_u32_le(os, bits);
    }
}

template <typename T>
Tensor4<T> read_tensor(std::istream& is) {
    std::uint32_t n = read_u32_le(is), c = read_u32_le(is);
    std::uint32_t h = read_u32_le(is), w = read_u32_le(is);
    if (n < 1 || c < 1 || h < 1 || w < 1) throw DataFormat("tensor read: zero dimension");
    Tensor4<T> t(static_cast<int>(n), static_cast<int>(c), static_cast<int>(h), static_cast<int>(w));
    for (std::size_t i = 0; i < t.size(); ++i) {
        std::uint32_t bits = read_u32_le(is);
        float f;
        std::memcpy(&f, &bits, 4);
        t.data[i] = static_cast<T>(f);
    }
    return t;
}

// --- small helpers used throughout -----------------------------------------

template <typename T>
Tensor4<T> random_tensor(int n, int c, int h, int w, std::mt19937& rng, T scale = T(1)) {
    Tensor4<T> t(n, c, h, w);
    std::normal_distribution<double> dist(0.0, 1.0);
    for (auto& v : t.data) v = static_cast<T>(dist(rng)) * scale;
    return t;
}

template <typename T>
double max_abs_diff(const Tensor4<T>& a, const Tensor4<T>& b) {
    if (!a.same_shape(b)) throw ShapeMismatch("max_abs_diff: shape mismatch");
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a.data[i]) - static_cast<double>(b.data[i])));
    return m;
}

}  // namespace embanet
