#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "embanet/tensor.hpp"

namespace embanet {

/// Geometry of a 2-D convolution. Weight layout is (c_out, c_in/groups, k, k).
struct ConvSpec {
    int c_in = 0;
    int c_out = 0;
    int k = 1;
    int stride = 1;
    int pad = 0;
    int groups = 1;

    void validate() const {
        if (k < 1 || k % 2 == 0) throw InvalidKernel("conv: kernel must be odd and positive");
        if (stride < 1 || pad < 0 || groups < 1) throw ShapeMismatch("conv: bad stride/pad/groups");
        if (c_in % groups != 0 || c_out % groups != 0)
            throw GroupMismatch("conv: groups must divide c_in and c_out");
    }
    int out_dim(int in) const { return (in + 2 * pad - k) / stride + 1; }
};

inline int same_pad(int k) { return k / 2; }

template <typename T>
void check_conv_input(const Tensor4<T>& x, const Tensor4<T>& weight, const ConvSpec& p) {
    p.validate();
    if (x.c != p.c_in) throw ShapeMismatch("conv: input channel count mismatch");
    if (weight.n != p.c_out || weight.c != p.c_in / p.groups || weight.h != p.k || weight.w != p.k)
        throw ShapeMismatch("conv: weight shape mismatch");
    if (p.out_dim(x.h) < 1 || p.out_dim(x.w) < 1)
        throw ShapeMismatch("conv: output would be empty");
}

/// Direct nested-loop convolution. The correctness oracle: the im2col path
/// below must match it bitwise at 64-bit (identical accumulation order).
template <typename T>
Tensor4<T> conv2d_reference(const Tensor4<T>& x, const Tensor4<T>& weight, const ConvSpec& p,
                            const std::vector<T>* bias = nullptr) {
    check_conv_input(x, weight, p);
    int oh = p.out_dim(x.h), ow = p.out_dim(x.w);
    int cig = p.c_in / p.groups, cog = p.c_out / p.groups;
    Tensor4<T> out(x.n, p.c_out, oh, ow);
    for (int b = 0; b < x.n; ++b)
        for (int co = 0; co < p.c_out; ++co) {
            int g = co / cog;
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    T acc = bias ? (*bias)[co] : T(0);
                    for (int ci = 0; ci < cig; ++ci)
                        for (int ky = 0; ky < p.k; ++ky) {
                            int iy = oy * p.stride + ky - p.pad;
                            if (iy < 0 || iy >= x.h) continue;
                            for (int kx = 0; kx < p.k; ++kx) {
                                int ix = ox * p.stride + kx - p.pad;
                                if (ix < 0 || ix >= x.w) continue;
                                acc += weight.at(co, ci, ky, kx) * x.at(b, g * cig + ci, iy, ix);
                            }
                        }
                    out.at(b, co, oy, ox) = acc;
                }
        }
    return out;
}

namespace detail {

// Column buffer for one (sample, group): rows indexed by (ci, ky, kx), columns
// by output position. Padding contributes explicit zeros, which keeps the
// accumulation order identical to the reference loop.
template <typename T>
void im2col(const Tensor4<T>& x, int b, int c0, int cig, const ConvSpec& p, int oh, int ow,
            std::vector<T>& col) {
    int cols = oh * ow;
    col.assign(static_cast<std::size_t>(cig) * p.k * p.k * cols, T(0));
    std::size_t r = 0;
    for (int ci = 0; ci < cig; ++ci)
        for (int ky = 0; ky < p.k; ++ky)
            for (int kx = 0; kx < p.k; ++kx, ++r) {
                T* dst = col.data() + r * cols;
                for (int oy = 0; oy < oh; ++oy) {
                    int iy = oy * p.stride + ky - p.pad;
                    if (iy < 0 || iy >= x.h) continue;
                    for (int ox = 0; ox < ow; ++ox) {
                        int ix = ox * p.stride + kx - p.pad;
                        if (ix < 0 || ix >= x.w) continue;
                        dst[oy * ow + ox] = x.at(b, c0 + ci, iy, ix);
                    }
                }
            }
}

}  // namespace detail

/// im2col + matrix-product convolution; the default forward path.
template <typename T>
Tensor4<T> conv2d(const Tensor4<T>& x, const Tensor4<T>& weight, const ConvSpec& p,
                  const std::vector<T>* bias = nullptr) {
    check_conv_input(x, weight, p);
    int oh = p.out_dim(x.h), ow = p.out_dim(x.w);
    int cig = p.c_in / p.groups, cog = p.c_out / p.groups;
    int cols = oh * ow;
    int rows = cig * p.k * p.k;
    Tensor4<T> out(x.n, p.c_out, oh, ow);
    parallel_for(x.n, [&](std::int64_t b) {
        std::vector<T> col;
        for (int g = 0; g < p.groups; ++g) {
            detail::im2col(x, static_cast<int>(b), g * cig, cig, p, oh, ow, col);
            for (int oc = 0; oc < cog; ++oc) {
                int co = g * cog + oc;
                const T* wrow = weight.data.data() + static_cast<std::size_t>(co) * rows;
                T* orow = out.data.data() + (static_cast<std::size_t>(b) * p.c_out + co) * cols;
                if (bias) {
                    for (int i = 0; i < cols; ++i) orow[i] = (*bias)[co];
                }
                for (int r = 0; r < rows; ++r) {
                    T wv = wrow[r];
                    const T* crow = col.data() + static_cast<std::size_t>(r) * cols;
                    for (int i = 0; i < cols; ++i) orow[i] += wv * crow[i];
                }
            }
        }
    });
    return out;
}

/// Gradient of conv2d w.r.t. its input.
template <typename T>
Tensor4<T> conv2d_backward_input(const Tensor4<T>& grad_out, const Tensor4<T>& weight,
                                 const ConvSpec& p, int in_h, int in_w) {
    int oh = grad_out.h, ow = grad_out.w;
    int cig = p.c_in / p.groups, cog = p.c_out / p.groups;
    Tensor4<T> gx(grad_out.n, p.c_in, in_h, in_w);
    parallel_for(grad_out.n, [&](std::int64_t b) {
        for (int co = 0; co < p.c_out; ++co) {
            int g = co / cog;
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    T go = grad_out.at(static_cast<int>(b), co, oy, ox);
                    if (go == T(0)) continue;
                    for (int ci = 0; ci < cig; ++ci)
                        for (int ky = 0; ky < p.k; ++ky) {
                            int iy = oy * p.stride + ky - p.pad;
                            if (iy < 0 || iy >= in_h) continue;
                            for (int kx = 0; kx < p.k; ++kx) {
                                int ix = ox * p.stride + kx - p.pad;
                                if (ix < 0 || ix >= in_w) continue;
                                gx.at(static_cast<int>(b), g * cig + ci, iy, ix) +=
                                    go * weight.at(co, ci, ky, kx);
                            }
                        }
                }
        }
    });
    return gx;
}

/// Gradient of conv2d w.r.t. its weight (and bias when present).
template <typename T>
Tensor4<T> conv2d_backward_weight(const Tensor4<T>& x, const Tensor4<T>& grad_out,
                                  const ConvSpec& p, std::vector<T>* grad_bias = nullptr) {
    int oh = grad_out.h, ow = grad_out.w;
    int cig = p.c_in / p.groups, cog = p.c_out / p.groups;
    Tensor4<T> gw(p.c_out, cig, p.k, p.k);
    if (grad_bias) grad_bias->assign(p.c_out, T(0));
    for (int b = 0; b < x.n; ++b)
        for (int co = 0; co < p.c_out; ++co) {
            int g = co / cog;
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    T go = grad_out.at(b, co, oy, ox);
                    if (grad_bias) (*grad_bias)[co] += go;
                    if (go == T(0)) continue;
                    for (int ci = 0; ci < cig; ++ci)
                        for (int ky = 0; ky < p.k; ++ky) {
                            int iy = oy * p.stride + ky - p.pad;
                            if (iy < 0 || iy >= x.h) continue;
                            for (int kx = 0; kx < p.k; ++kx) {
                                int ix = ox * p.stride + kx - p.pad;
                                if (ix < 0 || ix >= x.w) continue;
                                gw.at(co, ci, ky, kx) += go * x.at(b, g * cig + ci, iy, ix);
                            }
                        }
                }
        }
    return gw;
}

/// Spatial mean per (sample, channel); output shape (n, c, 1, 1).
template <typename T>
Tensor4<T> global_avg_pool(const Tensor4<T>& x) {
    Tensor4<T> out(x.n, x.c, 1, 1);
    T inv = T(1) / static_cast<T>(x.h * x.w);
    std::size_t plane = static_cast<std::size_t>(x.h) * x.w;
    for (int b = 0; b < x.n; ++b)
        for (int j = 0; j < x.c; ++j) {
            const T* src = x.data.data() + (static_cast<std::size_t>(b) * x.c + j) * plane;
            T acc = 0;
            for (std::size_t i = 0; i < plane; ++i) acc += src[i];
            out.at(b, j, 0, 0) = acc * inv;
        }
    return out;
}

/// Affine map on (n, f) inputs modeled as (n, f, 1, 1) tensors.
/// weight is (f_out, f_in, 1, 1), bias optional length f_out.
template <typename T>
Tensor4<T> fully_connected(const Tensor4<T>& x, const Tensor4<T>& weight,
                           const std::vector<T>* bias = nullptr) {
    if (x.h != 1 || x.w != 1) throw ShapeMismatch("fully_connected: input must be (n, f, 1, 1)");
    if (weight.c != x.c || weight.h != 1 || weight.w != 1)
        throw ShapeMismatch("fully_connected: weight inner dim mismatch");
    Tensor4<T> out(x.n, weight.n, 1, 1);
    for (int b = 0; b < x.n; ++b)
        for (int o = 0; o < weight.n; ++o) {
            T acc = bias ? (*bias)[o] : T(0);
            for (int i = 0; i < x.c; ++i) acc += weight.at(o, i, 0, 0) * x.at(b, i, 0, 0);
            out.at(b, o, 0, 0) = acc;
        }
    return out;
}

enum class Activation { Relu, Sigmoid };

template <typename T>
Tensor4<T> activation(const Tensor4<T>& x, Activation kind) {
    Tensor4<T> out(x.n, x.c, x.h, x.w);
    if (kind == Activation::Relu) {
        for (std::size_t i = 0; i < x.size(); ++i) out.data[i] = x.data[i] > T(0) ? x.data[i] : T(0);
    } else {
        for (std::size_t i = 0; i < x.size(); ++i)
            out.data[i] = T(1) / (T(1) + std::exp(-x.data[i]));
    }
    return out;
}

/// Numerically stable softmax along one axis (0=n, 1=c, 2=h, 3=w).
template <typename T>
Tensor4<T> softmax_axis(const Tensor4<T>& x, int axis) {
    if (axis < 0 || axis > 3) throw ShapeMismatch("softmax_axis: axis out of range");
    int dims[4] = {x.n, x.c, x.h, x.w};
    int len = dims[axis];
    Tensor4<T> out(x.n, x.c, x.h, x.w);
    auto run = [&](auto&& idx_fn) {
        T mx = -std::numeric_limits<T>::infinity();
        for (int i = 0; i < len; ++i) mx = std::max(mx, x.data[idx_fn(i)]);
        T sum = 0;
        for (int i = 0; i < len; ++i) {
            T e = std::exp(x.data[idx_fn(i)] - mx);
            out.data[idx_fn(i)] = e;
            sum += e;
        }
        for (int i = 0; i < len; ++i) out.data[idx_fn(i)] /= sum;
    };
    int outer[3];
    int oi = 0;
    for (int d = 0; d < 4; ++d)
        if (d != axis) outer[oi++] = dims[d];
    for (int a = 0; a < outer[0]; ++a)
        for (int b = 0; b < outer[1]; ++b)
            for (int c = 0; c < outer[2]; ++c) {
                run([&](int i) {
                    int v[4];
                    int k = 0;
                    for (int d = 0; d < 4; ++d)
                        if (d != axis) v[d] = (k == 0 ? a : (k == 1 ? b : c)), ++k;
                    v[axis] = i;
                    return x.index(v[0], v[1], v[2], v[3]);
                });
            }
    return out;
}

/// Per-channel batch norm parameters plus running statistics.
template <typename T>
struct BatchNormParams {
    std::vector<T> gamma, beta;
    std::vector<T> running_mean, running_var;
    T epsilon = T(1e-5);
    T momentum = T(0.1);

    explicit BatchNormParams(int c = 0)
        : gamma(c, T(1)), beta(c, T(0)), running_mean(c, T(0)), running_var(c, T(1)) {}
    int channels() const { return static_cast<int>(gamma.size()); }
};

enum class BatchNormMode { Train, Infer };

/// Batch statistics from the current batch when present (train mode).
template <typename T>
struct BatchNormStats {
    std::vector<T> mean, var;  // biased variance
};

template <typename T>
Tensor4<T> batchnorm(const Tensor4<T>& x, BatchNormParams<T>& p, BatchNormMode mode,
                     BatchNormStats<T>* stats_out = nullptr) {
    if (p.channels() != x.c) throw ShapeMismatch("batchnorm: channel count mismatch");
    Tensor4<T> out(x.n, x.c, x.h, x.w);
    std::size_t plane = static_cast<std::size_t>(x.h) * x.w;
    if (mode == BatchNormMode::Infer) {
        for (int b = 0; b < x.n; ++b)
            for (int j = 0; j < x.c; ++j) {
                T inv = T(1) / std::sqrt(p.running_var[j] + p.epsilon);
                T scale = p.gamma[j] * inv;
                T shift = p.beta[j] - p.running_mean[j] * scale;
                const T* src = x.data.data() + (static_cast<std::size_t>(b) * x.c + j) * plane;
                T* dst = out.data.data() + (static_cast<std::size_t>(b) * x.c + j) * plane;
                for (std::size_t i = 0; i < plane; ++i) dst[i] = src[i] * scale + shift;
            }
        return out;
    }
    std::size_t count = static_cast<std::size_t>(x.n) * plane;
    if (count <= 1) throw ZeroVariance("batchnorm: train mode needs more than one value per channel");
    std::vector<T> mean(x.c, T(0)), var(x.c, T(0));
    for (int j = 0; j < x.c; ++j) {
        T acc = 0;
        for (int b = 0; b < x.n; ++b) {
            const T* src = x.data.data() + (static_cast<std::size_t>(b) * x.c + j) * plane;
            for (std::size_t i = 0; i < plane; ++i) acc += src[i];
        }
        mean[j] = acc / static_cast<T>(count);
        T vacc = 0;
        for (int b = 0; b < x.n; ++b) {
            const T* src = x.data.data() + (static_cast<std::size_t>(b) * x.c + j) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
                T d = src[i] - mean[j];
                vacc += d * d;
            }
        }
        var[j] = vacc / static_cast<T>(count);
    }
    for (int b = 0; b < x.n; ++b)
        for (int j = 0; j < x.c; ++j) {
            T inv = T(1) / std::sqrt(var[j] + p.epsilon);
            const T* src = x.data.data() + (static_cast<std::size_t>(b) * x.c + j) * plane;
            T* dst = out.data.data() + (static_cast<std::size_t>(b) * x.c + j) * plane;
            for (std::size_t i = 0; i < plane; ++i)
                dst[i] = (src[i] - mean[j]) * inv * p.gamma[j] + p.beta[j];
        }
    for (int j = 0; j < x.c; ++j) {
        p.running_mean[j] = (T(1) - p.momentum) * p.running_mean[j] + p.momentum * mean[j];
        p.running_var[j] = (T(1) - p.momentum) * p.running_var[j] + p.momentum * var[j];
    }
    if (stats_out) {
        stats_out->mean = std::move(mean);
        stats_out->var = std::move(var);
    }
    return out;
}

/// Windowed maximum with -inf padding. argmax_out, when given, receives the
/// flat input index chosen per output element (first maximum wins).
template <typename T>
Tensor4<T> max_pool(const Tensor4<T>& x, int k, int stride, int pad,
                    std::vector<std::size_t>* argmax_out = nullptr) {
    if (k < 1 || stride < 1 || pad < 0) throw ShapeMismatch("max_pool: bad window");
    int oh = (x.h + 2 * pad - k) / stride + 1;
    int ow = (x.w + 2 * pad - k) / stride + 1;
    if (oh < 1 || ow < 1) throw ShapeMismatch("max_pool: window does not fit");
    Tensor4<T> out(x.n, x.c, oh, ow);
    if (argmax_out) argmax_out->assign(out.size(), 0);
    for (int b = 0; b < x.n; ++b)
        for (int j = 0; j < x.c; ++j)
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    T best = -std::numeric_limits<T>::infinity();
                    std::size_t best_idx = 0;
                    for (int ky = 0; ky < k; ++ky) {
                        int iy = oy * stride + ky - pad;
                        if (iy < 0 || iy >= x.h) continue;
                        for (int kx = 0; kx < k; ++kx) {
                            int ix = ox * stride + kx - pad;
                            if (ix < 0 || ix >= x.w) continue;
                            T v = x.at(b, j, iy, ix);
                            if (v > best) {
                                best = v;
                                best_idx = x.index(b, j, iy, ix);
                            }
                        }
                    }
                    out.at(b, j, oy, ox) = best;
                    if (argmax_out) (*argmax_out)[out.index(b, j, oy, ox)] = best_idx;
                }
    return out;
}

}  // namespace embanet
