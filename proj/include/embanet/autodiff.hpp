#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "embanet/nn_ops.hpp"

namespace embanet {

enum class OpKind {
    Leaf,
    Add,
    Mul,
    Scale,
    Relu,
    Sigmoid,
    Conv2d,
    GlobalAvgPool,
    FullyConnected,
    SoftmaxAxis,
    SoftmaxGroups,
    BatchNormTrain,
    BatchNormInfer,
    MaxPool,
    SliceChannels,
    ConcatChannels,
    ChannelwiseMul,
    Eca1d,
    LabelSmoothCE,
    SumAll,
};

/// Named parameter tensors shared across forward passes. Running statistics
/// and other non-trainable buffers carry trainable=false.
template <typename T>
struct ParameterStore {
    struct Entry {
        std::string name;
        Tensor4<T> value;
        bool trainable = true;
    };
    std::vector<Entry> entries;

    int add(std::string name, Tensor4<T> value, bool trainable = true) {
        entries.push_back({std::move(name), std::move(value), trainable});
        return static_cast<int>(entries.size()) - 1;
    }
    Entry& operator[](int id) { return entries[id]; }
    const Entry& operator[](int id) const { return entries[id]; }
    int size() const { return static_cast<int>(entries.size()); }
};

/// Per-parameter gradients keyed by parameter id. Parameters not reachable
/// from the loss hold zero tensors.
template <typename T>
struct GradientMap {
    std::vector<Tensor4<T>> grads;
};

/// Define-by-run reverse-mode tape. Forward evaluation is eager; each node
/// stores the values its backward rule needs. The tape is a DAG by
/// construction: node inputs always precede the node.
template <typename T>
class Tape {
  public:
    using Id = int;

    struct Node {
        OpKind op = OpKind::Leaf;
        std::vector<Id> inputs;
        Tensor4<T> value;
        Tensor4<T> grad;  // empty until touched by backward
        int param_id = -1;
        std::function<void(Tape&, Node&)> back;
    };

    Id leaf(Tensor4<T> v, int param_id = -1) {
        Node n;
        n.value = std::move(v);
        n.param_id = param_id;
        nodes_.push_back(std::move(n));
        return last();
    }

    const Tensor4<T>& value(Id id) const { return nodes_[id].value; }
    const Tensor4<T>& gradient(Id id) const { return nodes_[id].grad; }
    std::size_t size() const { return nodes_.size(); }

    Id add(Id a, Id b) {
        const auto& xa = value(a);
        const auto& xb = value(b);
        if (!xa.same_shape(xb)) throw ShapeMismatch("add: shape mismatch");
        Tensor4<T> out = xa;
        for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += xb.data[i];
        return push(OpKind::Add, {a, b}, std::move(out), [](Tape& t, Node& n) {
            t.accumulate(n.inputs[0], n.grad);
            t.accumulate(n.inputs[1], n.grad);
        });
    }

    Id mul(Id a, Id b) {
        const auto& xa = value(a);
        const auto& xb = value(b);
        if (!xa.same_shape(xb)) throw ShapeMismatch("mul: shape mismatch");
        Tensor4<T> out = xa;
        for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= xb.data[i];
        return push(OpKind::Mul, {a, b}, std::move(out), [](Tape& t, Node& n) {
            Tensor4<T> ga = n.grad, gb = n.grad;
            const auto& va = t.value(n.inputs[0]);
            const auto& vb = t.value(n.inputs[1]);
            for (std::size_t i = 0; i < ga.size(); ++i) {
                ga.data[i] *= vb.data[i];
                gb.data[i] *= va.data[i];
            }
            t.accumulate(n.inputs[0], ga);
            t.accumulate(n.inputs[1], gb);
        });
    }

    Id scale(Id a, T alpha) {
        Tensor4<T> out = value(a);
        for (auto& v : out.data) v *= alpha;
        return push(OpKind::Scale, {a}, std::move(out), [alpha](Tape& t, Node& n) {
            Tensor4<T> g = n.grad;
            for (auto& v : g.data) v *= alpha;
            t.accumulate(n.inputs[0], g);
        });
    }

    Id relu(Id a) {
        Tensor4<T> out = activation(value(a), Activation::Relu);
        return push(OpKind::Relu, {a}, std::move(out), [](Tape& t, Node& n) {
            // subgradient at exactly 0 is 0
            Tensor4<T> g = n.grad;
            const auto& x = t.value(n.inputs[0]);
            for (std::size_t i = 0; i < g.size(); ++i)
                if (x.data[i] <= T(0)) g.data[i] = T(0);
            t.accumulate(n.inputs[0], g);
        });
    }

    Id sigmoid(Id a) {
        Tensor4<T> out = activation(value(a), Activation::Sigmoid);
        return push(OpKind::Sigmoid, {a}, std::move(out), [](Tape& t, Node& n) {
            Tensor4<T> g = n.grad;
            for (std::size_t i = 0; i < g.size(); ++i) {
                T y = n.value.data[i];
                g.data[i] *= y * (T(1) - y);
            }
            t.accumulate(n.inputs[0], g);
        });
    }

    Id conv2d(Id x, Id w, const ConvSpec& p) {
        Tensor4<T> out = embanet::conv2d(value(x), value(w), p);
        int in_h = value(x).h, in_w = value(x).w;
        return push(OpKind::Conv2d, {x, w}, std::move(out), [p, in_h, in_w](Tape& t, Node& n) {
            t.accumulate(n.inputs[0],
                         conv2d_backward_input(n.grad, t.value(n.inputs[1]), p, in_h, in_w));
            t.accumulate(n.inputs[1], conv2d_backward_weight(t.value(n.inputs[0]), n.grad, p));
        });
    }

    Id global_avg_pool(Id x) {
        Tensor4<T> out = embanet::global_avg_pool(value(x));
        return push(OpKind::GlobalAvgPool, {x}, std::move(out), [](Tape& t, Node& n) {
            const auto& xin = t.value(n.inputs[0]);
            Tensor4<T> g(xin.n, xin.c, xin.h, xin.w);
            T inv = T(1) / static_cast<T>(xin.h * xin.w);
            for (int b = 0; b < xin.n; ++b)
                for (int j = 0; j < xin.c; ++j) {
                    T gv = n.grad.at(b, j, 0, 0) * inv;
                    for (int y = 0; y < xin.h; ++y)
                        for (int xw = 0; xw < xin.w; ++xw) g.at(b, j, y, xw) = gv;
                }
            t.accumulate(n.inputs[0], g);
        });
    }

    /// x: (n, f, 1, 1), w: (f_out, f, 1, 1), optional bias: (1, f_out, 1, 1).
    Id fully_connected(Id x, Id w, Id bias = -1) {
        const std::vector<T>* bp = nullptr;
        std::vector<T> bvec;
        if (bias >= 0) {
            bvec = value(bias).data;
            bp = &bvec;
        }
        Tensor4<T> out = embanet::fully_connected(value(x), value(w), bp);
        std::vector<Id> ins = {x, w};
        if (bias >= 0) ins.push_back(bias);
        return push(OpKind::FullyConnected, std::move(ins), std::move(out), [](Tape& t, Node& n) {
            const auto& xin = t.value(n.inputs[0]);
            const auto& win = t.value(n.inputs[1]);
            Tensor4<T> gx(xin.n, xin.c, 1, 1);
            Tensor4<T> gw(win.n, win.c, 1, 1);
            for (int b = 0; b < xin.n; ++b)
                for (int o = 0; o < win.n; ++o) {
                    T go = n.grad.at(b, o, 0, 0);
                    for (int i = 0; i < xin.c; ++i) {
                        gx.at(b, i, 0, 0) += go * win.at(o, i, 0, 0);
                        gw.at(o, i, 0, 0) += go * xin.at(b, i, 0, 0);
                    }
                }
            t.accumulate(n.inputs[0], gx);
            t.accumulate(n.inputs[1], gw);
            if (n.inputs.size() == 3) {
                Tensor4<T> gb(1, win.n, 1, 1);
                for (int b = 0; b < xin.n; ++b)
                    for (int o = 0; o < win.n; ++o) gb.at(0, o, 0, 0) += n.grad.at(b, o, 0, 0);
                t.accumulate(n.inputs[2], gb);
            }
        });
    }

    Id softmax_axis(Id x, int axis) {
        Tensor4<T> out = embanet::softmax_axis(value(x), axis);
        return push(OpKind::SoftmaxAxis, {x}, std::move(out), [axis](Tape& t, Node& n) {
            // dx = y .* (dy - sum(y .* dy, axis))
            const auto& y = n.value;
            Tensor4<T> g = n.grad;
            int dims[4] = {y.n, y.c, y.h, y.w};
            int len = dims[axis];
            int outer[3];
            int oi = 0;
            for (int d = 0; d < 4; ++d)
                if (d != axis) outer[oi++] = dims[d];
            for (int a = 0; a < outer[0]; ++a)
                for (int b = 0; b < outer[1]; ++b)
                    for (int c = 0; c < outer[2]; ++c) {
                        auto at = [&](int i) {
                            int v[4];
                            int k = 0;
                            for (int d = 0; d < 4; ++d)
                                if (d != axis) {
                                    v[d] = (k == 0 ? a : (k == 1 ? b : c));
                                    ++k;
                                }
                            v[axis] = i;
                            return y.index(v[0], v[1], v[2], v[3]);
                        };
                        T dot = 0;
                        for (int i = 0; i < len; ++i) dot += y.data[at(i)] * n.grad.data[at(i)];
                        for (int i = 0; i < len; ++i)
                            g.data[at(i)] = y.data[at(i)] * (n.grad.data[at(i)] - dot);
                    }
            t.accumulate(n.inputs[0], g);
        });
    }

    /// x shaped (n, s*cp, 1, 1) viewed as s channel blocks of width cp;
    /// softmax runs across the s blocks at each (sample, slot) position.
    Id softmax_groups(Id x, int s) {
        const auto& xin = value(x);
        if (xin.h != 1 || xin.w != 1 || xin.c % s != 0)
            throw ShapeMismatch("softmax_groups: expected (n, s*cp, 1, 1)");
        int cp = xin.c / s;
        Tensor4<T> out(xin.n, xin.c, 1, 1);
        for (int b = 0; b < xin.n; ++b)
            for (int slot = 0; slot < cp; ++slot) {
                T mx = -std::numeric_limits<T>::infinity();
                for (int i = 0; i < s; ++i) mx = std::max(mx, xin.at(b, i * cp + slot, 0, 0));
                T sum = 0;
                for (int i = 0; i < s; ++i) {
                    T e = std::exp(xin.at(b, i * cp + slot, 0, 0) - mx);
                    out.at(b, i * cp + slot, 0, 0) = e;
                    sum += e;
                }
                for (int i = 0; i < s; ++i) out.at(b, i * cp + slot, 0, 0) /= sum;
            }
        return push(OpKind::SoftmaxGroups, {x}, std::move(out), [s, cp](Tape& t, Node& n) {
            const auto& y = n.value;
            Tensor4<T> g = n.grad;
            for (int b = 0; b < y.n; ++b)
                for (int slot = 0; slot < cp; ++slot) {
                    T dot = 0;
                    for (int i = 0; i < s; ++i) {
                        std::size_t idx = y.index(b, i * cp + slot, 0, 0);
                        dot += y.data[idx] * n.grad.data[idx];
                    }
                    for (int i = 0; i < s; ++i) {
                        std::size_t idx = y.index(b, i * cp + slot, 0, 0);
                        g.data[idx] = y.data[idx] * (n.grad.data[idx] - dot);
                    }
                }
            t.accumulate(n.inputs[0], g);
        });
    }

    /// gamma/beta: (1, c, 1, 1). Normalizes with batch statistics and updates
    /// the running stats in p as a side effect of the forward pass.
    Id batchnorm_train(Id x, Id gamma, Id beta, BatchNormParams<T>& p) {
        const auto& xin = value(x);
        BatchNormParams<T> local = p;
        local.gamma = value(gamma).data;
        local.beta = value(beta).data;
        BatchNormStats<T> stats;
        Tensor4<T> out = embanet::batchnorm(xin, local, BatchNormMode::Train, &stats);
        p.running_mean = local.running_mean;
        p.running_var = local.running_var;
        T eps = p.epsilon;
        return push(OpKind::BatchNormTrain, {x, gamma, beta}, std::move(out),
                    [stats, eps](Tape& t, Node& n) {
                        const auto& xin2 = t.value(n.inputs[0]);
                        const auto& gam = t.value(n.inputs[1]);
                        int C = xin2.c;
                        std::size_t plane = static_cast<std::size_t>(xin2.h) * xin2.w;
                        T N = static_cast<T>(xin2.n * xin2.h * xin2.w);
                        Tensor4<T> gx(xin2.n, xin2.c, xin2.h, xin2.w);
                        Tensor4<T> gg(1, C, 1, 1), gb(1, C, 1, 1);
                        for (int j = 0; j < C; ++j) {
                            T inv = T(1) / std::sqrt(stats.var[j] + eps);
                            T sum_gy = 0, sum_gy_xhat = 0;
                            for (int b = 0; b < xin2.n; ++b) {
                                const T* xp = xin2.data.data() +
                                              (static_cast<std::size_t>(b) * C + j) * plane;
                                const T* gp = n.grad.data.data() +
                                              (static_cast<std::size_t>(b) * C + j) * plane;
                                for (std::size_t i = 0; i < plane; ++i) {
                                    T xhat = (xp[i] - stats.mean[j]) * inv;
                                    sum_gy += gp[i];
                                    sum_gy_xhat += gp[i] * xhat;
                                }
                            }
                            gg.at(0, j, 0, 0) = sum_gy_xhat;
                            gb.at(0, j, 0, 0) = sum_gy;
                            T scale = gam.at(0, j, 0, 0) * inv / N;
                            for (int b = 0; b < xin2.n; ++b) {
                                const T* xp = xin2.data.data() +
                                              (static_cast<std::size_t>(b) * C + j) * plane;
                                const T* gp = n.grad.data.data() +
                                              (static_cast<std::size_t>(b) * C + j) * plane;
                                T* op = gx.data.data() +
                                        (static_cast<std::size_t>(b) * C + j) * plane;
                                for (std::size_t i = 0; i < plane; ++i) {
                                    T xhat = (xp[i] - stats.mean[j]) * inv;
                                    op[i] = scale * (N * gp[i] - sum_gy - xhat * sum_gy_xhat);
                                }
                            }
                        }
                        t.accumulate(n.inputs[0], gx);
                        t.accumulate(n.inputs[1], gg);
                        t.accumulate(n.inputs[2], gb);
                    });
    }

    Id batchnorm_infer(Id x, Id gamma, Id beta, const BatchNormParams<T>& p) {
        const auto& xin = value(x);
        if (p.channels() != xin.c) throw ShapeMismatch("batchnorm: channel count mismatch");
        int C = xin.c;
        std::vector<T> inv(C), mean = p.running_mean;
        for (int j = 0; j < C; ++j) inv[j] = T(1) / std::sqrt(p.running_var[j] + p.epsilon);
        Tensor4<T> out(xin.n, xin.c, xin.h, xin.w);
        std::size_t plane = static_cast<std::size_t>(xin.h) * xin.w;
        const auto& gam = value(gamma);
        const auto& bet = value(beta);
        for (int b = 0; b < xin.n; ++b)
            for (int j = 0; j < C; ++j) {
                T sc = gam.at(0, j, 0, 0) * inv[j];
                T sh = bet.at(0, j, 0, 0) - mean[j] * sc;
                const T* src = xin.data.data() + (static_cast<std::size_t>(b) * C + j) * plane;
                T* dst = out.data.data() + (static_cast<std::size_t>(b) * C + j) * plane;
                for (std::size_t i = 0; i < plane; ++i) dst[i] = src[i] * sc + sh;
            }
        return push(OpKind::BatchNormInfer, {x, gamma, beta}, std::move(out),
                    [inv, mean](Tape& t, Node& n) {
                        const auto& xin2 = t.value(n.inputs[0]);
                        const auto& gam = t.value(n.inputs[1]);
                        int C = xin2.c;
                        std::size_t plane = static_cast<std::size_t>(xin2.h) * xin2.w;
                        Tensor4<T> gx(xin2.n, xin2.c, xin2.h, xin2.w);
                        Tensor4<T> gg(1, C, 1, 1), gb(1, C, 1, 1);
                        for (int j = 0; j < C; ++j) {
                            T sum_gy = 0, sum_gy_xhat = 0;
                            T sc = gam.at(0, j, 0, 0) * inv[j];
                            for (int b = 0; b < xin2.n; ++b) {
                                const T* xp = xin2.data.data() +
                                              (static_cast<std::size_t>(b) * C + j) * plane;
                                const T* gp = n.grad.data.data() +
                                              (static_cast<std::size_t>(b) * C + j) * plane;
                                T* op = gx.data.data() +
                                        (static_cast<std::size_t>(b) * C + j) * plane;
                                for (std::size_t i = 0; i < plane; ++i) {
                                    sum_gy += gp[i];
                                    sum_gy_xhat += gp[i] * (xp[i] - mean[j]) * inv[j];
                                    op[i] = gp[i] * sc;
                                }
                            }
                            gg.at(0, j, 0, 0) = sum_gy_xhat;
                            gb.at(0, j, 0, 0) = sum_gy;
                        }
                        t.accumulate(n.inputs[0], gx);
                        t.accumulate(n.inputs[1], gg);
                        t.accumulate(n.inputs[2], gb);
                    });
    }

    Id max_pool(Id x, int k, int stride, int pad) {
        std::vector<std::size_t> argmax;
        Tensor4<T> out = embanet::max_pool(value(x), k, stride, pad, &argmax);
        return push(OpKind::MaxPool, {x}, std::move(out), [argmax](Tape& t, Node& n) {
            const auto& xin = t.value(n.inputs[0]);
            Tensor4<T> g(xin.n, xin.c, xin.h, xin.w);
            for (std::size_t i = 0; i < argmax.size(); ++i) g.data[argmax[i]] += n.grad.data[i];
            t.accumulate(n.inputs[0], g);
        });
    }

    Id slice_channels(Id x, int c0, int len) {
        const auto& xin = value(x);
        if (c0 < 0 || len < 1 || c0 + len > xin.c)
            throw ShapeMismatch("slice_channels: range out of bounds");
        Tensor4<T> out(xin.n, len, xin.h, xin.w);
        std::size_t plane = static_cast<std::size_t>(xin.h) * xin.w;
        for (int b = 0; b < xin.n; ++b) {
            const T* src = xin.data.data() + (static_cast<std::size_t>(b) * xin.c + c0) * plane;
            T* dst = out.data.data() + static_cast<std::size_t>(b) * len * plane;
            std::copy(src, src + static_cast<std::size_t>(len) * plane, dst);
        }
        return push(OpKind::SliceChannels, {x}, std::move(out), [c0, len](Tape& t, Node& n) {
            const auto& xin2 = t.value(n.inputs[0]);
            Tensor4<T> g(xin2.n, xin2.c, xin2.h, xin2.w);
            std::size_t plane = static_cast<std::size_t>(xin2.h) * xin2.w;
            for (int b = 0; b < xin2.n; ++b) {
                const T* src = n.grad.data.data() + static_cast<std::size_t>(b) * len * plane;
                T* dst = g.data.data() + (static_cast<std::size_t>(b) * xin2.c + c0) * plane;
                std::copy(src, src + static_cast<std::size_t>(len) * plane, dst);
            }
            t.accumulate(n.inputs[0], g);
        });
    }

    std::vector<Id> split_channels(Id x, int s) {
        const auto& xin = value(x);
        if (s < 1 || xin.c % s != 0)
            throw NonDivisibleChannels("split_channels: s does not divide c");
        std::vector<Id> parts;
        int cp = xin.c / s;
        for (int i = 0; i < s; ++i) parts.push_back(slice_channels(x, i * cp, cp));
        return parts;
    }

    Id concat_channels(const std::vector<Id>& parts) {
        if (parts.empty()) throw ShapeMismatch("concat_channels: no parts");
        ChannelSlices<T> slices;
        std::vector<int> widths;
        for (Id p : parts) {
            slices.parts.push_back(value(p));
            widths.push_back(value(p).c);
        }
        Tensor4<T> out = embanet::concat_channels(slices);
        return push(OpKind::ConcatChannels, std::vector<Id>(parts), std::move(out),
                    [widths](Tape& t, Node& n) {
                        int c0 = 0;
                        std::size_t plane = static_cast<std::size_t>(n.value.h) * n.value.w;
                        for (std::size_t pi = 0; pi < n.inputs.size(); ++pi) {
                            int len = widths[pi];
                            Tensor4<T> g(n.value.n, len, n.value.h, n.value.w);
                            for (int b = 0; b < n.value.n; ++b) {
                                const T* src = n.grad.data.data() +
                                               (static_cast<std::size_t>(b) * n.value.c + c0) * plane;
                                T* dst = g.data.data() + static_cast<std::size_t>(b) * len * plane;
                                std::copy(src, src + static_cast<std::size_t>(len) * plane, dst);
                            }
                            t.accumulate(n.inputs[pi], g);
                            c0 += len;
                        }
                    });
    }

    Id channelwise_mul(Id x, Id weight) {
        Tensor4<T> out = embanet::channelwise_mul(value(x), value(weight));
        return push(OpKind::ChannelwiseMul, {x, weight}, std::move(out), [](Tape& t, Node& n) {
            const auto& xin = t.value(n.inputs[0]);
            const auto& win = t.value(n.inputs[1]);
            Tensor4<T> gx(xin.n, xin.c, xin.h, xin.w);
            Tensor4<T> gw(win.n, win.c, 1, 1);
            std::size_t plane = static_cast<std::size_t>(xin.h) * xin.w;
            for (int b = 0; b < xin.n; ++b)
                for (int j = 0; j < xin.c; ++j) {
                    T s = win.at(b, j, 0, 0);
                    T acc = 0;
                    const T* xp = xin.data.data() + (static_cast<std::size_t>(b) * xin.c + j) * plane;
                    const T* gp = n.grad.data.data() +
                                  (static_cast<std::size_t>(b) * xin.c + j) * plane;
                    T* op = gx.data.data() + (static_cast<std::size_t>(b) * xin.c + j) * plane;
                    for (std::size_t i = 0; i < plane; ++i) {
                        op[i] = gp[i] * s;
                        acc += gp[i] * xp[i];
                    }
                    gw.at(b, j, 0, 0) = acc;
                }
            t.accumulate(n.inputs[0], gx);
            t.accumulate(n.inputs[1], gw);
        });
    }

    /// 1-D convolution across the channel axis of a pooled descriptor.
    /// x: (n, c, 1, 1), kernel: (1, k, 1, 1) with k odd; zero padding (k-1)/2.
    Id eca_conv1d(Id x, Id kernel) {
        const auto& xin = value(x);
        const auto& ker = value(kernel);
        if (xin.h != 1 || xin.w != 1) throw ShapeMismatch("eca_conv1d: input must be (n, c, 1, 1)");
        int k = ker.c;
        if (ker.n != 1 || ker.h != 1 || ker.w != 1 || k % 2 == 0)
            throw InvalidKernel("eca_conv1d: kernel must be (1, k, 1, 1) with odd k");
        int half = (k - 1) / 2;
        Tensor4<T> out(xin.n, xin.c, 1, 1);
        for (int b = 0; b < xin.n; ++b)
            for (int j = 0; j < xin.c; ++j) {
                T acc = 0;
                for (int t = 0; t < k; ++t) {
                    int src = j + t - half;
                    if (src < 0 || src >= xin.c) continue;
                    acc += ker.at(0, t, 0, 0) * xin.at(b, src, 0, 0);
                }
                out.at(b, j, 0, 0) = acc;
            }
        return push(OpKind::Eca1d, {x, kernel}, std::move(out), [k, half](Tape& t, Node& n) {
            const auto& xin2 = t.value(n.inputs[0]);
            const auto& ker2 = t.value(n.inputs[1]);
            Tensor4<T> gx(xin2.n, xin2.c, 1, 1);
            Tensor4<T> gk(1, k, 1, 1);
            for (int b = 0; b < xin2.n; ++b)
                for (int j = 0; j < xin2.c; ++j) {
                    T go = n.grad.at(b, j, 0, 0);
                    for (int tt = 0; tt < k; ++tt) {
                        int src = j + tt - half;
                        if (src < 0 || src >= xin2.c) continue;
                        gx.at(b, src, 0, 0) += go * ker2.at(0, tt, 0, 0);
                        gk.at(0, tt, 0, 0) += go * xin2.at(b, src, 0, 0);
                    }
                }
            t.accumulate(n.inputs[0], gx);
            t.accumulate(n.inputs[1], gk);
        });
    }

    /// Mean over the batch of cross-entropy against smoothed one-hot targets
    /// q = (1-eps)*onehot + eps/K. Output is a (1,1,1,1) scalar.
    Id label_smooth_ce(Id logits, std::vector<int> targets, double eps) {
        if (eps < 0.0 || eps >= 1.0) throw InvalidEpsilon("label_smooth_ce: eps must be in [0, 1)");
        const auto& z = value(logits);
        if (z.h != 1 || z.w != 1) throw ShapeMismatch("label_smooth_ce: logits must be (n, K, 1, 1)");
        if (static_cast<int>(targets.size()) != z.n)
            throw ShapeMismatch("label_smooth_ce: one target per row required");
        int K = z.c;
        for (int tgt : targets)
            if (tgt < 0 || tgt >= K) throw LabelOutOfRange("label_smooth_ce: target out of range");
        // log-softmax with max subtraction
        Tensor4<T> probs(z.n, K, 1, 1);
        T loss = 0;
        for (int b = 0; b < z.n; ++b) {
            T mx = -std::numeric_limits<T>::infinity();
            for (int j = 0; j < K; ++j) mx = std::max(mx, z.at(b, j, 0, 0));
            T sum = 0;
            for (int j = 0; j < K; ++j) sum += std::exp(z.at(b, j, 0, 0) - mx);
            T logz = std::log(sum) + mx;
            for (int j = 0; j < K; ++j) {
                T logp = z.at(b, j, 0, 0) - logz;
                probs.at(b, j, 0, 0) = std::exp(logp);
                T q = static_cast<T>(eps) / static_cast<T>(K) +
                      (j == targets[b] ? T(1) - static_cast<T>(eps) : T(0));
                loss -= q * logp;
            }
        }
        loss /= static_cast<T>(z.n);
        Tensor4<T> out(1, 1, 1, 1);
        out.at(0, 0, 0, 0) = loss;
        return push(OpKind::LabelSmoothCE, {logits}, std::move(out),
                    [probs, targets, eps, K](Tape& t, Node& n) {
                        const auto& z2 = t.value(n.inputs[0]);
                        T seed = n.grad.at(0, 0, 0, 0);
                        Tensor4<T> g(z2.n, z2.c, 1, 1);
                        T invn = T(1) / static_cast<T>(z2.n);
                        for (int b = 0; b < z2.n; ++b)
                            for (int j = 0; j < K; ++j) {
                                T q = static_cast<T>(eps) / static_cast<T>(K) +
                                      (j == targets[b] ? T(1) - static_cast<T>(eps) : T(0));
                                g.at(b, j, 0, 0) = seed * invn * (probs.at(b, j, 0, 0) - q);
                            }
                        t.accumulate(n.inputs[0], g);
                    });
    }

    Id sum_all(Id x) {
        const auto& xin = value(x);
        T acc = 0;
        for (T v : xin.data) acc += v;
        Tensor4<T> out(1, 1, 1, 1);
        out.at(0, 0, 0, 0) = acc;
        return push(OpKind::SumAll, {x}, std::move(out), [](Tape& t, Node& n) {
            const auto& xin2 = t.value(n.inputs[0]);
            Tensor4<T> g(xin2.n, xin2.c, xin2.h, xin2.w, n.grad.at(0, 0, 0, 0));
            t.accumulate(n.inputs[0], g);
        });
    }

    /// Reverse sweep from `out` with the given seed gradient. Fan-out
    /// accumulates by summation; nodes never touched keep empty gradients.
    void backward(Id out, const Tensor4<T>& seed) {
        if (!seed.same_shape(nodes_[out].value))
            throw ShapeMismatch("backward: seed shape must match output shape");
        nodes_[out].grad = seed;
        for (Id id = out; id >= 0; --id) {
            Node& n = nodes_[id];
            if (n.grad.size() == 0 || !n.back) continue;
            n.back(*this, n);
        }
    }

    /// Collects per-parameter gradients; unreachable parameters get zeros.
    GradientMap<T> parameter_gradients(const ParameterStore<T>& store) const {
        GradientMap<T> gm;
        gm.grads.reserve(store.size());
        for (int i = 0; i < store.size(); ++i) {
            const auto& v = store[i].value;
            gm.grads.emplace_back(v.n, v.c, v.h, v.w);
        }
        for (const Node& n : nodes_)
            if (n.param_id >= 0 && n.grad.size() > 0) {
                auto& dst = gm.grads[n.param_id];
                for (std::size_t i = 0; i < dst.size(); ++i) dst.data[i] += n.grad.data[i];
            }
        return gm;
    }

    void accumulate(Id id, const Tensor4<T>& g) {
        Node& n = nodes_[id];
        if (n.grad.size() == 0) {
            n.grad = g;
            return;
        }
        if (!n.grad.same_shape(g)) throw ShapeMismatch("accumulate: gradient shape mismatch");
        for (std::size_t i = 0; i < g.size(); ++i) n.grad.data[i] += g.data[i];
    }

  private:
    Id last() const { return static_cast<Id>(nodes_.size()) - 1; }

    Id push(OpKind op, std::vector<Id> inputs, Tensor4<T> value,
            std::function<void(Tape&, Node&)> back) {
        Node n;
        n.op = op;
        n.inputs = std::move(inputs);
        n.value = std::move(value);
        n.back = std::move(back);
        nodes_.push_back(std::move(n));
        return last();
    }

    std::vector<Node> nodes_;
};

/// Central-difference certification of a scalar-reduced graph function.
/// fn: (tape, input id) -> output id (any shape; the check sum-reduces it).
/// Returns max over input coordinates of
///   |analytic - central| / max(|analytic|, |central|, 1e-12).
template <typename Fn>
double finite_diff_check(Fn&& fn, const Tensor4<double>& x0, double eps) {
    if (eps <= 0) throw InvalidEpsilon("finite_diff_check: eps must be positive");
    Tape<double> tape;
    auto x = tape.leaf(x0);
    auto out = fn(tape, x);
    auto s = tape.sum_all(out);
    Tensor4<double> seed(1, 1, 1, 1, 1.0);
    tape.backward(s, seed);
    Tensor4<double> analytic = tape.gradient(x);
    if (analytic.size() == 0) analytic = Tensor4<double>(x0.n, x0.c, x0.h, x0.w);

    auto eval = [&](const Tensor4<double>& xv) {
        Tape<double> t2;
        auto xi = t2.leaf(xv);
        auto o = fn(t2, xi);
        auto ss = t2.sum_all(o);
        double v = t2.value(ss).at(0, 0, 0, 0);
        if (!std::isfinite(v)) throw NonFiniteValue("finite_diff_check: non-finite evaluation");
        return v;
    };

    double max_rel = 0;
    Tensor4<double> xp = x0;
    for (std::size_t i = 0; i < x0.size(); ++i) {
        double orig = xp.data[i];
        xp.data[i] = orig + eps;
        double fplus = eval(xp);
        xp.data[i] = orig - eps;
        double fminus = eval(xp);
        xp.data[i] = orig;
        double central = (fplus - fminus) / (2 * eps);
        double a = analytic.data[i];
        double denom = std::max({std::abs(a), std::abs(central), 1e-12});
        max_rel = std::max(max_rel, std::abs(a - central) / denom);
    }
    return max_rel;
}

}  // namespace embanet
