#pragma once

#include <random>

#include "embanet/autodiff.hpp"

namespace embanet {

enum class AttentionVariant { SE, ECA };

/// Pluggable channel-attention selector: SE with reduction ratio r, or ECA
/// with a 1-D kernel of odd size k.
struct AttentionKind {
    AttentionVariant variant = AttentionVariant::SE;
    int se_reduction = 16;
    int eca_kernel = 3;

    static AttentionKind se(int reduction = 16) { return {AttentionVariant::SE, reduction, 3}; }
    static AttentionKind eca(int kernel = 3) {
        if (kernel < 1 || kernel % 2 == 0) throw InvalidKernel("ECA kernel must be odd");
        return {AttentionVariant::ECA, 16, kernel};
    }
};

/// Hidden width of the SE bottleneck: floor(c/r) floored at 4 so tiny branch
/// widths keep a usable excitation layer.
inline int se_hidden_width(int channels, int reduction) {
    int h = channels / reduction;
    return h < 4 ? 4 : h;
}

/// SE excitation parameters, bias-free. w0: (hidden, c, 1, 1) squeezes,
/// w1: (c, hidden, 1, 1) expands.
template <typename T>
struct SEParams {
    Tensor4<T> w0, w1;

    SEParams() = default;
    SEParams(int channels, int reduction, std::mt19937& rng) {
        int hidden = se_hidden_width(channels, reduction);
        std::normal_distribution<double> dist(0.0, 1.0);
        w0 = Tensor4<T>(hidden, channels, 1, 1);
        w1 = Tensor4<T>(channels, hidden, 1, 1);
        double s0 = std::sqrt(2.0 / channels), s1 = std::sqrt(2.0 / hidden);
        for (auto& v : w0.data) v = static_cast<T>(dist(rng) * s0);
        for (auto& v : w1.data) v = static_cast<T>(dist(rng) * s1);
    }
};

/// Pre-sigmoid SE logit: W1 * relu(W0 * gap(x)); shape (n, c, 1, 1).
template <typename T>
typename Tape<T>::Id se_logits(Tape<T>& tape, typename Tape<T>::Id x, typename Tape<T>::Id w0,
                               typename Tape<T>::Id w1) {
    auto g = tape.global_avg_pool(x);
    auto h = tape.relu(tape.fully_connected(g, w0));
    return tape.fully_connected(h, w1);
}

/// w = sigmoid(W1 * relu(W0 * gap(x))); every output strictly in (0, 1).
template <typename T>
typename Tape<T>::Id se_weights(Tape<T>& tape, typename Tape<T>::Id x, typename Tape<T>::Id w0,
                                typename Tape<T>::Id w1) {
    return tape.sigmoid(se_logits(tape, x, w0, w1));
}

/// Pre-sigmoid ECA logit: 1-D convolution of gap(x) across channels.
template <typename T>
typename Tape<T>::Id eca_logits(Tape<T>& tape, typename Tape<T>::Id x,
                                typename Tape<T>::Id kernel) {
    return tape.eca_conv1d(tape.global_avg_pool(x), kernel);
}

template <typename T>
typename Tape<T>::Id eca_weights(Tape<T>& tape, typename Tape<T>::Id x,
                                 typename Tape<T>::Id kernel) {
    return tape.sigmoid(eca_logits(tape, x, kernel));
}

// --- eager wrappers ---------------------------------------------------------

template <typename T>
Tensor4<T> se_weights(const Tensor4<T>& x, const SEParams<T>& p) {
    Tape<T> tape;
    auto xi = tape.leaf(x);
    auto out = se_weights(tape, xi, tape.leaf(p.w0), tape.leaf(p.w1));
    return tape.value(out);
}

template <typename T>
Tensor4<T> eca_weights(const Tensor4<T>& x, const std::vector<T>& kernel) {
    Tensor4<T> k(1, static_cast<int>(kernel.size()), 1, 1);
    k.data = kernel;
    Tape<T> tape;
    auto xi = tape.leaf(x);
    auto out = eca_weights(tape, xi, tape.leaf(k));
    return tape.value(out);
}

/// Computes attention weights for x and the channel-reweighted map.
template <typename T>
std::pair<Tensor4<T>, Tensor4<T>> apply_attention(const Tensor4<T>& x, const AttentionKind& kind,
                                                  const SEParams<T>* se_params,
                                                  const std::vector<T>* eca_kernel) {
    Tensor4<T> w;
    if (kind.variant == AttentionVariant::SE) {
        if (!se_params) throw ShapeMismatch("apply_attention: SE parameters required");
        w = se_weights(x, *se_params);
    } else {
        if (!eca_kernel) throw ShapeMismatch("apply_attention: ECA kernel required");
        w = eca_weights(x, *eca_kernel);
    }
    return {w, channelwise_mul(x, w)};
}

}  // namespace embanet
