#pragma once

#include <numeric>

#include "embanet/attention.hpp"

namespace embanet {

enum class MBCOperator { Multiplex, Split };
enum class RecalibrationKind { Softmax, Sigmoid };

/// Kernel-to-group rule: 1 for k=3, else 2^((k-1)/2).
inline int derive_group_size(int k) {
    if (k < 3 || k % 2 == 0) throw InvalidKernel("derive_group_size: kernel must be odd and >= 3");
    if (k == 3) return 1;
    return 1 << ((k - 1) / 2);
}

/// Largest divisor of gcd(c_in_branch, c_out_branch) not exceeding the
/// nominal group count. Always yields a legal grouped convolution.
inline int effective_groups(int nominal, int c_in_branch, int c_out_branch) {
    if (nominal < 1 || c_in_branch < 1 || c_out_branch < 1)
        throw GroupMismatch("effective_groups: arguments must be positive");
    int g = std::gcd(c_in_branch, c_out_branch);
    for (int d = std::min(nominal, g); d >= 1; --d)
        if (g % d == 0) return d;
    return 1;
}

/// Branch layout of an MBC module: operator kind, branch count, per-branch
/// kernel and nominal group sizes, shared stride.
struct MBCConfig {
    MBCOperator op = MBCOperator::Split;
    int s = 4;
    std::vector<int> kernels;         // odd, length s
    std::vector<int> nominal_groups;  // positive, length s
    int stride = 1;

    /// Auto-generated config: kernels 3,5,7,9,... and groups from
    /// derive_group_size.
    static MBCConfig auto_config(MBCOperator op, int s, int stride = 1) {
        MBCConfig cfg;
        cfg.op = op;
        cfg.s = s;
        cfg.stride = stride;
        for (int i = 0; i < s; ++i) {
            int k = 2 * (i + 1) + 1;
            cfg.kernels.push_back(k);
            cfg.nominal_groups.push_back(derive_group_size(k));
        }
        return cfg;
    }

    void validate(int c) const {
        if (s < 1) throw ShapeMismatch("MBCConfig: branch count must be positive");
        if (c % s != 0) throw NonDivisibleChannels("MBCConfig: s must divide channel width");
        if (static_cast<int>(kernels.size()) != s || static_cast<int>(nominal_groups.size()) != s)
            throw ShapeMismatch("MBCConfig: kernels/groups must have one entry per branch");
        for (int k : kernels)
            if (k < 1 || k % 2 == 0) throw InvalidKernel("MBCConfig: kernels must be odd");
        for (int g : nominal_groups)
            if (g < 1) throw GroupMismatch("MBCConfig: groups must be positive");
    }

    int branch_in_channels(int c) const { return op == MBCOperator::Multiplex ? c : c / s; }
    int branch_out_channels(int c) const { return c / s; }

    /// Legal conv geometry for branch i at block width c.
    ConvSpec branch_conv_spec(int i, int c) const {
        ConvSpec spec;
        spec.c_in = branch_in_channels(c);
        spec.c_out = branch_out_channels(c);
        spec.k = kernels[i];
        spec.stride = stride;
        spec.pad = same_pad(kernels[i]);
        spec.groups = effective_groups(nominal_groups[i], spec.c_in, spec.c_out);
        return spec;
    }
};

/// Parameters of one MBC instance: one conv weight per branch.
template <typename T>
struct MBCParams {
    std::vector<Tensor4<T>> weights;

    MBCParams() = default;
    MBCParams(const MBCConfig& cfg, int c, std::mt19937& rng) {
        cfg.validate(c);
        for (int i = 0; i < cfg.s; ++i) {
            ConvSpec spec = cfg.branch_conv_spec(i, c);
            Tensor4<T> w(spec.c_out, spec.c_in / spec.groups, spec.k, spec.k);
            double fan_out = static_cast<double>(spec.k) * spec.k * spec.c_out / spec.groups;
            std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_out));
            for (auto& v : w.data) v = static_cast<T>(dist(rng));
            weights.push_back(std::move(w));
        }
    }
};

/// Multi-scale feature generation: branch i applies its conv to the full
/// input (Multiplex) or to channel slice i (Split). Returns one feature id
/// per branch, each (n, c/s, h', w').
template <typename T>
std::vector<typename Tape<T>::Id> mbc_forward(Tape<T>& tape, typename Tape<T>::Id x,
                                              const MBCConfig& cfg,
                                              const std::vector<typename Tape<T>::Id>& weights) {
    int c = tape.value(x).c;
    cfg.validate(c);
    if (static_cast<int>(weights.size()) != cfg.s)
        throw ShapeMismatch("mbc_forward: one weight per branch required");
    std::vector<typename Tape<T>::Id> features;
    if (cfg.op == MBCOperator::Multiplex) {
        // multiplex is a logical view: every branch reads the same node
        for (int i = 0; i < cfg.s; ++i)
            features.push_back(tape.conv2d(x, weights[i], cfg.branch_conv_spec(i, c)));
    } else {
        auto parts = tape.split_channels(x, cfg.s);
        for (int i = 0; i < cfg.s; ++i)
            features.push_back(tape.conv2d(parts[i], weights[i], cfg.branch_conv_spec(i, c)));
    }
    return features;
}

/// Per-branch attention parameters for the MBA pipeline. Branches hold
/// independent (unshared) parameter sets.
template <typename T>
struct BranchAttentionParams {
    AttentionKind kind;
    std::vector<SEParams<T>> se;   // one per branch when kind is SE
    std::vector<Tensor4<T>> eca;   // per-branch (1, k, 1, 1) kernels when kind is ECA

    BranchAttentionParams() = default;
    BranchAttentionParams(const AttentionKind& k, int s, int branch_channels, std::mt19937& rng)
        : kind(k) {
        if (k.variant == AttentionVariant::SE) {
            for (int i = 0; i < s; ++i) se.emplace_back(branch_channels, k.se_reduction, rng);
        } else {
            std::normal_distribution<double> dist(0.0, std::sqrt(1.0 / k.eca_kernel));
            for (int i = 0; i < s; ++i) {
                Tensor4<T> ker(1, k.eca_kernel, 1, 1);
                for (auto& v : ker.data) v = static_cast<T>(dist(rng));
                eca.push_back(std::move(ker));
            }
        }
    }
};

/// Raw per-branch attention logits Z_i, each (n, c/s, 1, 1). Z is the
/// pre-sigmoid logit; recalibrate() applies the excitation function.
template <typename T>
std::vector<typename Tape<T>::Id> branch_attention(
    Tape<T>& tape, const std::vector<typename Tape<T>::Id>& features,
    const AttentionKind& kind, const std::vector<std::vector<typename Tape<T>::Id>>& params) {
    if (params.size() != features.size())
        throw ShapeMismatch("branch_attention: one parameter set per branch required");
    std::vector<typename Tape<T>::Id> logits;
    for (std::size_t i = 0; i < features.size(); ++i) {
        if (kind.variant == AttentionVariant::SE)
            logits.push_back(se_logits(tape, features[i], params[i][0], params[i][1]));
        else
            logits.push_back(eca_logits(tape, features[i], params[i][0]));
    }
    return logits;
}

/// Softmax: competition across branches at each (sample, channel slot).
/// Sigmoid: independent per-element excitation (no cross-branch coupling).
template <typename T>
std::vector<typename Tape<T>::Id> recalibrate(Tape<T>& tape,
                                              const std::vector<typename Tape<T>::Id>& raw,
                                              RecalibrationKind kind) {
    if (raw.empty()) throw ShapeMismatch("recalibrate: no branches");
    if (kind == RecalibrationKind::Sigmoid) {
        std::vector<typename Tape<T>::Id> out;
        for (auto z : raw) out.push_back(tape.sigmoid(z));
        return out;
    }
    int s = static_cast<int>(raw.size());
    auto z = tape.concat_channels(raw);
    auto att = tape.softmax_groups(z, s);
    return tape.split_channels(att, s);
}

/// Full MBA pipeline: MBC features -> per-branch attention -> recalibration
/// -> channel-wise reweighting -> concat. Output channel count equals input
/// channel count; spatial dims are preserved at stride 1.
template <typename T>
typename Tape<T>::Id mba_forward(Tape<T>& tape, typename Tape<T>::Id x, const MBCConfig& cfg,
                                 const std::vector<typename Tape<T>::Id>& conv_weights,
                                 const AttentionKind& att_kind,
                                 const std::vector<std::vector<typename Tape<T>::Id>>& att_params,
                                 RecalibrationKind recal) {
    auto features = mbc_forward(tape, x, cfg, conv_weights);
    auto raw = branch_attention(tape, features, att_kind, att_params);
    auto att = recalibrate(tape, raw, recal);
    std::vector<typename Tape<T>::Id> refined;
    for (std::size_t i = 0; i < features.size(); ++i)
        refined.push_back(tape.channelwise_mul(features[i], att[i]));
    return tape.concat_channels(refined);
}

/// Convenience bundle holding the tensors for a standalone MBA evaluation.
template <typename T>
struct MBAParams {
    MBCParams<T> convs;
    BranchAttentionParams<T> attention;

    MBAParams() = default;
    MBAParams(const MBCConfig& cfg, int c, const AttentionKind& kind, std::mt19937& rng)
        : convs(cfg, c, rng), attention(kind, cfg.s, cfg.branch_out_channels(c), rng) {}
};

/// Eager MBA evaluation on a scratch tape.
template <typename T>
Tensor4<T> mba_forward(const Tensor4<T>& x, const MBCConfig& cfg, const MBAParams<T>& params,
                       RecalibrationKind recal) {
    Tape<T> tape;
    auto xi = tape.leaf(x);
    std::vector<typename Tape<T>::Id> ws;
    for (const auto& w : params.convs.weights) ws.push_back(tape.leaf(w));
    std::vector<std::vector<typename Tape<T>::Id>> ap;
    for (int i = 0; i < cfg.s; ++i) {
        if (params.attention.kind.variant == AttentionVariant::SE)
            ap.push_back({tape.leaf(params.attention.se[i].w0), tape.leaf(params.attention.se[i].w1)});
        else
            ap.push_back({tape.leaf(params.attention.eca[i])});
    }
    auto out = mba_forward(tape, xi, cfg, ws, params.attention.kind, ap, recal);
    return tape.value(out);
}

}  // namespace embanet
