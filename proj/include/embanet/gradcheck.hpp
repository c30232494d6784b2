#pragma once

#include <functional>
#include <map>

#include "embanet/net.hpp"

namespace embanet {

// Named gradient-certification suite shared by the CLI and the test
// binaries. Every check runs finite_diff_check at 64-bit on several random
// inputs and reports the worst relative error.

struct GradCheckResult {
    std::string op;
    double max_rel_err = 0.0;
    bool pass = false;
};

namespace gradcheck_detail {

using DTape = Tape<double>;
using DId = DTape::Id;

/// Weight the output with fixed random coefficients before the scalar
/// reduction so constant-sum outputs (softmax) still exercise the full
/// Jacobian.
template <typename Fn>
double run(Fn&& op_fn, const Tensor4<double>& x0, std::mt19937& rng, double eps = 1e-5) {
    DTape probe;
    auto px = probe.leaf(x0);
    auto pout = op_fn(probe, px);
    const auto& ov = probe.value(pout);
    auto coeff = random_tensor<double>(ov.n, ov.c, ov.h, ov.w, rng);
    return finite_diff_check(
        [&](DTape& t, DId x) { return t.mul(op_fn(t, x), t.leaf(coeff)); }, x0, eps);
}

}  // namespace gradcheck_detail

inline std::vector<std::string> gradcheck_ops() {
    return {"conv2d",       "global_avg_pool", "fully_connected", "relu",
            "sigmoid",      "softmax_axis",    "batchnorm_infer", "max_pool",
            "se_weights",   "eca_weights",     "mbc_forward",     "recalibrate",
            "mba_forward",  "label_smooth_ce", "emba_block"};
}

/// Runs one named check over `trials` random inputs; returns the worst
/// relative error seen. Throws UnregisteredOp for unknown names.
inline GradCheckResult gradcheck_op(const std::string& op, unsigned seed, int trials = 10,
                                    double tolerance = 1e-4) {
    using namespace gradcheck_detail;
    std::mt19937 rng(seed);
    GradCheckResult res;
    res.op = op;

    auto record = [&](double err) { res.max_rel_err = std::max(res.max_rel_err, err); };

    for (int trial = 0; trial < trials; ++trial) {
        if (op == "conv2d") {
            // kernel/group combos that appear in the preset branch schedules
            static const std::vector<std::pair<int, int>> combos = {
                {1, 1}, {3, 1}, {5, 1}, {5, 2}, {5, 4}, {7, 2}, {7, 4}, {7, 8},
                {9, 2}, {9, 8}, {9, 16}, {3, 16}};
            auto [k, g] = combos[static_cast<std::size_t>(trial) % combos.size()];
            ConvSpec sp{16, 16, k, trial % 2 == 0 ? 1 : 2, same_pad(k), g};
            auto x0 = random_tensor<double>(1, 16, 6, 6, rng);
            auto w0 = random_tensor<double>(16, 16 / g, k, k, rng, 0.3);
            record(run([&](DTape& t, DId x) { return t.conv2d(x, t.leaf(w0), sp); }, x0, rng));
            // also certify the weight gradient
            record(run([&](DTape& t, DId w) { return t.conv2d(t.leaf(x0), w, sp); }, w0, rng));
        } else if (op == "global_avg_pool") {
            auto x0 = random_tensor<double>(2, 5, 4, 3, rng);
            record(run([](DTape& t, DId x) { return t.global_avg_pool(x); }, x0, rng));
        } else if (op == "fully_connected") {
            auto x0 = random_tensor<double>(2, 6, 1, 1, rng);
            auto w0 = random_tensor<double>(4, 6, 1, 1, rng);
            auto b0 = random_tensor<double>(1, 4, 1, 1, rng);
            record(run(
                [&](DTape& t, DId x) { return t.fully_connected(x, t.leaf(w0), t.leaf(b0)); },
                x0, rng));
            record(run(
                [&](DTape& t, DId w) { return t.fully_connected(t.leaf(x0), w, t.leaf(b0)); },
                w0, rng));
        } else if (op == "relu") {
            // keep inputs away from the kink where the subgradient is ambiguous
            auto x0 = random_tensor<double>(2, 4, 3, 3, rng);
            for (auto& v : x0.data)
                if (std::abs(v) < 1e-3) v += 0.01;
            record(run([](DTape& t, DId x) { return t.relu(x); }, x0, rng));
        } else if (op == "sigmoid") {
            auto x0 = random_tensor<double>(2, 4, 3, 3, rng);
            record(run([](DTape& t, DId x) { return t.sigmoid(x); }, x0, rng));
        } else if (op == "softmax_axis") {
            auto x0 = random_tensor<double>(2, 6, 2, 2, rng);
            record(run([&](DTape& t, DId x) { return t.softmax_axis(x, 1); }, x0, rng));
        } else if (op == "batchnorm_infer") {
            auto x0 = random_tensor<double>(2, 4, 3, 3, rng);
            auto gm = random_tensor<double>(1, 4, 1, 1, rng);
            auto bt = random_tensor<double>(1, 4, 1, 1, rng);
            BatchNormParams<double> bn(4);
            for (auto& v : bn.running_mean) v = 0.1;
            for (auto& v : bn.running_var) v = 1.3;
            record(run(
                [&](DTape& t, DId x) {
                    return t.batchnorm_infer(x, t.leaf(gm), t.leaf(bt), bn);
                },
                x0, rng));
        } else if (op == "max_pool") {
            // spread values so eps perturbations cannot flip the argmax
            auto x0 = random_tensor<double>(1, 2, 6, 6, rng);
            std::uniform_real_distribution<double> jitter(0.0, 1.0);
            for (std::size_t i = 0; i < x0.size(); ++i)
                x0.data[i] = x0.data[i] * 0.01 + static_cast<double>(i % 37) * 0.1;
            record(run([](DTape& t, DId x) { return t.max_pool(x, 3, 2, 1); }, x0, rng));
        } else if (op == "se_weights") {
            auto x0 = random_tensor<double>(2, 8, 3, 3, rng);
            SEParams<double> se(8, 4, rng);
            record(run(
                [&](DTape& t, DId x) {
                    return se_weights(t, x, t.leaf(se.w0), t.leaf(se.w1));
                },
                x0, rng));
        } else if (op == "eca_weights") {
            auto x0 = random_tensor<double>(2, 8, 3, 3, rng);
            auto k0 = random_tensor<double>(1, 3, 1, 1, rng);
            record(run(
                [&](DTape& t, DId x) { return eca_weights(t, x, t.leaf(k0)); }, x0, rng));
        } else if (op == "mbc_forward" || op == "mba_forward") {
            MBCOperator mop = trial % 2 == 0 ? MBCOperator::Split : MBCOperator::Multiplex;
            MBCConfig cfg = MBCConfig::auto_config(mop, 2);
            auto x0 = random_tensor<double>(1, 8, 4, 4, rng);
            MBAParams<double> mp(cfg, 8, AttentionKind::se(4), rng);
            auto body = [&](DTape& t, DId x) {
                std::vector<DId> ws;
                for (const auto& w : mp.convs.weights) ws.push_back(t.leaf(w));
                if (op == "mbc_forward") {
                    auto parts = mbc_forward(t, x, cfg, ws);
                    return t.concat_channels(parts);
                }
                std::vector<std::vector<DId>> ap;
                for (int i = 0; i < cfg.s; ++i)
                    ap.push_back({t.leaf(mp.attention.se[static_cast<std::size_t>(i)].w0),
                                  t.leaf(mp.attention.se[static_cast<std::size_t>(i)].w1)});
                RecalibrationKind rk =
                    trial % 3 == 0 ? RecalibrationKind::Sigmoid : RecalibrationKind::Softmax;
                return mba_forward(t, x, cfg, ws, mp.attention.kind, ap, rk);
            };
            record(run(body, x0, rng));
        } else if (op == "recalibrate") {
            auto x0 = random_tensor<double>(1, 8, 1, 1, rng);
            RecalibrationKind rk =
                trial % 2 == 0 ? RecalibrationKind::Softmax : RecalibrationKind::Sigmoid;
            record(run(
                [&](DTape& t, DId x) {
                    auto parts = t.split_channels(x, 4);
                    auto att = recalibrate(t, parts, rk);
                    return t.concat_channels(att);
                },
                x0, rng));
        } else if (op == "label_smooth_ce") {
            auto x0 = random_tensor<double>(3, 7, 1, 1, rng);
            std::vector<int> targets = {trial % 7, (trial + 2) % 7, (trial + 5) % 7};
            record(finite_diff_check(
                [&](DTape& t, DId x) { return t.label_smooth_ce(x, targets, 0.1); }, x0, 1e-5));
        } else if (op == "emba_block") {
            NetworkSpec ns = preset("emba-tiny");
            ns.stages = {{1, 8, 1}};
            ns.stem_width = 8;
            ns.classes = 3;
            ns.block.mbc = MBCConfig::auto_config(MBCOperator::Split, 2);
            Model<double> m(ns, seed + static_cast<unsigned>(trial));
            auto x0 = random_tensor<double>(1, 3, 6, 6, rng, 0.5);
            record(run(
                [&](DTape& t, DId x) {
                    // tap just past the EMBA block, before the classifier
                    auto trace = m.forward(t, x, BatchNormMode::Infer);
                    return trace.tap("stage1.block0.out");
                },
                x0, rng));
        } else {
            throw UnregisteredOp("unknown gradcheck op: " + op);
        }
    }
    res.pass = res.max_rel_err < tolerance;
    return res;
}

inline std::vector<GradCheckResult> gradcheck_all(unsigned seed, int trials = 10,
                                                  double tolerance = 1e-4) {
    std::vector<GradCheckResult> out;
    for (const auto& op : gradcheck_ops()) out.push_back(gradcheck_op(op, seed, trials, tolerance));
    return out;
}

}  // namespace embanet
