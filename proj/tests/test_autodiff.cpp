#include "doctest.h"
#include "embanet/gradcheck.hpp"

using namespace embanet;

TEST_CASE("recorded forward equals eager evaluation") {
    std::mt19937 rng(1);
    auto x = random_tensor<double>(1, 4, 5, 5, rng);
    auto w = random_tensor<double>(4, 4, 3, 3, rng);
    ConvSpec sp{4, 4, 3, 1, 1, 1};
    Tape<double> tape;
    auto out = tape.conv2d(tape.leaf(x), tape.leaf(w), sp);
    CHECK(max_abs_diff(tape.value(out), conv2d(x, w, sp)) == 0.0);
}

TEST_CASE("identity graph reproduces the input") {
    std::mt19937 rng(2);
    auto x = random_tensor<double>(1, 4, 2, 2, rng);
    Tape<double> tape;
    auto xi = tape.leaf(x);
    CHECK(max_abs_diff(tape.value(xi), x) == 0.0);

    auto rt = tape.concat_channels(tape.split_channels(xi, 2));
    CHECK(max_abs_diff(tape.value(rt), x) == 0.0);
}

TEST_CASE("product rule: d(x*y)/dx == y") {
    std::mt19937 rng(3);
    auto x = random_tensor<double>(1, 2, 2, 2, rng);
    auto y = random_tensor<double>(1, 2, 2, 2, rng);
    Tape<double> tape;
    auto xi = tape.leaf(x);
    auto yi = tape.leaf(y);
    auto p = tape.mul(xi, yi);
    tape.backward(p, Tensor4<double>(1, 2, 2, 2, 1.0));
    CHECK(max_abs_diff(tape.gradient(xi), y) == 0.0);
    CHECK(max_abs_diff(tape.gradient(yi), x) == 0.0);
}

TEST_CASE("relu gradient is zero on dead units") {
    Tensor4<double> x(1, 1, 1, 3);
    x.data = {-2.0, 0.0, 3.0};
    Tape<double> tape;
    auto xi = tape.leaf(x);
    auto r = tape.relu(xi);
    tape.backward(r, Tensor4<double>(1, 1, 1, 3, 1.0));
    auto g = tape.gradient(xi);
    CHECK(g.data[0] == 0.0);
    CHECK(g.data[1] == 0.0);  // subgradient at 0 defined as 0
    CHECK(g.data[2] == 1.0);
}

TEST_CASE("zero seed yields an all-zero gradient map") {
    std::mt19937 rng(4);
    ParameterStore<double> store;
    int wid = store.add("w", random_tensor<double>(3, 3, 1, 1, rng));
    auto x = random_tensor<double>(2, 3, 1, 1, rng);
    Tape<double> tape;
    auto out = tape.fully_connected(tape.leaf(x), tape.leaf(store[wid].value, wid));
    tape.backward(out, Tensor4<double>(2, 3, 1, 1, 0.0));
    auto gm = tape.parameter_gradients(store);
    for (double v : gm.grads[0].data) CHECK(v == 0.0);
}

TEST_CASE("backward is linear: sum of seeds equals sum of gradients") {
    std::mt19937 rng(5);
    auto x = random_tensor<double>(1, 3, 2, 2, rng);
    auto run = [&](double s0, double s1) {
        Tape<double> tape;
        auto xi = tape.leaf(x);
        auto out = tape.sigmoid(xi);
        Tensor4<double> seed(1, 3, 2, 2, 0.0);
        seed.data[0] = s0;
        seed.data[5] = s1;
        tape.backward(out, seed);
        return tape.gradient(xi);
    };
    auto a = run(1.0, 0.0);
    auto b = run(0.0, 1.0);
    auto both = run(1.0, 1.0);
    for (std::size_t i = 0; i < both.size(); ++i)
        CHECK(both.data[i] == doctest::Approx(a.data[i] + b.data[i]).epsilon(1e-12));
}

TEST_CASE("fan-out accumulates by summation") {
    std::mt19937 rng(6);
    auto x = random_tensor<double>(1, 2, 2, 2, rng);
    Tape<double> tape;
    auto xi = tape.leaf(x);
    auto doubled = tape.add(xi, xi);
    tape.backward(doubled, Tensor4<double>(1, 2, 2, 2, 1.0));
    for (double v : tape.gradient(xi).data) CHECK(v == 2.0);
}

TEST_CASE("finite differences: quadratic is exact under central differences") {
    Tensor4<double> x0(1, 1, 1, 1, 3.0);
    double rel = finite_diff_check(
        [](Tape<double>& t, Tape<double>::Id x) { return t.mul(x, x); }, x0, 1e-4);
    CHECK(rel < 1e-8);
}

TEST_CASE("finite differences: sigmoid sum") {
    std::mt19937 rng(7);
    auto x0 = random_tensor<double>(1, 3, 2, 2, rng);
    double rel = finite_diff_check(
        [](Tape<double>& t, Tape<double>::Id x) { return t.sigmoid(x); }, x0, 1e-5);
    CHECK(rel < 1e-6);
}

TEST_CASE("softmax sum is constant: analytic gradient zero, central diff tiny") {
    std::mt19937 rng(8);
    auto x0 = random_tensor<double>(1, 4, 1, 1, rng);
    Tape<double> tape;
    auto xi = tape.leaf(x0);
    auto s = tape.sum_all(tape.softmax_axis(xi, 1));
    tape.backward(s, Tensor4<double>(1, 1, 1, 1, 1.0));
    for (double v : tape.gradient(xi).data) CHECK(std::abs(v) < 1e-12);

    double eps = 1e-4;
    auto eval = [&](const Tensor4<double>& xv) {
        Tape<double> t;
        return t.value(t.sum_all(t.softmax_axis(t.leaf(xv), 1))).data[0];
    };
    auto xp = x0;
    xp.data[0] += eps;
    double fplus = eval(xp);
    xp.data[0] -= 2 * eps;
    double fminus = eval(xp);
    CHECK(std::abs((fplus - fminus) / (2 * eps)) < 1e-8);
}

TEST_CASE("finite_diff_check validates epsilon and rejects unknown ops") {
    Tensor4<double> x0(1, 1, 1, 1, 1.0);
    CHECK_THROWS_AS(finite_diff_check(
                        [](Tape<double>& t, Tape<double>::Id x) { return t.relu(x); }, x0, 0.0),
                    InvalidEpsilon);
    CHECK_THROWS_AS(gradcheck_op("not_an_op", 1, 1), UnregisteredOp);
}

TEST_CASE("gradient certification across the op set (fast pass)") {
    for (const auto& op : gradcheck_ops()) {
        auto r = gradcheck_op(op, 17, 2);
        INFO(op << " max rel err " << r.max_rel_err);
        CHECK(r.pass);
    }
}

TEST_CASE("full MBA gradient vs finite differences at 64-bit") {
    std::mt19937 rng(9);
    MBCConfig cfg = MBCConfig::auto_config(MBCOperator::Split, 2);
    MBAParams<double> params(cfg, 8, AttentionKind::se(4), rng);
    auto x0 = random_tensor<double>(1, 8, 4, 4, rng);
    auto coeff = random_tensor<double>(1, 8, 4, 4, rng);
    double rel = finite_diff_check(
        [&](Tape<double>& t, Tape<double>::Id x) {
            std::vector<Tape<double>::Id> ws;
            for (const auto& w : params.convs.weights) ws.push_back(t.leaf(w));
            std::vector<std::vector<Tape<double>::Id>> ap;
            for (int i = 0; i < cfg.s; ++i)
                ap.push_back({t.leaf(params.attention.se[static_cast<std::size_t>(i)].w0),
                              t.leaf(params.attention.se[static_cast<std::size_t>(i)].w1)});
            auto out = mba_forward(t, x, cfg, ws, params.attention.kind, ap,
                                   RecalibrationKind::Softmax);
            return t.mul(out, t.leaf(coeff));
        },
        x0, 1e-5);
    CHECK(rel < 1e-5);
}
