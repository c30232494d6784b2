#include "doctest.h"
#include "embanet/nn_ops.hpp"

using namespace embanet;

TEST_CASE("1x1 conv scales a constant input") {
    Tensor4<float> x(1, 1, 2, 2, 3.0f);
    Tensor4<float> w(1, 1, 1, 1, 2.0f);
    auto out = conv2d(x, w, ConvSpec{1, 1, 1, 1, 0, 1});
    for (float v : out.data) CHECK(v == doctest::Approx(6.0f));
}

TEST_CASE("3x3 ones kernel sums the window") {
    Tensor4<float> x(1, 1, 3, 3, 1.0f);
    Tensor4<float> w(1, 1, 3, 3, 1.0f);
    auto out = conv2d(x, w, ConvSpec{1, 1, 3, 1, 0, 1});
    CHECK(out.h == 1);
    CHECK(out.w == 1);
    CHECK(out.at(0, 0, 0, 0) == doctest::Approx(9.0f));
}

TEST_CASE("grouped conv equals independent per-group convs") {
    std::mt19937 rng(1);
    auto x = random_tensor<double>(1, 4, 5, 5, rng);
    auto w = random_tensor<double>(4, 2, 3, 3, rng);
    ConvSpec sp{4, 4, 3, 1, 1, 2};
    auto grouped = conv2d(x, w, sp);

    // manual: two 2->2 convolutions over channel slices
    auto xs = split_channels(x, 2);
    ChannelSlices<double> outs;
    for (int g = 0; g < 2; ++g) {
        Tensor4<double> wg(2, 2, 3, 3);
        for (int o = 0; o < 2; ++o)
            for (int i = 0; i < 2; ++i)
                for (int ky = 0; ky < 3; ++ky)
                    for (int kx = 0; kx < 3; ++kx)
                        wg.at(o, i, ky, kx) = w.at(g * 2 + o, i, ky, kx);
        outs.parts.push_back(conv2d(xs.parts[static_cast<std::size_t>(g)], wg,
                                    ConvSpec{2, 2, 3, 1, 1, 1}));
    }
    CHECK(max_abs_diff(grouped, concat_channels(outs)) == 0.0);
}

TEST_CASE("fast conv path is bitwise-equal to the direct-loop reference") {
    std::mt19937 rng(2);
    for (int trial = 0; trial < 20; ++trial) {
        int k = std::vector<int>{1, 3, 5, 7, 9}[static_cast<std::size_t>(trial % 5)];
        int g = std::vector<int>{1, 2, 4}[static_cast<std::size_t>(trial % 3)];
        int stride = trial % 2 + 1;
        ConvSpec sp{8, 8, k, stride, same_pad(k), g};
        auto x = random_tensor<double>(2, 8, 7, 7, rng);
        auto w = random_tensor<double>(8, 8 / g, k, k, rng);
        auto fast = conv2d(x, w, sp);
        auto ref = conv2d_reference(x, w, sp);
        CHECK(max_abs_diff(fast, ref) == 0.0);
    }
}

TEST_CASE("conv is linear in its input") {
    std::mt19937 rng(3);
    auto x1 = random_tensor<double>(1, 3, 5, 5, rng);
    auto x2 = random_tensor<double>(1, 3, 5, 5, rng);
    auto w = random_tensor<double>(4, 3, 3, 3, rng);
    ConvSpec sp{3, 4, 3, 1, 1, 1};
    Tensor4<double> mix(1, 3, 5, 5);
    for (std::size_t i = 0; i < mix.size(); ++i) mix.data[i] = 2.0 * x1.data[i] - 0.5 * x2.data[i];
    auto lhs = conv2d(mix, w, sp);
    auto a = conv2d(x1, w, sp);
    auto b = conv2d(x2, w, sp);
    for (std::size_t i = 0; i < lhs.size(); ++i)
        CHECK(lhs.data[i] == doctest::Approx(2.0 * a.data[i] - 0.5 * b.data[i]).epsilon(1e-5));
}

TEST_CASE("conv validates group divisibility") {
    std::mt19937 rng(4);
    auto x = random_tensor<float>(1, 6, 4, 4, rng);
    auto w = random_tensor<float>(4, 2, 3, 3, rng);
    CHECK_THROWS_AS(conv2d(x, w, ConvSpec{6, 4, 3, 1, 1, 4}), GroupMismatch);
}

TEST_CASE("global_avg_pool computes per-channel means") {
    Tensor4<float> c2(1, 1, 2, 2);
    c2.data = {1, 2, 3, 4};
    CHECK(global_avg_pool(c2).at(0, 0, 0, 0) == doctest::Approx(2.5f));

    Tensor4<float> cst(2, 3, 4, 4, 7.0f);
    auto g = global_avg_pool(cst);
    for (float v : g.data) CHECK(v == doctest::Approx(7.0f));

    std::mt19937 rng(5);
    auto x = random_tensor<float>(1, 2, 3, 5, rng);
    auto gx = global_avg_pool(x);
    for (int c = 0; c < 2; ++c) {
        double acc = 0;
        for (int y = 0; y < 3; ++y)
            for (int xx = 0; xx < 5; ++xx) acc += x.at(0, c, y, xx);
        CHECK(gx.at(0, c, 0, 0) == doctest::Approx(acc / 15.0).epsilon(1e-6));
    }
}

TEST_CASE("fully_connected identity / constant / oracle") {
    Tensor4<float> x(2, 3, 1, 1);
    x.data = {1, 2, 3, 4, 5, 6};
    Tensor4<float> eye(3, 3, 1, 1, 0.0f);
    for (int i = 0; i < 3; ++i) eye.at(i, i, 0, 0) = 1.0f;
    CHECK(max_abs_diff(fully_connected(x, eye), x) == 0.0);

    Tensor4<float> zw(2, 3, 1, 1, 0.0f);
    std::vector<float> b = {1.5f, -2.0f};
    auto out = fully_connected(x, zw, &b);
    CHECK(out.at(0, 0, 0, 0) == 1.5f);
    CHECK(out.at(1, 1, 0, 0) == -2.0f);

    std::mt19937 rng(6);
    auto xr = random_tensor<double>(3, 4, 1, 1, rng);
    auto wr = random_tensor<double>(5, 4, 1, 1, rng);
    auto o = fully_connected(xr, wr);
    for (int n = 0; n < 3; ++n)
        for (int f = 0; f < 5; ++f) {
            double acc = 0;
            for (int i = 0; i < 4; ++i) acc += xr.at(n, i, 0, 0) * wr.at(f, i, 0, 0);
            CHECK(o.at(n, f, 0, 0) == doctest::Approx(acc).epsilon(1e-6));
        }
}

TEST_CASE("activations match definitions") {
    Tensor4<float> x(1, 1, 1, 2);
    x.data = {-1.0f, 2.0f};
    auto r = activation(x, Activation::Relu);
    CHECK(r.data[0] == 0.0f);
    CHECK(r.data[1] == 2.0f);

    Tensor4<float> z(1, 1, 1, 1, 0.0f);
    CHECK(activation(z, Activation::Sigmoid).data[0] == doctest::Approx(0.5f));

    std::mt19937 rng(7);
    auto xr = random_tensor<float>(1, 2, 3, 3, rng);
    auto neg = xr;
    for (auto& v : neg.data) v = -v;
    auto s1 = activation(xr, Activation::Sigmoid);
    auto s2 = activation(neg, Activation::Sigmoid);
    for (std::size_t i = 0; i < s1.size(); ++i)
        CHECK(s1.data[i] + s2.data[i] == doctest::Approx(1.0f).epsilon(1e-6));
}

TEST_CASE("softmax closed forms and shift invariance") {
    Tensor4<double> x(1, 2, 1, 1);
    x.data = {0.0, 0.0};
    auto u = softmax_axis(x, 1);
    CHECK(u.data[0] == doctest::Approx(0.5));

    x.data = {std::log(3.0), 0.0};
    auto t = softmax_axis(x, 1);
    CHECK(t.data[0] == doctest::Approx(0.75).epsilon(1e-9));
    CHECK(t.data[1] == doctest::Approx(0.25).epsilon(1e-9));

    std::mt19937 rng(8);
    auto xr = random_tensor<double>(2, 5, 2, 2, rng);
    auto shifted = xr;
    for (int n = 0; n < 2; ++n)
        for (int c = 0; c < 5; ++c)
            for (int yy = 0; yy < 2; ++yy)
                for (int xx = 0; xx < 2; ++xx) shifted.at(n, c, yy, xx) += 3.7;
    auto a = softmax_axis(xr, 1);
    auto b = softmax_axis(shifted, 1);
    CHECK(max_abs_diff(a, b) < 1e-6);

    // entries in (0,1), sums to 1 along the axis
    for (double v : a.data) {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
    }
    for (int n = 0; n < 2; ++n)
        for (int yy = 0; yy < 2; ++yy)
            for (int xx = 0; xx < 2; ++xx) {
                double sum = 0;
                for (int c = 0; c < 5; ++c) sum += a.at(n, c, yy, xx);
                CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
            }
}

TEST_CASE("batchnorm inference is a per-channel affine map") {
    BatchNormParams<double> p(2);
    p.epsilon = 0.0;
    std::mt19937 rng(9);
    auto x = random_tensor<double>(2, 2, 3, 3, rng);
    auto out = batchnorm(x, p, BatchNormMode::Infer);
    CHECK(max_abs_diff(out, x) < 1e-12);  // identity params

    p.gamma = {2.0, 0.5};
    p.beta = {1.0, -1.0};
    p.running_mean = {0.5, 0.0};
    p.running_var = {4.0, 1.0};
    auto y = batchnorm(x, p, BatchNormMode::Infer);
    CHECK(y.at(0, 0, 1, 1) ==
          doctest::Approx((x.at(0, 0, 1, 1) - 0.5) / 2.0 * 2.0 + 1.0).epsilon(1e-9));
}

TEST_CASE("batchnorm train normalizes by biased batch statistics") {
    std::mt19937 rng(10);
    auto x = random_tensor<double>(4, 3, 5, 5, rng);
    BatchNormParams<double> p(3);
    BatchNormStats<double> st;
    auto out = batchnorm(x, p, BatchNormMode::Train, &st);
    // output is approximately zero-mean unit-var per channel
    std::size_t plane = 25;
    for (int c = 0; c < 3; ++c) {
        double mean = 0, var = 0;
        for (int b = 0; b < 4; ++b)
            for (std::size_t i = 0; i < plane; ++i)
                mean += out.data[(static_cast<std::size_t>(b) * 3 + c) * plane + i];
        mean /= 100.0;
        for (int b = 0; b < 4; ++b)
            for (std::size_t i = 0; i < plane; ++i) {
                double d = out.data[(static_cast<std::size_t>(b) * 3 + c) * plane + i] - mean;
                var += d * d;
            }
        var /= 100.0;
        CHECK(mean == doctest::Approx(0.0).epsilon(1e-9));
        CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
        // running stats moved toward batch stats with momentum 0.1
        CHECK(p.running_mean[c] == doctest::Approx(0.1 * st.mean[c]).epsilon(1e-9));
        CHECK(p.running_var[c] == doctest::Approx(0.9 + 0.1 * st.var[c]).epsilon(1e-9));
    }
}

TEST_CASE("batchnorm train needs more than one value per channel") {
    Tensor4<double> x(1, 3, 1, 1, 1.0);
    BatchNormParams<double> p(3);
    CHECK_THROWS_AS(batchnorm(x, p, BatchNormMode::Train), ZeroVariance);
}

TEST_CASE("max_pool examples") {
    Tensor4<float> x(1, 1, 2, 2);
    x.data = {1, 2, 3, 4};
    auto out = max_pool(x, 2, 2, 0);
    CHECK(out.size() == 1);
    CHECK(out.data[0] == 4.0f);

    Tensor4<float> cst(1, 2, 4, 4, 3.25f);
    auto c = max_pool(cst, 3, 2, 1);
    for (float v : c.data) CHECK(v == 3.25f);

    std::mt19937 rng(11);
    auto xr = random_tensor<float>(1, 1, 5, 5, rng);
    auto p = max_pool(xr, 3, 1, 0);
    for (int y = 0; y < 3; ++y)
        for (int xx = 0; xx < 3; ++xx) {
            float best = -1e30f;
            for (int ky = 0; ky < 3; ++ky)
                for (int kx = 0; kx < 3; ++kx) best = std::max(best, xr.at(0, 0, y + ky, xx + kx));
            CHECK(p.at(0, 0, y, xx) == best);
        }
}

TEST_CASE("same padding keeps spatial dims for odd kernels") {
    for (int k : {1, 3, 5, 7, 9}) {
        ConvSpec sp{1, 1, k, 1, same_pad(k), 1};
        CHECK(sp.out_dim(13) == 13);
    }
}
