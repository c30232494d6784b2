#include "doctest.h"
#include "embanet/attention.hpp"

using namespace embanet;

namespace {

SEParams<double> zero_se(int channels, int reduction) {
    std::mt19937 rng(0);
    SEParams<double> p(channels, reduction, rng);
    std::fill(p.w0.data.begin(), p.w0.data.end(), 0.0);
    std::fill(p.w1.data.begin(), p.w1.data.end(), 0.0);
    return p;
}

}  // namespace

TEST_CASE("SE hidden width floors at 4") {
    CHECK(se_hidden_width(64, 16) == 4);
    CHECK(se_hidden_width(256, 16) == 16);
    CHECK(se_hidden_width(16, 16) == 4);
    CHECK(se_hidden_width(8, 16) == 4);
}

TEST_CASE("zero SE parameters give weight 0.5 everywhere") {
    std::mt19937 rng(1);
    auto x = random_tensor<double>(2, 8, 3, 3, rng);
    auto w = se_weights(x, zero_se(8, 4));
    CHECK(w.n == 2);
    CHECK(w.c == 8);
    CHECK(w.h == 1);
    for (double v : w.data) CHECK(v == doctest::Approx(0.5));
}

TEST_CASE("zero input propagates to weight 0.5 (bias-free FCs)") {
    std::mt19937 rng(2);
    SEParams<double> p(8, 4, rng);
    Tensor4<double> x(1, 8, 2, 2, 0.0);
    auto w = se_weights(x, p);
    for (double v : w.data) CHECK(v == doctest::Approx(0.5));
}

TEST_CASE("se_weights equals the manual gap-fc-relu-fc-sigmoid pipeline") {
    std::mt19937 rng(3);
    SEParams<double> p(8, 4, rng);
    auto x = random_tensor<double>(2, 8, 4, 4, rng);
    auto w = se_weights(x, p);
    auto manual = activation(
        fully_connected(activation(fully_connected(global_avg_pool(x), p.w0), Activation::Relu),
                        p.w1),
        Activation::Sigmoid);
    CHECK(max_abs_diff(w, manual) < 1e-12);
}

TEST_CASE("ECA identity kernel reduces to sigmoid of the pooled map") {
    std::mt19937 rng(4);
    auto x = random_tensor<double>(1, 6, 3, 3, rng);
    auto w = eca_weights(x, std::vector<double>{0.0, 1.0, 0.0});
    auto expect = activation(global_avg_pool(x), Activation::Sigmoid);
    CHECK(max_abs_diff(w, expect) < 1e-12);
}

TEST_CASE("zero ECA kernel gives weight 0.5") {
    std::mt19937 rng(5);
    auto x = random_tensor<double>(1, 6, 2, 2, rng);
    auto w = eca_weights(x, std::vector<double>{0.0, 0.0, 0.0});
    for (double v : w.data) CHECK(v == doctest::Approx(0.5));
}

TEST_CASE("ECA matches a 1-d loop convolution oracle") {
    std::mt19937 rng(6);
    auto x = random_tensor<double>(2, 7, 3, 3, rng);
    std::vector<double> kernel = {0.3, -1.1, 0.7};
    auto w = eca_weights(x, kernel);
    auto g = global_avg_pool(x);
    for (int n = 0; n < 2; ++n)
        for (int c = 0; c < 7; ++c) {
            double acc = 0;
            for (int t = 0; t < 3; ++t) {
                int src = c + t - 1;
                if (src >= 0 && src < 7) acc += kernel[static_cast<std::size_t>(t)] * g.at(n, src, 0, 0);
            }
            double expect = 1.0 / (1.0 + std::exp(-acc));
            CHECK(w.at(n, c, 0, 0) == doctest::Approx(expect).epsilon(1e-9));
        }
}

TEST_CASE("attention weights lie strictly in (0,1)") {
    std::mt19937 rng(7);
    SEParams<double> p(16, 16, rng);
    auto x = random_tensor<double>(2, 16, 5, 5, rng, 3.0);
    for (double v : se_weights(x, p).data) {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
    }
    for (double v : eca_weights(x, std::vector<double>{0.5, 1.0, -0.5}).data) {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
    }
}

TEST_CASE("attention is invariant to spatial permutation") {
    std::mt19937 rng(8);
    SEParams<double> p(4, 4, rng);
    auto x = random_tensor<double>(1, 4, 2, 2, rng);
    auto shuffled = x;
    // rotate the four spatial slots of every channel
    for (int c = 0; c < 4; ++c) {
        double tmp = shuffled.at(0, c, 0, 0);
        shuffled.at(0, c, 0, 0) = shuffled.at(0, c, 1, 1);
        shuffled.at(0, c, 1, 1) = tmp;
    }
    CHECK(max_abs_diff(se_weights(x, p), se_weights(shuffled, p)) < 1e-12);
    CHECK(max_abs_diff(eca_weights(x, std::vector<double>{1.0, 0.5, 0.25}),
                       eca_weights(shuffled, std::vector<double>{1.0, 0.5, 0.25})) < 1e-12);
}

TEST_CASE("apply_attention composes weights with channelwise product") {
    std::mt19937 rng(9);
    SEParams<double> p(8, 4, rng);
    auto x = random_tensor<double>(1, 8, 3, 3, rng);
    auto [w, out] = apply_attention<double>(x, AttentionKind::se(4), &p, nullptr);
    CHECK(max_abs_diff(out, channelwise_mul(x, w)) == 0.0);
    // weights in (0,1) never grow magnitudes
    for (std::size_t i = 0; i < out.size(); ++i)
        CHECK(std::abs(out.data[i]) <= std::abs(x.data[i]));

    auto zp = zero_se(8, 4);
    auto zero = apply_attention<double>(x, AttentionKind::se(4), &zp, nullptr).second;
    for (std::size_t i = 0; i < zero.size(); ++i)
        CHECK(zero.data[i] == doctest::Approx(0.5 * x.data[i]).epsilon(1e-12));
}
