#include <sstream>

#include "doctest.h"
#include "embanet/tensor.hpp"

using namespace embanet;

namespace {

Tensor4<float> channel_ramp(int n, int c, int h, int w) {
    Tensor4<float> t(n, c, h, w);
    for (int b = 0; b < n; ++b)
        for (int j = 0; j < c; ++j)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) t.at(b, j, y, x) = static_cast<float>(j);
    return t;
}

}  // namespace

TEST_CASE("split_channels keeps channel contents in order") {
    auto x = channel_ramp(1, 4, 2, 2);
    auto parts = split_channels(x, 2);
    REQUIRE(parts.parts.size() == 2);
    CHECK(parts.parts[0].c == 2);
    CHECK(parts.parts[0].at(0, 0, 0, 0) == 0.0f);
    CHECK(parts.parts[0].at(0, 1, 0, 0) == 1.0f);
    CHECK(parts.parts[1].at(0, 0, 0, 0) == 2.0f);
    CHECK(parts.parts[1].at(0, 1, 0, 0) == 3.0f);
}

TEST_CASE("split with s=1 is the identity") {
    std::mt19937 rng(1);
    auto x = random_tensor<float>(2, 6, 3, 3, rng);
    auto parts = split_channels(x, 1);
    REQUIRE(parts.parts.size() == 1);
    CHECK(max_abs_diff(parts.parts[0], x) == 0.0);
}

TEST_CASE("split 64 channels four ways gives 16-channel parts") {
    std::mt19937 rng(2);
    auto x = random_tensor<float>(1, 64, 2, 2, rng);
    auto parts = split_channels(x, 4);
    REQUIRE(parts.parts.size() == 4);
    for (const auto& p : parts.parts) CHECK(p.c == 16);
}

TEST_CASE("split rejects non-divisible channel counts") {
    std::mt19937 rng(3);
    auto x = random_tensor<float>(1, 6, 2, 2, rng);
    CHECK_THROWS_AS(split_channels(x, 4), NonDivisibleChannels);
}

TEST_CASE("multiplex replicates the input") {
    std::mt19937 rng(4);
    auto x = random_tensor<float>(1, 5, 2, 3, rng);
    auto parts = multiplex_channels(x, 3);
    REQUIRE(parts.parts.size() == 3);
    CHECK(max_abs_diff(parts.parts[0], parts.parts[2]) == 0.0);
    CHECK(max_abs_diff(parts.parts[1], x) == 0.0);
    CHECK(parts.parts[0].c == 5);
}

TEST_CASE("concat restores split parts bitwise") {
    std::mt19937 rng(5);
    for (int s : {1, 2, 4, 8}) {
        auto x = random_tensor<float>(2, 64, 3, 2, rng);
        auto back = concat_channels(split_channels(x, s));
        CHECK(max_abs_diff(back, x) == 0.0);
    }
}

TEST_CASE("concat rejects mismatched spatial dims") {
    ChannelSlices<float> parts;
    parts.parts.emplace_back(1, 2, 3, 3);
    parts.parts.emplace_back(1, 2, 2, 3);
    CHECK_THROWS_AS(concat_channels(parts), ShapeMismatch);
}

TEST_CASE("channelwise_mul identity, annihilator, per-channel scaling") {
    std::mt19937 rng(6);
    auto x = random_tensor<float>(2, 3, 2, 2, rng);
    Tensor4<float> ones(2, 3, 1, 1, 1.0f);
    CHECK(max_abs_diff(channelwise_mul(x, ones), x) == 0.0);

    Tensor4<float> zeros(2, 3, 1, 1, 0.0f);
    auto z = channelwise_mul(x, zeros);
    for (float v : z.data) CHECK(v == 0.0f);

    Tensor4<float> cst(1, 3, 2, 2, 2.0f);
    Tensor4<float> w(1, 3, 1, 1);
    for (int c = 0; c < 3; ++c) w.at(0, c, 0, 0) = static_cast<float>(c);
    auto out = channelwise_mul(cst, w);
    for (int c = 0; c < 3; ++c)
        CHECK(out.at(0, c, 1, 1) == doctest::Approx(2.0f * c));
}

TEST_CASE("channelwise_mul is linear in the weights") {
    std::mt19937 rng(7);
    auto x = random_tensor<float>(1, 4, 3, 3, rng);
    auto w = random_tensor<float>(1, 4, 1, 1, rng);
    auto w2 = w;
    for (auto& v : w2.data) v *= 2.5f;
    auto a = channelwise_mul(x, w2);
    auto b = channelwise_mul(x, w);
    for (std::size_t i = 0; i < a.size(); ++i)
        CHECK(a.data[i] == doctest::Approx(2.5f * b.data[i]).epsilon(1e-6));
}

TEST_CASE("channelwise_mul rejects wrong weight shape") {
    std::mt19937 rng(8);
    auto x = random_tensor<float>(1, 4, 2, 2, rng);
    Tensor4<float> w(1, 3, 1, 1, 1.0f);
    CHECK_THROWS_AS(channelwise_mul(x, w), ShapeMismatch);
}

TEST_CASE("tensors reject degenerate dimensions") {
    CHECK_THROWS_AS(Tensor4<float>(0, 1, 1, 1), ShapeMismatch);
    CHECK_THROWS_AS(Tensor4<float>(1, 1, -2, 1), ShapeMismatch);
}

TEST_CASE("binary round trip preserves shape and payload") {
    std::mt19937 rng(9);
    auto x = random_tensor<float>(2, 3, 4, 5, rng);
    std::stringstream buf;
    write_tensor(buf, x);
    // 16-byte header + float32 payload
    CHECK(buf.str().size() == 16 + x.size() * 4);
    auto y = read_tensor<float>(buf);
    CHECK(y.n == 2);
    CHECK(y.c == 3);
    CHECK(y.h == 4);
    CHECK(y.w == 5);
    CHECK(max_abs_diff(x, y) == 0.0);
}

TEST_CASE("header is little-endian n,c,h,w") {
    Tensor4<float> x(1, 2, 3, 4, 0.0f);
    std::stringstream buf;
    write_tensor(buf, x);
    std::string s = buf.str();
    CHECK(static_cast<unsigned char>(s[0]) == 1);
    CHECK(static_cast<unsigned char>(s[4]) == 2);
    CHECK(static_cast<unsigned char>(s[8]) == 3);
    CHECK(static_cast<unsigned char>(s[12]) == 4);
    for (int i = 0; i < 16; ++i)
        if (i % 4 != 0) CHECK(s[static_cast<std::size_t>(i)] == 0);
}
