#include <cstdio>
#include <fstream>

#include "doctest.h"
#include "embanet/train.hpp"

using namespace embanet;

namespace {

std::string temp_path(const std::string& stem) {
    return std::string("./") + stem;
}

}  // namespace

TEST_CASE("vanilla SGD: momentum 0, wd 0 is param minus lr*grad") {
    ParameterStore<double> params;
    Tensor4<double> w(1, 1, 1, 2);
    w.data = {1.0, -2.0};
    params.add("w", w);
    GradientMap<double> g;
    g.grads.emplace_back(1, 1, 1, 2);
    g.grads[0].data = {0.5, 0.25};
    OptimizerState<double> st;
    st.momentum = 0.0;
    st.weight_decay = 0.0;
    sgd_step(params, g, st, 0.1);
    CHECK(params[0].value.data[0] == doctest::Approx(1.0 - 0.05));
    CHECK(params[0].value.data[1] == doctest::Approx(-2.0 - 0.025));
}

TEST_CASE("zero learning rate leaves parameters bit-identical") {
    std::mt19937 rng(1);
    ParameterStore<double> params;
    params.add("w", random_tensor<double>(2, 3, 1, 1, rng));
    auto before = params[0].value;
    GradientMap<double> g;
    g.grads.push_back(random_tensor<double>(2, 3, 1, 1, rng));
    OptimizerState<double> st;
    sgd_step(params, g, st, 0.0);
    CHECK(max_abs_diff(params[0].value, before) == 0.0);
}

TEST_CASE("momentum recurrence matches a hand-unrolled trace") {
    ParameterStore<double> params;
    params.add("w", Tensor4<double>(1, 1, 1, 1, 1.0));
    OptimizerState<double> st;
    st.momentum = 0.9;
    st.weight_decay = 0.01;
    GradientMap<double> g;
    g.grads.emplace_back(1, 1, 1, 1, 0.2);

    double w_ref = 1.0, buf = 0.0, lr = 0.1;
    for (int step = 0; step < 2; ++step) {
        sgd_step(params, g, st, lr);
        double grad = 0.2 + 0.01 * w_ref;
        buf = 0.9 * buf + grad;
        w_ref -= lr * buf;
        CHECK(params[0].value.data[0] == doctest::Approx(w_ref).epsilon(1e-12));
    }
}

TEST_CASE("one SGD step decreases a convex quadratic") {
    // f(w) = 0.5 * L * w^2, curvature L=4, lr < 2/L
    ParameterStore<double> params;
    params.add("w", Tensor4<double>(1, 1, 1, 1, 3.0));
    OptimizerState<double> st;
    st.momentum = 0.0;
    st.weight_decay = 0.0;
    GradientMap<double> g;
    g.grads.emplace_back(1, 1, 1, 1, 4.0 * 3.0);
    sgd_step(params, g, st, 0.1);
    double w = params[0].value.data[0];
    CHECK(0.5 * 4.0 * w * w < 0.5 * 4.0 * 9.0);
}

TEST_CASE("step schedule boundaries") {
    auto s = LrSchedule::step();
    CHECK(s.lr(0) == doctest::Approx(0.1));
    CHECK(s.lr(29) == doctest::Approx(0.1));
    CHECK(s.lr(30) == doctest::Approx(0.01));
    CHECK(s.lr(60) == doctest::Approx(0.001));
}

TEST_CASE("cosine schedule starts at 0.05 and never increases") {
    auto s = LrSchedule::cosine(40);
    CHECK(s.lr(0) == doctest::Approx(0.05));
    for (int e = 1; e < 40; ++e) CHECK(s.lr(e) <= s.lr(e - 1) + 1e-15);
    CHECK(s.lr(40) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("label smoothing: uniform logits give ln K for any epsilon") {
    for (double eps : {0.0, 0.1, 0.5}) {
        Tape<double> tape;
        auto x = tape.leaf(Tensor4<double>(2, 100, 1, 1, 0.3));
        auto loss = tape.label_smooth_ce(x, {7, 42}, eps);
        CHECK(tape.value(loss).data[0] == doctest::Approx(std::log(100.0)).epsilon(1e-9));
    }
}

TEST_CASE("label smoothing formula matches a direct oracle") {
    std::mt19937 rng(2);
    auto logits = random_tensor<double>(3, 5, 1, 1, rng);
    std::vector<int> targets = {1, 4, 0};
    double eps = 0.1;
    Tape<double> tape;
    auto loss = tape.label_smooth_ce(tape.leaf(logits), targets, eps);

    double expect = 0;
    for (int n = 0; n < 3; ++n) {
        double mx = -1e30;
        for (int k = 0; k < 5; ++k) mx = std::max(mx, logits.at(n, k, 0, 0));
        double z = 0;
        for (int k = 0; k < 5; ++k) z += std::exp(logits.at(n, k, 0, 0) - mx);
        for (int k = 0; k < 5; ++k) {
            double q = eps / 5 + (k == targets[static_cast<std::size_t>(n)] ? 1 - eps : 0.0);
            double logp = logits.at(n, k, 0, 0) - mx - std::log(z);
            expect -= q * logp;
        }
    }
    expect /= 3;
    CHECK(tape.value(loss).data[0] == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("label smoothing validates epsilon and targets") {
    Tape<double> tape;
    auto x = tape.leaf(Tensor4<double>(1, 3, 1, 1, 0.0));
    CHECK_THROWS_AS(tape.label_smooth_ce(x, {0}, 1.0), InvalidEpsilon);
    CHECK_THROWS_AS(tape.label_smooth_ce(x, {0}, -0.1), InvalidEpsilon);
    auto y = tape.leaf(Tensor4<double>(1, 3, 1, 1, 0.0));
    CHECK_THROWS_AS(tape.label_smooth_ce(y, {3}, 0.1), LabelOutOfRange);
}

TEST_CASE("cifar loader round-trips handcrafted records") {
    // two CIFAR-10 records: label + 3072 pixel bytes
    std::string path = temp_path("cifar_test.bin");
    {
        std::ofstream out(path, std::ios::binary);
        for (int rec = 0; rec < 2; ++rec) {
            out.put(static_cast<char>(rec == 0 ? 3 : 9));
            for (int i = 0; i < 3072; ++i)
                out.put(static_cast<char>(rec == 0 ? (i % 256) : 255 - (i % 256)));
        }
    }
    CifarNormalization norm;
    norm.mean = {0.0, 0.0, 0.0};
    norm.stddev = {1.0, 1.0, 1.0};
    auto ds = load_cifar_batch<double>(path, 10, norm);
    REQUIRE(ds.examples.size() == 2);
    CHECK(ds.examples[0].label == 3);
    CHECK(ds.examples[1].label == 9);
    // first pixel of record 0 is byte 0, last pixel is byte (3071 % 256)
    CHECK(ds.examples[0].image.at(0, 0, 0, 0) == doctest::Approx(0.0));
    CHECK(ds.examples[0].image.at(0, 2, 31, 31) == doctest::Approx((3071 % 256) / 255.0));
    // de-normalization reproduces the original byte exactly
    double recovered = ds.examples[0].image.at(0, 1, 5, 7) * 255.0;
    CHECK(std::abs(recovered - std::round(recovered)) < 1e-9);
    std::remove(path.c_str());
}

TEST_CASE("cifar loader rejects bad lengths and labels") {
    std::string path = temp_path("cifar_bad.bin");
    {
        std::ofstream out(path, std::ios::binary);
        for (int i = 0; i < 3000; ++i) out.put(0);
    }
    CHECK_THROWS_AS(load_cifar_batch<float>(path, 10), DataFormat);
    {
        std::ofstream out(path, std::ios::binary);
        out.put(static_cast<char>(77));  // label 77 out of range for 10 classes
        for (int i = 0; i < 3072; ++i) out.put(0);
    }
    CHECK_THROWS_AS(load_cifar_batch<float>(path, 10), LabelOutOfRange);
    std::remove(path.c_str());
    CHECK_THROWS_AS(load_cifar_batch<float>("./does_not_exist.bin", 10), DataFormat);
}

TEST_CASE("cifar-100 records use the fine label at byte offset 1") {
    std::string path = temp_path("cifar100_test.bin");
    {
        std::ofstream out(path, std::ios::binary);
        out.put(static_cast<char>(11));  // coarse
        out.put(static_cast<char>(87));  // fine
        for (int i = 0; i < 3072; ++i) out.put(static_cast<char>(128));
    }
    auto ds = load_cifar_batch<float>(path, 100);
    REQUIRE(ds.examples.size() == 1);
    CHECK(ds.examples[0].label == 87);
    std::remove(path.c_str());
}

TEST_CASE("augmentation is deterministic per sample index") {
    std::mt19937 rng(3);
    auto img = random_tensor<float>(1, 3, 8, 8, rng);
    auto a = augment(img, 5, 12);
    auto b = augment(img, 5, 12);
    CHECK(max_abs_diff(a, b) == 0.0);
    auto c = augment(img, 5, 13);
    CHECK(a.same_shape(c));
}

TEST_CASE("training is deterministic and learns separable blobs") {
    auto run = [] {
        Model<float> m(preset("emba-tiny"), 7);
        auto ds = synthetic_blobs<float>(4, 128, 3, 8, 8, 42);
        auto hist = train<float>(m, ds, nullptr, LrSchedule::step(), 4, 64, 1);
        return std::make_pair(std::move(m), std::move(hist));
    };
    auto [m1, h1] = run();
    auto [m2, h2] = run();
    REQUIRE(h1.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(h1[i].train_loss == h2[i].train_loss);
        CHECK(h1[i].train_acc == h2[i].train_acc);
    }
    for (std::size_t i = 0; i < m1.params.entries.size(); ++i)
        CHECK(max_abs_diff(m1.params.entries[i].value, m2.params.entries[i].value) == 0.0);
    CHECK(h1.back().train_acc > h1.front().train_acc);
}

TEST_CASE("zero learning rate freezes the loss (no augmentation)") {
    Model<double> m(preset("emba-tiny"), 7);
    auto ds = synthetic_blobs<double>(4, 64, 3, 8, 8, 42);
    LrSchedule frozen = LrSchedule::step();
    frozen.initial = 0.0;
    auto hist = train<double>(m, ds, nullptr, frozen, 3, 64, 1);
    // note: BN running stats still update, but the evaluated (train-mode)
    // loss over identical batches stays constant
    CHECK(std::abs(hist[0].train_loss - hist[2].train_loss) < 1e-6);
}

TEST_CASE("dataset class count must match the model") {
    Model<float> m(preset("emba-tiny"), 7);
    auto ds = synthetic_blobs<float>(7, 32, 3, 8, 8, 1);
    CHECK_THROWS_AS(train<float>(m, ds, nullptr, LrSchedule::step(), 1, 16, 1), DataFormat);
}

TEST_CASE("metrics CSV has the documented header") {
    std::vector<EpochMetrics> hist = {{0, 0.1, 1.5, 0.4, -1.0}, {1, 0.1, 1.2, 0.6, 0.55}};
    auto csv = metrics_csv(hist);
    CHECK(csv.rfind("epoch,lr,train_loss,train_acc,eval_acc\n", 0) == 0);
    CHECK(csv.find("1,0.1,1.2,0.6,0.55\n") != std::string::npos);
}

TEST_CASE("checkpoint round trip restores parameters exactly") {
    Model<float> m(preset("emba-tiny"), 9);
    auto manifest = temp_path("ckpt_test.json");
    auto blob = temp_path("ckpt_test.bin");
    save_checkpoint(m, manifest, blob);
    Model<float> fresh(preset("emba-tiny"), 10);
    load_checkpoint(fresh, manifest);
    for (std::size_t i = 0; i < m.params.entries.size(); ++i)
        CHECK(max_abs_diff(m.params.entries[i].value, fresh.params.entries[i].value) == 0.0);
    std::remove(manifest.c_str());
    std::remove(blob.c_str());
}

TEST_CASE("gradcam: range, zero-gradient class, analytic single-channel case") {
    Model<float> m(preset("emba-tiny"), 11);
    std::mt19937 rng(4);
    auto x = random_tensor<float>(1, 3, 8, 8, rng);

    // rig the classifier: class 0 reads only channel 0 of the pooled
    // features, class 1 is disconnected
    for (auto& e : m.params.entries) {
        if (e.name == "classifier.fc.weight") {
            std::fill(e.value.data.begin(), e.value.data.end(), 0.0f);
            e.value.at(0, 0, 0, 0) = 2.5f;
        }
        if (e.name == "classifier.fc.bias")
            std::fill(e.value.data.begin(), e.value.data.end(), 0.0f);
    }

    auto heat = gradcam(m, x, 0, m.default_cam_layer());
    for (float v : heat.data) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }

    // closed form: heatmap proportional to relu(activation channel 0)
    Tape<float> tape;
    auto trace = m.forward(tape, x, BatchNormMode::Infer);
    const auto& act = tape.value(trace.tap(m.default_cam_layer()));
    Tensor4<float> expect(1, 1, act.h, act.w);
    for (int yy = 0; yy < act.h; ++yy)
        for (int xx = 0; xx < act.w; ++xx)
            expect.at(0, 0, yy, xx) = std::max(act.at(0, 0, yy, xx), 0.0f);
    float peak = *std::max_element(expect.data.begin(), expect.data.end());
    if (peak > 0)
        for (auto& v : expect.data) v /= peak;
    CHECK(max_abs_diff(heat, expect) < 1e-5);

    // disconnected class: all-zero map stays zero
    auto zero = gradcam(m, x, 1, m.default_cam_layer());
    for (float v : zero.data) CHECK(v == 0.0f);

    CHECK_THROWS_AS(gradcam(m, x, 0, "nonsense.layer"), UnknownLayer);
    CHECK_THROWS_AS(gradcam(m, x, 99, m.default_cam_layer()), LabelOutOfRange);
}

TEST_CASE("PGM writer emits a P5 header and one byte per pixel") {
    Tensor4<float> heat(1, 1, 2, 3, 0.5f);
    auto path = temp_path("heat_test.pgm");
    write_pgm(heat, path);
    std::ifstream in(path, std::ios::binary);
    std::string magic, dims, maxval;
    std::getline(in, magic);
    std::getline(in, dims);
    std::getline(in, maxval);
    CHECK(magic == "P5");
    CHECK(dims == "3 2");
    CHECK(maxval == "255");
    char px[6];
    in.read(px, 6);
    CHECK(in.gcount() == 6);
    CHECK(static_cast<unsigned char>(px[0]) == 128);
    std::remove(path.c_str());
}
