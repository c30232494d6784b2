#pragma once

#include <algorithm>
#include <fstream>

#include "embanet/net.hpp"
#include "embanet/spec_io.hpp"

namespace embanet {

// --- optimizer ------------------------------------------------------------

template <typename T>
struct OptimizerState {
    T momentum = T(0.9);
    T weight_decay = T(1e-4);
    bool decay_bn = true;  // apply weight decay to BN affine parameters too
    std::vector<Tensor4<T>> buffers;

    void init(const ParameterStore<T>& params) {
        buffers.clear();
        for (const auto& e : params.entries) {
            Tensor4<T> b = e.value;
            std::fill(b.data.begin(), b.data.end(), T(0));
            buffers.push_back(std::move(b));
        }
    }
};

/// Classic coupled-weight-decay SGD with momentum:
///   g <- grad + wd*param; buf <- m*buf + g; param <- param - lr*buf
template <typename T>
void sgd_step(ParameterStore<T>& params, const GradientMap<T>& grads, OptimizerState<T>& state,
              T lr) {
    if (state.buffers.size() != params.entries.size()) state.init(params);
    for (std::size_t i = 0; i < params.entries.size(); ++i) {
        auto& e = params.entries[i];
        if (!e.trainable) continue;
        const auto& g = grads.grads[i];
        if (!g.same_shape(e.value)) throw ShapeMismatch("sgd_step: gradient shape mismatch");
        auto& buf = state.buffers[i];
        bool decay = state.decay_bn || e.name.find(".bn.") == std::string::npos;
        T wd = decay ? state.weight_decay : T(0);
        for (std::size_t k = 0; k < e.value.data.size(); ++k) {
            T gk = g.data[k] + wd * e.value.data[k];
            buf.data[k] = state.momentum * buf.data[k] + gk;
            e.value.data[k] -= lr * buf.data[k];
        }
    }
}

// --- learning-rate schedule -------------------------------------------------

struct LrSchedule {
    enum class Kind { Step, Cosine };
    Kind kind = Kind::Step;
    double initial = 0.1;
    double factor = 0.1;  // Step
    int every = 30;       // Step
    int total = 100;      // Cosine

    static LrSchedule step() { return {Kind::Step, 0.1, 0.1, 30, 0}; }
    static LrSchedule cosine(int total_epochs) {
        return {Kind::Cosine, 0.05, 0.0, 0, total_epochs};
    }

    double lr(int epoch) const {
        if (kind == Kind::Step) return initial * std::pow(factor, epoch / every);
        double t = static_cast<double>(epoch) / total;
        return initial * (1.0 + std::cos(3.14159265358979323846 * t)) / 2.0;
    }
};

// --- datasets ----------------------------------------------------------------

template <typename T>
struct Example {
    Tensor4<T> image;  // (1,c,h,w)
    int label = 0;
};

template <typename T>
struct Dataset {
    std::vector<Example<T>> examples;
    int classes = 0;
};

/// Gaussian blobs with class-dependent per-channel means; linearly separable
/// for any reasonable spread, good for optimizer smoke tests.
template <typename T>
Dataset<T> synthetic_blobs(int classes, int samples, int c, int h, int w, unsigned seed) {
    std::mt19937 rng(seed);
    std::normal_distribution<double> noise(0.0, 0.25);
    std::uniform_real_distribution<double> mean_dist(-1.0, 1.0);
    std::vector<std::vector<double>> means(classes, std::vector<double>(c));
    for (auto& m : means)
        for (auto& v : m) v = mean_dist(rng);
    Dataset<T> ds;
    ds.classes = classes;
    for (int i = 0; i < samples; ++i) {
        int label = i % classes;
        Tensor4<T> img(1, c, h, w);
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x)
                    img.at(0, ch, y, x) = static_cast<T>(means[label][ch] + noise(rng));
        ds.examples.push_back({std::move(img), label});
    }
    return ds;
}

struct CifarNormalization {
    std::array<double, 3> mean = {0.4914, 0.4822, 0.4465};
    std::array<double, 3> stddev = {0.2470, 0.2435, 0.2616};
};

/// CIFAR binary batch loader. CIFAR-10 records are 1 label byte + 3072
/// pixels; CIFAR-100 records are 2 label bytes (coarse, fine) + 3072 pixels,
/// the fine label (byte offset 1) is used. Pixels are R,G,B planes, 32x32
/// row-major, converted via (x/255 - mean)/std.
template <typename T>
Dataset<T> load_cifar_batch(const std::string& path, int classes,
                            const CifarNormalization& norm = {}) {
    if (classes != 10 && classes != 100)
        throw DataFormat("cifar loader: classes must be 10 or 100");
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataFormat("cannot open data file: " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    const std::size_t record = classes == 10 ? 3073 : 3074;
    if (bytes.empty() || bytes.size() % record != 0)
        throw DataFormat("bad cifar file length " + std::to_string(bytes.size()) +
                         ": expected a multiple of " + std::to_string(record));
    const std::size_t label_off = classes == 10 ? 0 : 1;
    Dataset<T> ds;
    ds.classes = classes;
    for (std::size_t off = 0; off < bytes.size(); off += record) {
        int label = bytes[off + label_off];
        if (label >= classes)
            throw LabelOutOfRange("cifar label " + std::to_string(label) + " out of range");
        Tensor4<T> img(1, 3, 32, 32);
        const unsigned char* px = bytes.data() + off + (classes == 10 ? 1 : 2);
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < 32; ++y)
                for (int x = 0; x < 32; ++x) {
                    double v = px[c * 1024 + y * 32 + x] / 255.0;
                    img.at(0, c, y, x) = static_cast<T>((v - norm.mean[c]) / norm.stddev[c]);
                }
        ds.examples.push_back({std::move(img), label});
    }
    return ds;
}

// --- augmentation --------------------------------------------------------------

/// Pad-4-and-random-crop followed by horizontal flip (p=0.5). Uses a
/// per-index RNG (seed xor index) so the result is independent of evaluation
/// order.
template <typename T>
Tensor4<T> augment(const Tensor4<T>& img, unsigned seed, std::size_t index) {
    std::mt19937 rng(seed ^ static_cast<unsigned>(index * 0x9e3779b9u + 1));
    const int pad = 4;
    std::uniform_int_distribution<int> off(0, 2 * pad);
    int dy = off(rng), dx = off(rng);
    std::uniform_int_distribution<int> coin(0, 1);
    bool flip = coin(rng) == 1;
    Tensor4<T> out(img.n, img.c, img.h, img.w);
    for (int c = 0; c < img.c; ++c)
        for (int y = 0; y < img.h; ++y)
            for (int x = 0; x < img.w; ++x) {
                int sy = y + dy - pad;
                int sx = x + dx - pad;
                if (flip) sx = img.w - 1 - sx;
                T v = (sy >= 0 && sy < img.h && sx >= 0 && sx < img.w) ? img.at(0, c, sy, sx)
                                                                       : T(0);
                out.at(0, c, y, x) = v;
            }
    return out;
}

// --- training loop ---------------------------------------------------------------

struct EpochMetrics {
    int epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double train_acc = 0.0;
    double eval_acc = -1.0;  // negative when no eval set
};

template <typename T>
Tensor4<T> stack_batch(const Dataset<T>& ds, const std::vector<int>& idx, bool aug,
                       unsigned seed) {
    const auto& first = ds.examples[static_cast<std::size_t>(idx[0])].image;
    Tensor4<T> batch(static_cast<int>(idx.size()), first.c, first.h, first.w);
    for (std::size_t b = 0; b < idx.size(); ++b) {
        const auto& ex = ds.examples[static_cast<std::size_t>(idx[b])];
        Tensor4<T> img = aug ? augment(ex.image, seed, static_cast<std::size_t>(idx[b]))
                             : ex.image;
        std::copy(img.data.begin(), img.data.end(),
                  batch.data.begin() + static_cast<std::ptrdiff_t>(b * img.data.size()));
    }
    return batch;
}

template <typename T>
int argmax_row(const Tensor4<T>& logits, int row) {
    int best = 0;
    for (int k = 1; k < logits.c; ++k)
        if (logits.at(row, k, 0, 0) > logits.at(row, best, 0, 0)) best = k;
    return best;
}

template <typename T>
double evaluate(Model<T>& model, const Dataset<T>& ds, int batch) {
    long long correct = 0;
    for (std::size_t start = 0; start < ds.examples.size(); start += static_cast<std::size_t>(batch)) {
        std::vector<int> idx;
        for (std::size_t i = start;
             i < std::min(ds.examples.size(), start + static_cast<std::size_t>(batch)); ++i)
            idx.push_back(static_cast<int>(i));
        Tensor4<T> x = stack_batch(ds, idx, false, 0);
        Tape<T> tape;
        auto trace = model.forward(tape, x, BatchNormMode::Infer);
        const auto& logits = tape.value(trace.logits);
        for (std::size_t b = 0; b < idx.size(); ++b)
            if (argmax_row(logits, static_cast<int>(b)) ==
                ds.examples[static_cast<std::size_t>(idx[b])].label)
                ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(ds.examples.size());
}

/// Deterministic epoch loop: shuffle with a per-epoch RNG derived from the
/// seed, full-batch sweeps, SGD with momentum and the configured schedule.
template <typename T>
std::vector<EpochMetrics> train(Model<T>& model, const Dataset<T>& train_set,
                                const Dataset<T>* eval_set, const LrSchedule& schedule,
                                int epochs, int batch, unsigned seed,
                                double label_smoothing = 0.1, bool aug = false,
                                std::ostream* log = nullptr) {
    if (train_set.classes != model.spec.classes)
        throw DataFormat("dataset classes " + std::to_string(train_set.classes) +
                         " != model classes " + std::to_string(model.spec.classes));
    OptimizerState<T> opt;
    opt.init(model.params);
    std::vector<EpochMetrics> history;
    std::vector<int> order(train_set.examples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    for (int epoch = 0; epoch < epochs; ++epoch) {
        std::mt19937 shuffle_rng(seed + static_cast<unsigned>(epoch) * 7919u);
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double lr = schedule.lr(epoch);
        double loss_sum = 0.0;
        long long correct = 0, seen = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch)) {
            std::vector<int> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                 order.begin() +
                                     static_cast<std::ptrdiff_t>(
                                         std::min(order.size(), start + static_cast<std::size_t>(batch))));
            Tensor4<T> x = stack_batch(train_set, idx, aug, seed);
            std::vector<int> labels;
            for (int i : idx) labels.push_back(train_set.examples[static_cast<std::size_t>(i)].label);
            Tape<T> tape;
            auto trace = model.forward(tape, x, BatchNormMode::Train);
            auto loss = tape.label_smooth_ce(trace.logits, labels, static_cast<T>(label_smoothing));
            tape.backward(loss, Tensor4<T>(1, 1, 1, 1, T(1)));
            auto grads = tape.parameter_gradients(model.params);
            sgd_step(model.params, grads, opt, static_cast<T>(lr));
            const auto& lv = tape.value(trace.logits);
            for (std::size_t b = 0; b < idx.size(); ++b)
                if (argmax_row(lv, static_cast<int>(b)) == labels[b]) ++correct;
            seen += static_cast<long long>(idx.size());
            loss_sum += static_cast<double>(tape.value(loss).data[0]) *
                        static_cast<double>(idx.size());
        }
        EpochMetrics m;
        m.epoch = epoch;
        m.lr = lr;
        m.train_loss = loss_sum / static_cast<double>(seen);
        m.train_acc = static_cast<double>(correct) / static_cast<double>(seen);
        if (eval_set) m.eval_acc = evaluate(model, *eval_set, batch);
        history.push_back(m);
        if (log) {
            (*log) << "epoch " << m.epoch << " lr " << m.lr << " loss " << m.train_loss
                   << " acc " << m.train_acc;
            if (eval_set) (*log) << " eval " << m.eval_acc;
            (*log) << "\n";
        }
    }
    return history;
}

inline std::string metrics_csv(const std::vector<EpochMetrics>& hist) {
    std::ostringstream os;
    os << "epoch,lr,train_loss,train_acc,eval_acc\n";
    for (const auto& m : hist) {
        os << m.epoch << "," << m.lr << "," << m.train_loss << "," << m.train_acc << ",";
        if (m.eval_acc >= 0) os << m.eval_acc;
        os << "\n";
    }
    return os.str();
}

// --- checkpoints -----------------------------------------------------------------

/// Checkpoint = JSON manifest (spec + parameter name -> [offset, shape])
/// alongside a single little-endian float32 blob.
template <typename T>
void save_checkpoint(const Model<T>& model, const std::string& manifest_path,
                     const std::string& blob_path) {
    nlohmann::json j;
    j["schema"] = "embanet-checkpoint/1";
    j["spec"] = spec_to_json(model.spec);
    j["blob"] = blob_path;
    nlohmann::json tensors = nlohmann::json::object();
    std::ofstream blob(blob_path, std::ios::binary);
    if (!blob) throw DataFormat("cannot write blob: " + blob_path);
    long long offset = 0;
    for (const auto& e : model.params.entries) {
        nlohmann::json t;
        t["offset"] = offset;
        t["shape"] = {e.value.n, e.value.c, e.value.h, e.value.w};
        t["trainable"] = e.trainable;
        tensors[e.name] = t;
        for (T v : e.value.data) {
            float f = static_cast<float>(v);
            std::uint32_t bits;
            std::memcpy(&bits, &f, 4);
            write_u32_le(blob, bits);
        }
        offset += static_cast<long long>(e.value.size()) * 4;
    }
    j["tensors"] = tensors;
    std::ofstream mf(manifest_path);
    if (!mf) throw DataFormat("cannot write manifest: " + manifest_path);
    mf << j.dump(2) << "\n";
}

template <typename T>
void load_checkpoint(Model<T>& model, const std::string& manifest_path) {
    std::ifstream mf(manifest_path);
    if (!mf) throw DataFormat("cannot open manifest: " + manifest_path);
    nlohmann::json j;
    try {
        mf >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataFormat(std::string("manifest parse error: ") + e.what());
    }
    if (!j.contains("schema") || j.at("schema") != "embanet-checkpoint/1")
        throw DataFormat("manifest schema: expected \"embanet-checkpoint/1\"");
    std::string blob_path = j.at("blob").get<std::string>();
    // resolve blob path relative to the manifest's directory
    auto slash = manifest_path.find_last_of('/');
    if (slash != std::string::npos && !blob_path.empty() && blob_path[0] != '/') {
        std::string sibling = manifest_path.substr(0, slash + 1) + blob_path;
        if (std::ifstream(sibling, std::ios::binary)) blob_path = sibling;
    }
    std::ifstream blob(blob_path, std::ios::binary);
    if (!blob) throw DataFormat("cannot open blob: " + blob_path);
    const auto& tensors = j.at("tensors");
    for (auto& e : model.params.entries) {
        if (!tensors.contains(e.name))
            throw DataFormat("checkpoint missing tensor: " + e.name);
        const auto& t = tensors.at(e.name);
        auto shape = t.at("shape").template get<std::vector<int>>();
        if (shape.size() != 4 || shape[0] != e.value.n || shape[1] != e.value.c ||
            shape[2] != e.value.h || shape[3] != e.value.w)
            throw ShapeMismatch("checkpoint shape mismatch for " + e.name);
        blob.seekg(t.at("offset").template get<long long>());
        for (auto& v : e.value.data) {
            std::uint32_t bits = read_u32_le(blob);
            float f;
            std::memcpy(&f, &bits, 4);
            v = static_cast<T>(f);
        }
        if (!blob) throw DataFormat("blob truncated while reading " + e.name);
    }
}

// --- Grad-CAM -----------------------------------------------------------------------

/// Class-activation heatmap at a named tap: channel weights are the global
/// average of d(score)/d(activation); the map is relu(sum_c w_c * act_c),
/// max-normalized into [0,1] (an all-zero map stays zero).
template <typename T>
Tensor4<T> gradcam(Model<T>& model, const Tensor4<T>& image, int target_class,
                   const std::string& layer) {
    Tape<T> tape;
    auto trace = model.forward(tape, image, BatchNormMode::Infer);
    auto tap = trace.tap(layer);
    const auto& logits = tape.value(trace.logits);
    if (target_class < 0 || target_class >= logits.c)
        throw LabelOutOfRange("target class " + std::to_string(target_class) + " out of range");
    Tensor4<T> seed_grad(logits.n, logits.c, 1, 1, T(0));
    seed_grad.at(0, target_class, 0, 0) = T(1);
    tape.backward(trace.logits, seed_grad);
    const auto& act = tape.value(tap);
    const auto& grad = tape.gradient(tap);
    Tensor4<T> heat(1, 1, act.h, act.w, T(0));
    for (int c = 0; c < act.c; ++c) {
        T w = T(0);
        for (int y = 0; y < act.h; ++y)
            for (int x = 0; x < act.w; ++x) w += grad.at(0, c, y, x);
        w /= static_cast<T>(act.h * act.w);
        for (int y = 0; y < act.h; ++y)
            for (int x = 0; x < act.w; ++x) heat.at(0, 0, y, x) += w * act.at(0, c, y, x);
    }
    T peak = T(0);
    for (auto& v : heat.data) {
        v = std::max(v, T(0));
        peak = std::max(peak, v);
    }
    if (peak > T(0))
        for (auto& v : heat.data) v /= peak;
    return heat;
}

template <typename T>
void write_pgm(const Tensor4<T>& heat, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataFormat("cannot write pgm: " + path);
    out << "P5\n" << heat.w << " " << heat.h << "\n255\n";
    for (int y = 0; y < heat.h; ++y)
        for (int x = 0; x < heat.w; ++x) {
            double v = std::clamp(static_cast<double>(heat.at(0, 0, y, x)), 0.0, 1.0);
            out.put(static_cast<char>(static_cast<int>(std::lround(v * 255.0))));
        }
}

}  // namespace embanet
