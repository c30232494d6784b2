// embanet command-line tool: analyze | gradcheck | train | infer | cam
//
// Exit codes: 0 success, 1 verification failure, 2 usage/spec error,
// 3 data error.

#include <iostream>

#include "CLI11.hpp"
#include "embanet/gradcheck.hpp"
#include "embanet/spec_io.hpp"
#include "embanet/train.hpp"

namespace {

using namespace embanet;

struct SpecArgs {
    std::string preset_name;
    std::string spec_path;
    std::vector<std::string> overrides;

    void attach(CLI::App* cmd) {
        auto* p = cmd->add_option("--preset", preset_name, "named preset");
        auto* s = cmd->add_option("--spec", spec_path, "spec JSON file");
        p->excludes(s);
        s->excludes(p);
        cmd->add_option("--set", overrides,
                        "dotted-path override applied to the spec, e.g. block.mbc.s=2");
    }

    NetworkSpec resolve() const {
        if (preset_name.empty() == spec_path.empty())
            throw SpecValidation("exactly one of --preset / --spec is required");
        nlohmann::json j = preset_name.empty() ? [&] {
            std::ifstream in(spec_path);
            if (!in) throw SpecValidation("cannot open spec file: " + spec_path);
            nlohmann::json doc;
            try {
                in >> doc;
            } catch (const nlohmann::json::exception& e) {
                throw SpecValidation("spec parse error: " + std::string(e.what()));
            }
            return doc;
        }() : spec_to_json(preset(preset_name));
        for (const auto& kv : overrides) apply_override(j, kv);
        return spec_from_json(j);
    }
};

std::array<int, 4> parse_shape(const std::string& s) {
    std::array<int, 4> dims{};
    std::size_t pos = 0;
    for (int i = 0; i < 4; ++i) {
        std::size_t next;
        dims[static_cast<std::size_t>(i)] = std::stoi(s.substr(pos), &next);
        pos += next;
        if (i < 3) {
            if (pos >= s.size() || s[pos] != 'x')
                throw SpecValidation("input shape must be NxCxHxW, got: " + s);
            ++pos;
        }
    }
    if (pos != s.size()) throw SpecValidation("input shape must be NxCxHxW, got: " + s);
    return dims;
}

int cmd_analyze(const SpecArgs& sa, const std::string& input, const std::string& csv_path,
                unsigned seed) {
    NetworkSpec ns = sa.resolve();
    auto dims = parse_shape(input);
    Model<float> model(ns, seed);
    auto rep = model.count_complexity(dims[1], dims[2], dims[3]);
    std::cout << format_report_text<float>(rep);
    if (!csv_path.empty()) {
        std::ofstream out(csv_path);
        if (!out) throw DataFormat("cannot write csv: " + csv_path);
        out << format_report_csv<float>(rep);
        std::cout << "csv written to " << csv_path << "\n";
    }
    return 0;
}

int cmd_gradcheck(const std::string& op, unsigned seed, int trials, double tolerance) {
    std::vector<GradCheckResult> results;
    if (op.empty() || op == "all") {
        results = gradcheck_all(seed, trials, tolerance);
    } else {
        results.push_back(gradcheck_op(op, seed, trials, tolerance));
    }
    bool all_pass = true;
    for (const auto& r : results) {
        std::printf("%-18s max rel err %.3e  %s\n", r.op.c_str(), r.max_rel_err,
                    r.pass ? "PASS" : "FAIL");
        all_pass = all_pass && r.pass;
    }
    return all_pass ? 0 : 1;
}

struct DataArgs {
    std::string kind = "blobs";  // blobs | cifar10 | cifar100
    std::string path;
    int samples = 256;
    int side = 8;
    unsigned data_seed = 42;

    void attach(CLI::App* cmd) {
        cmd->add_option("--data", kind, "dataset: blobs | cifar10 | cifar100")
            ->check(CLI::IsMember({"blobs", "cifar10", "cifar100"}));
        cmd->add_option("--data-path", path, "CIFAR binary batch file");
        cmd->add_option("--samples", samples, "synthetic sample count");
        cmd->add_option("--side", side, "synthetic image side");
        cmd->add_option("--data-seed", data_seed, "synthetic data seed");
    }

    Dataset<float> load(int classes) const {
        if (kind == "blobs") return synthetic_blobs<float>(classes, samples, 3, side, side, data_seed);
        if (path.empty()) throw DataFormat("--data-path required for cifar data");
        return load_cifar_batch<float>(path, kind == "cifar10" ? 10 : 100);
    }
};

int cmd_train(const SpecArgs& sa, const DataArgs& da, int epochs, int batch, unsigned seed,
              const std::string& schedule_name, double smoothing, bool aug,
              const std::string& out_prefix) {
    NetworkSpec ns = sa.resolve();
    Model<float> model(ns, seed);
    Dataset<float> ds = da.load(ns.classes);
    LrSchedule sched = schedule_name == "cosine" ? LrSchedule::cosine(epochs) : LrSchedule::step();
    auto hist = train<float>(model, ds, nullptr, sched, epochs, batch, seed, smoothing, aug,
                             &std::cout);
    std::string metrics_path = out_prefix + ".metrics.csv";
    std::ofstream mf(metrics_path);
    if (!mf) throw DataFormat("cannot write metrics: " + metrics_path);
    mf << metrics_csv(hist);
    save_checkpoint(model, out_prefix + ".json", out_prefix + ".bin");
    std::cout << "checkpoint written to " << out_prefix << ".json / .bin\n"
              << "metrics written to " << metrics_path << "\n";
    return 0;
}

int cmd_infer(const SpecArgs& sa, const std::string& checkpoint, const std::string& input_path,
              unsigned seed, int topk) {
    NetworkSpec ns = sa.resolve();
    Model<float> model(ns, seed);
    if (!checkpoint.empty()) load_checkpoint(model, checkpoint);
    Tensor4<float> x;
    {
        std::ifstream in(input_path, std::ios::binary);
        if (!in) throw DataFormat("cannot open input tensor: " + input_path);
        x = read_tensor<float>(in);
    }
    Tape<float> tape;
    auto trace = model.forward(tape, x, BatchNormMode::Infer);
    const auto& logits = tape.value(trace.logits);
    auto probs = softmax_axis(logits, 1);
    std::vector<int> order(static_cast<std::size_t>(logits.c));
    for (int k = 0; k < logits.c; ++k) order[static_cast<std::size_t>(k)] = k;
    // ties break toward the lowest class index (stable sort, descending prob)
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return probs.at(0, a, 0, 0) > probs.at(0, b, 0, 0);
    });
    for (int k = 0; k < std::min(topk, logits.c); ++k) {
        int cls = order[static_cast<std::size_t>(k)];
        std::printf("class %d  prob %.6f  logit %.6f\n", cls, probs.at(0, cls, 0, 0),
                    logits.at(0, cls, 0, 0));
    }
    return 0;
}

int cmd_cam(const SpecArgs& sa, const std::string& checkpoint, const std::string& input_path,
            int target, std::string layer, unsigned seed, const std::string& out_prefix) {
    NetworkSpec ns = sa.resolve();
    Model<float> model(ns, seed);
    if (!checkpoint.empty()) load_checkpoint(model, checkpoint);
    Tensor4<float> x;
    {
        std::ifstream in(input_path, std::ios::binary);
        if (!in) throw DataFormat("cannot open input tensor: " + input_path);
        x = read_tensor<float>(in);
    }
    if (target < 0) {
        Tape<float> tape;
        auto trace = model.forward(tape, x, BatchNormMode::Infer);
        const auto& logits = tape.value(trace.logits);
        target = 0;
        for (int k = 1; k < logits.c; ++k)
            if (logits.at(0, k, 0, 0) > logits.at(0, target, 0, 0)) target = k;
    }
    if (layer.empty()) layer = model.default_cam_layer();
    auto heat = gradcam(model, x, target, layer);
    write_pgm(heat, out_prefix + ".pgm");
    {
        std::ofstream out(out_prefix + ".bin", std::ios::binary);
        if (!out) throw DataFormat("cannot write heatmap tensor: " + out_prefix + ".bin");
        write_tensor(out, heat);
    }
    std::cout << "class " << target << " heatmap " << heat.h << "x" << heat.w << " written to "
              << out_prefix << ".pgm / .bin\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"multi-branch attention network toolkit"};
    app.require_subcommand(1);

    SpecArgs analyze_spec, train_spec, infer_spec, cam_spec;
    DataArgs train_data;
    std::string input_shape = "1x3x224x224", analyze_csv;
    std::string gc_op = "all";
    unsigned seed = 1;
    int gc_trials = 10;
    double gc_tol = 1e-4;
    int epochs = 20, batch = 64, topk = 5;
    double smoothing = 0.1;
    bool aug = false;
    std::string schedule = "step", out_prefix = "run", checkpoint, input_path, cam_layer;
    int cam_target = -1;

    auto* analyze = app.add_subcommand("analyze", "per-layer parameter/MAC report");
    analyze_spec.attach(analyze);
    analyze->add_option("--input", input_shape, "input shape NxCxHxW");
    analyze->add_option("--csv", analyze_csv, "also write the report as CSV");
    analyze->add_option("--seed", seed, "init seed");

    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient certification");
    gradcheck->add_option("--op", gc_op, "op name or 'all'");
    gradcheck->add_option("--seed", seed, "rng seed");
    gradcheck->add_option("--trials", gc_trials, "random inputs per op");
    gradcheck->add_option("--tolerance", gc_tol, "max relative error");

    auto* train_cmd = app.add_subcommand("train", "train a model, write checkpoint + metrics");
    train_spec.attach(train_cmd);
    train_data.attach(train_cmd);
    train_cmd->add_option("--epochs", epochs, "epoch count");
    train_cmd->add_option("--batch", batch, "batch size");
    train_cmd->add_option("--seed", seed, "seed for init, shuffling, augmentation");
    train_cmd->add_option("--schedule", schedule, "lr schedule: step | cosine")
        ->check(CLI::IsMember({"step", "cosine"}));
    train_cmd->add_option("--smoothing", smoothing, "label smoothing epsilon");
    train_cmd->add_flag("--augment", aug, "pad-4 random crop + horizontal flip");
    train_cmd->add_option("--out", out_prefix, "output prefix for checkpoint/metrics");

    auto* infer = app.add_subcommand("infer", "top-k prediction for one input tensor");
    infer_spec.attach(infer);
    infer->add_option("--checkpoint", checkpoint, "checkpoint manifest JSON");
    infer->add_option("--input", input_path, "binary input tensor")->required();
    infer->add_option("--topk", topk, "classes to print");
    infer->add_option("--seed", seed, "init seed when no checkpoint given");

    auto* cam = app.add_subcommand("cam", "class-activation heatmap (PGM + raw tensor)");
    cam_spec.attach(cam);
    cam->add_option("--checkpoint", checkpoint, "checkpoint manifest JSON");
    cam->add_option("--input", input_path, "binary input tensor")->required();
    cam->add_option("--target", cam_target, "target class (default: predicted class)");
    cam->add_option("--layer", cam_layer, "activation tap name (default: last stage)");
    cam->add_option("--seed", seed, "init seed when no checkpoint given");
    cam->add_option("--out", out_prefix, "output prefix for heatmap files");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        if (analyze->parsed()) return cmd_analyze(analyze_spec, input_shape, analyze_csv, seed);
        if (gradcheck->parsed()) return cmd_gradcheck(gc_op == "all" ? "" : gc_op, seed, gc_trials, gc_tol);
        if (train_cmd->parsed())
            return cmd_train(train_spec, train_data, epochs, batch, seed, schedule, smoothing,
                             aug, out_prefix);
        if (infer->parsed()) return cmd_infer(infer_spec, checkpoint, input_path, seed, topk);
        if (cam->parsed())
            return cmd_cam(cam_spec, checkpoint, input_path, cam_target, cam_layer, seed,
                           out_prefix);
    } catch (const SpecValidation& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const UnknownPreset& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const UnregisteredOp& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const DataFormat& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const LabelOutOfRange& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
