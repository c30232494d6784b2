#pragma once

#include <fstream>
#include <set>

#include "embanet/net.hpp"
#include "json.hpp"

namespace embanet {

// JSON (de)serialization of NetworkSpec, schema "embanet-spec/1".
// Parsing is strict: unknown fields are rejected so typos in hand-written
// specs fail loudly instead of silently reverting to defaults.

namespace spec_json {

using nlohmann::json;

inline void expect_keys(const json& j, const std::string& path,
                        const std::set<std::string>& allowed) {
    if (!j.is_object()) throw SpecValidation(path + ": expected an object");
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!allowed.count(it.key()))
            throw SpecValidation(path + ": unknown field '" + it.key() + "'");
}

inline std::string stem_to_string(StemKind s) {
    switch (s) {
        case StemKind::ImageNet: return "imagenet";
        case StemKind::Cifar: return "cifar";
        case StemKind::MobileNet: return "mobilenet";
    }
    return "imagenet";
}

inline StemKind stem_from_string(const std::string& s, const std::string& path) {
    if (s == "imagenet") return StemKind::ImageNet;
    if (s == "cifar") return StemKind::Cifar;
    if (s == "mobilenet") return StemKind::MobileNet;
    throw SpecValidation(path + ": unknown stem '" + s + "'");
}

inline std::string block_kind_to_string(BlockKind k) {
    switch (k) {
        case BlockKind::ResNetBottleneck: return "resnet-bottleneck";
        case BlockKind::EMBABottleneck: return "emba-bottleneck";
        case BlockKind::SEBottleneck: return "attention-bottleneck";
        case BlockKind::InvertedResidual: return "inverted-residual";
        case BlockKind::DWMBAInvertedResidual: return "dwmba-inverted-residual";
    }
    return "resnet-bottleneck";
}

inline BlockKind block_kind_from_string(const std::string& s, const std::string& path) {
    if (s == "resnet-bottleneck") return BlockKind::ResNetBottleneck;
    if (s == "emba-bottleneck") return BlockKind::EMBABottleneck;
    if (s == "attention-bottleneck") return BlockKind::SEBottleneck;
    if (s == "inverted-residual") return BlockKind::InvertedResidual;
    if (s == "dwmba-inverted-residual") return BlockKind::DWMBAInvertedResidual;
    throw SpecValidation(path + ": unknown block kind '" + s + "'");
}

inline json mbc_to_json(const MBCConfig& c) {
    json j;
    j["operator"] = c.op == MBCOperator::Multiplex ? "multiplex" : "split";
    j["s"] = c.s;
    j["kernels"] = c.kernels;
    j["groups"] = c.nominal_groups;
    j["stride"] = c.stride;
    return j;
}

inline MBCConfig mbc_from_json(const json& j, const std::string& path) {
    expect_keys(j, path, {"operator", "s", "kernels", "groups", "stride"});
    MBCConfig c;
    std::string op = j.at("operator").get<std::string>();
    if (op == "multiplex")
        c.op = MBCOperator::Multiplex;
    else if (op == "split")
        c.op = MBCOperator::Split;
    else
        throw SpecValidation(path + ".operator: unknown operator '" + op + "'");
    c.s = j.at("s").get<int>();
    c.kernels = j.at("kernels").get<std::vector<int>>();
    c.nominal_groups = j.at("groups").get<std::vector<int>>();
    if (j.contains("stride")) c.stride = j.at("stride").get<int>();
    return c;
}

inline json attention_to_json(const AttentionKind& a) {
    json j;
    if (a.variant == AttentionVariant::SE) {
        j["variant"] = "se";
        j["reduction"] = a.se_reduction;
    } else {
        j["variant"] = "eca";
        j["kernel"] = a.eca_kernel;
    }
    return j;
}

inline AttentionKind attention_from_json(const json& j, const std::string& path) {
    expect_keys(j, path, {"variant", "reduction", "kernel"});
    std::string v = j.at("variant").get<std::string>();
    if (v == "se") {
        AttentionKind a = AttentionKind::se(16);
        if (j.contains("reduction")) a.se_reduction = j.at("reduction").get<int>();
        return a;
    }
    if (v == "eca") {
        AttentionKind a = AttentionKind::eca(3);
        if (j.contains("kernel")) a.eca_kernel = j.at("kernel").get<int>();
        return a;
    }
    throw SpecValidation(path + ".variant: unknown attention variant '" + v + "'");
}

}  // namespace spec_json

inline nlohmann::json spec_to_json(const NetworkSpec& ns) {
    using nlohmann::json;
    json j;
    j["schema"] = "embanet-spec/1";
    j["name"] = ns.name;
    j["stem"] = spec_json::stem_to_string(ns.stem);
    j["stem_width"] = ns.stem_width;
    if (ns.head_width > 0) j["head_width"] = ns.head_width;
    j["classes"] = ns.classes;
    json stages = json::array();
    for (const auto& st : ns.stages) {
        json s;
        s["blocks"] = st.blocks;
        s["width"] = st.width;
        s["stride"] = st.stride;
        s["expand"] = st.expand;
        stages.push_back(s);
    }
    j["stages"] = stages;
    json blk;
    blk["kind"] = spec_json::block_kind_to_string(ns.block.kind);
    blk["expansion"] = ns.block.expansion;
    if (ns.block.mbc) blk["mbc"] = spec_json::mbc_to_json(*ns.block.mbc);
    if (ns.block.attention) blk["attention"] = spec_json::attention_to_json(*ns.block.attention);
    blk["recalibration"] = ns.block.recal == RecalibrationKind::Softmax ? "softmax" : "sigmoid";
    j["block"] = blk;
    return j;
}

inline NetworkSpec spec_from_json(const nlohmann::json& j) {
    using spec_json::expect_keys;
    expect_keys(j, "spec", {"schema", "name", "stem", "stem_width", "head_width", "classes",
                            "stages", "block"});
    if (!j.contains("schema") || j.at("schema") != "embanet-spec/1")
        throw SpecValidation("spec.schema: expected \"embanet-spec/1\"");
    NetworkSpec ns;
    if (j.contains("name")) ns.name = j.at("name").get<std::string>();
    if (j.contains("stem"))
        ns.stem = spec_json::stem_from_string(j.at("stem").get<std::string>(), "spec.stem");
    if (j.contains("stem_width")) ns.stem_width = j.at("stem_width").get<int>();
    if (j.contains("head_width")) ns.head_width = j.at("head_width").get<int>();
    if (j.contains("classes")) ns.classes = j.at("classes").get<int>();
    if (!j.contains("stages")) throw SpecValidation("spec.stages: required");
    if (!j.at("stages").is_array()) throw SpecValidation("spec.stages: expected an array");
    int si = 0;
    for (const auto& s : j.at("stages")) {
        std::string path = "spec.stages[" + std::to_string(si++) + "]";
        expect_keys(s, path, {"blocks", "width", "stride", "expand"});
        StageSpec st;
        if (s.contains("blocks")) st.blocks = s.at("blocks").get<int>();
        if (s.contains("width")) st.width = s.at("width").get<int>();
        if (s.contains("stride")) st.stride = s.at("stride").get<int>();
        if (s.contains("expand")) st.expand = s.at("expand").get<int>();
        ns.stages.push_back(st);
    }
    if (j.contains("block")) {
        const auto& blk = j.at("block");
        expect_keys(blk, "spec.block", {"kind", "expansion", "mbc", "attention", "recalibration"});
        if (blk.contains("kind"))
            ns.block.kind = spec_json::block_kind_from_string(blk.at("kind").get<std::string>(),
                                                              "spec.block.kind");
        if (blk.contains("expansion")) ns.block.expansion = blk.at("expansion").get<int>();
        if (blk.contains("mbc"))
            ns.block.mbc = spec_json::mbc_from_json(blk.at("mbc"), "spec.block.mbc");
        if (blk.contains("attention"))
            ns.block.attention =
                spec_json::attention_from_json(blk.at("attention"), "spec.block.attention");
        if (blk.contains("recalibration")) {
            std::string r = blk.at("recalibration").get<std::string>();
            if (r == "softmax")
                ns.block.recal = RecalibrationKind::Softmax;
            else if (r == "sigmoid")
                ns.block.recal = RecalibrationKind::Sigmoid;
            else
                throw SpecValidation("spec.block.recalibration: unknown value '" + r + "'");
        }
    }
    ns.validate();
    return ns;
}

inline NetworkSpec load_spec_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw SpecValidation("cannot open spec file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw SpecValidation("spec parse error in " + path + ": " + e.what());
    }
    return spec_from_json(j);
}

/// Apply a dotted-path override like "block.mbc.s=2" or "classes=10" to a
/// spec JSON document. Values parse as JSON when possible, else as strings.
inline void apply_override(nlohmann::json& j, const std::string& kv) {
    auto eq = kv.find('=');
    if (eq == std::string::npos)
        throw SpecValidation("override must be key=value: " + kv);
    std::string path = kv.substr(0, eq);
    std::string raw = kv.substr(eq + 1);
    nlohmann::json value;
    try {
        value = nlohmann::json::parse(raw);
    } catch (const nlohmann::json::exception&) {
        value = raw;
    }
    nlohmann::json* cur = &j;
    std::size_t pos = 0;
    while (true) {
        auto dot = path.find('.', pos);
        std::string key = path.substr(pos, dot == std::string::npos ? dot : dot - pos);
        if (key.empty()) throw SpecValidation("bad override path: " + path);
        if (dot == std::string::npos) {
            (*cur)[key] = value;
            return;
        }
        if (!cur->contains(key) || !(*cur)[key].is_object()) (*cur)[key] = nlohmann::json::object();
        cur = &(*cur)[key];
        pos = dot + 1;
    }
}

}  // namespace embanet
