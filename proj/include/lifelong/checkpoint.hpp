#pragma once

#include <fstream>
#include <string>

#include <json.hpp>

#include "lifelong/errors.hpp"
#include "lifelong/nn.hpp"
#include "lifelong/regularizers.hpp"

namespace lifelong {

// Checkpoint container, format "lifelong-model" v1: architecture block plus a
// flat parameter map path -> {shape, values}. Plain JSON; doubles survive a
// round trip exactly (shortest-representation printing).
inline nlohmann::json checkpoint_to_json(const ContinualModel& model) {
    nlohmann::json j;
    j["format"] = "lifelong-model";
    j["version"] = 1;
    const BackboneConfig& cfg = model.config();
    j["backbone"] = {{"input_dim", cfg.input_dim},
                     {"hidden", cfg.hidden},
                     {"output_dim", cfg.output_dim},
                     {"activation", activation_name(cfg.activation)}};
    j["frozen_backbone"] = model.frozen_backbone();
    j["adapters_enabled"] = model.adapters_enabled();
    j["tasks"] = nlohmann::json::array();
    for (std::size_t t = 0; t < model.num_tasks(); ++t) {
        const TaskBranch& tb = model.task(t);
        j["tasks"].push_back({{"classes", tb.class_list},
                              {"bottleneck", tb.adapter.bottleneck_width},
                              {"activation", activation_name(tb.adapter.down.activation)}});
    }
    nlohmann::json params = nlohmann::json::object();
    for (auto& [path, tensor] : model.named_parameters())
        params[path] = {{"shape", tensor.shape()}, {"values", tensor.values()}};
    j["params"] = std::move(params);
    return j;
}

inline ContinualModel checkpoint_from_json(const nlohmann::json& j) {
    try {
        if (j.at("format").get<std::string>() != "lifelong-model")
            throw ParseError("checkpoint: unexpected format tag");
        if (j.at("version").get<int>() != 1)
            throw ParseError("checkpoint: unsupported version " + j.at("version").dump());
        BackboneConfig cfg;
        const auto& bb = j.at("backbone");
        cfg.input_dim = bb.at("input_dim").get<std::size_t>();
        cfg.hidden = bb.at("hidden").get<std::vector<std::size_t>>();
        cfg.output_dim = bb.at("output_dim").get<std::size_t>();
        cfg.activation = activation_from_name(bb.at("activation").get<std::string>());

        Rng scratch(0);  // init values are overwritten below
        ContinualModel model(cfg, scratch, j.at("frozen_backbone").get<bool>());
        if (j.contains("adapters_enabled")) model.set_adapters_enabled(j.at("adapters_enabled").get<bool>());
        for (const auto& tj : j.at("tasks")) {
            auto classes = tj.at("classes").get<std::vector<int>>();
            model.spawn_task(classes.size(), tj.at("bottleneck").get<std::size_t>(), scratch, classes,
                             activation_from_name(tj.at("activation").get<std::string>()));
        }

        const auto& params = j.at("params");
        for (auto& [path, tensor] : model.named_parameters()) {
            if (!params.contains(path)) throw ParseError("checkpoint: missing parameter '" + path + "'");
            const auto& pj = params.at(path);
            auto shape = pj.at("shape").get<Shape>();
            auto values = pj.at("values").get<std::vector<double>>();
            if (shape != tensor.shape() || values.size() != tensor.size())
                throw ParseError("checkpoint: parameter '" + path + "' has shape " + shape_str(shape) +
                                 ", model expects " + shape_str(tensor.shape()));
            for (double v : values)
                if (!std::isfinite(v)) throw ParseError("checkpoint: non-finite value in '" + path + "'");
            tensor.values() = std::move(values);
        }
        return model;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("checkpoint: malformed document: ") + e.what());
    }
}

// regularizer state rides along in the same container as the model
inline nlohmann::json state_to_json(const RegularizerState& state) {
    nlohmann::json j;
    j["temperature"] = state.temperature;
    j["feature_metric"] = state.metric == FeatureMetric::cosine ? "cosine" : "squared";
    j["anchors"] = nlohmann::json::array();
    for (const WeightAnchor& a : state.anchors) {
        nlohmann::json aj = nlohmann::json::array();
        for (const WeightAnchor::Entry& e : a.entries)
            aj.push_back({{"path", e.path}, {"theta_star", e.theta_star}, {"importance", e.importance}});
        j["anchors"].push_back(std::move(aj));
    }
    j["teachers"] = nlohmann::json::array();
    for (const FrozenTeacher& t : state.teachers)
        j["teachers"].push_back({{"task_id", t.task_id},
                                 {"checksum", t.param_checksum},
                                 {"projection", {{"shape", t.projection.shape()}, {"values", t.projection.values()}}},
                                 {"model", checkpoint_to_json(t.model)}});
    return j;
}

inline RegularizerState state_from_json(const nlohmann::json& j) {
    try {
        RegularizerState s;
        s.temperature = j.at("temperature").get<double>();
        const std::string metric = j.at("feature_metric").get<std::string>();
        if (metric == "cosine")
            s.metric = FeatureMetric::cosine;
        else if (metric == "squared")
            s.metric = FeatureMetric::squared;
        else
            throw ParseError("state: unknown feature metric '" + metric + "'");
        for (const auto& aj : j.at("anchors")) {
            WeightAnchor a;
            for (const auto& ej : aj)
                a.entries.push_back({ej.at("path").get<std::string>(),
                                     ej.at("theta_star").get<std::vector<double>>(),
                                     ej.at("importance").get<std::vector<double>>()});
            s.anchors.push_back(std::move(a));
        }
        for (const auto& tj : j.at("teachers")) {
            FrozenTeacher t;
            t.task_id = tj.at("task_id").get<std::size_t>();
            t.param_checksum = tj.at("checksum").get<std::uint64_t>();
            t.model = checkpoint_from_json(tj.at("model"));
            auto shape = tj.at("projection").at("shape").get<Shape>();
            t.projection = Tensor::from(shape, tj.at("projection").at("values").get<std::vector<double>>());
            if (t.model.checksum() != t.param_checksum)
                throw ParseError("state: teacher snapshot checksum mismatch");
            s.teachers.push_back(std::move(t));
        }
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("state: malformed document: ") + e.what());
    }
}

inline void save_checkpoint(const ContinualModel& model, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw InputError("cannot open '" + path + "' for writing");
    f << checkpoint_to_json(model).dump(1) << "\n";
    if (!f.good()) throw InputError("write failed for '" + path + "'");
}

inline ContinualModel load_checkpoint(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw InputError("cannot open '" + path + "'");
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("checkpoint '" + path + "': " + e.what());
    }
    return checkpoint_from_json(j);
}

}  // namespace lifelong
