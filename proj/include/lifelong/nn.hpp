#pragma once

#include <cstdint>
#include <cstring>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lifelong/errors.hpp"
#include "lifelong/rng.hpp"
#include "lifelong/tensor.hpp"

namespace lifelong {

enum class Activation { identity, relu, tanh };

inline const char* activation_name(Activation a) {
    switch (a) {
        case Activation::identity: return "identity";
        case Activation::relu: return "relu";
        case Activation::tanh: return "tanh";
    }
    return "identity";
}

inline Activation activation_from_name(const std::string& s) {
    if (s == "identity") return Activation::identity;
    if (s == "relu") return Activation::relu;
    if (s == "tanh") return Activation::tanh;
    throw ConfigError("unknown activation '" + s + "' (expected identity|relu|tanh)");
}

// fully-connected layer: activation(x·W + bias), weight laid out in×out
struct LinearLayer {
    Tensor weight;
    Tensor bias;  // undefined handle when the layer carries no bias
    Activation activation = Activation::identity;

    LinearLayer() = default;
    LinearLayer(std::size_t in, std::size_t out, Activation act, bool with_bias, Rng& rng)
        : activation(act) {
        weight = Tensor::zeros({in, out}, true);
        const double bound = 1.0 / std::sqrt(static_cast<double>(in));
        for (double& v : weight.values()) v = rng.uniform(-bound, bound);
        if (with_bias) bias = Tensor::zeros({out}, true);
    }

    std::size_t in_dim() const { return weight.shape()[0]; }
    std::size_t out_dim() const { return weight.shape()[1]; }

    Tensor forward(Graph& g, Tensor x) const {
        if (x.shape().size() != 2 || x.shape()[1] != in_dim())
            throw DimensionError("linear layer expects [batch x " + std::to_string(in_dim()) + "], got " +
                                 shape_str(x.shape()));
        Tensor z = g.matmul(x, weight);
        if (bias.defined()) z = g.add_rowvec(z, bias);
        switch (activation) {
            case Activation::identity: return z;
            case Activation::relu: return g.relu(z);
            case Activation::tanh: return g.tanh(z);
        }
        return z;
    }
};

// shared feature extractor: a small MLP, activation applied after every layer
struct BackboneConfig {
    std::size_t input_dim = 16;
    std::vector<std::size_t> hidden = {64, 64};
    std::size_t output_dim = 64;
    Activation activation = Activation::relu;
};

struct Backbone {
    std::vector<LinearLayer> layers;
    std::size_t output_dim = 0;

    Backbone() = default;
    Backbone(const BackboneConfig& cfg, Rng& rng) : output_dim(cfg.output_dim) {
        if (cfg.input_dim == 0 || cfg.output_dim == 0)
            throw ConfigError("backbone dims must be positive");
        std::size_t prev = cfg.input_dim;
        for (std::size_t h : cfg.hidden) {
            if (h == 0) throw ConfigError("backbone hidden width must be positive");
            layers.emplace_back(prev, h, cfg.activation, true, rng);
            prev = h;
        }
        layers.emplace_back(prev, cfg.output_dim, cfg.activation, true, rng);
    }

    std::size_t input_dim() const { return layers.front().in_dim(); }

    Tensor forward(Graph& g, Tensor x) const {
        Tensor h = std::move(x);
        for (const LinearLayer& l : layers) h = l.forward(g, h);
        return h;
    }
};

// bottleneck residual block: features + g(g(features·W_down)·W_up);
// with zero up-projection and g(0)=0 this is exactly the identity
struct Adapter {
    LinearLayer down;  // d -> b
    LinearLayer up;    // b -> d
    std::size_t bottleneck_width = 0;

    Adapter() = default;
    Adapter(std::size_t d, std::size_t b, Activation g, bool with_bias, Rng& rng)
        : down(d, b, g, with_bias, rng), up(b, d, g, with_bias, rng), bottleneck_width(b) {
        if (b < 1 || b > d)
            throw DimensionError("bottleneck width " + std::to_string(b) + " outside [1, " + std::to_string(d) +
                                 "]");
    }

    std::size_t feature_dim() const { return down.in_dim(); }

    Tensor forward(Graph& g, Tensor features) const {
        if (features.shape().size() != 2 || features.shape()[1] != feature_dim())
            throw DimensionError("adapter expects [batch x " + std::to_string(feature_dim()) + "], got " +
                                 shape_str(features.shape()));
        Tensor residual = up.forward(g, down.forward(g, features));
        return g.add(features, residual);
    }
};

struct TaskBranch {
    Adapter adapter;
    LinearLayer head;  // d -> classes, identity activation (raw logits)
    std::vector<int> class_list;
};

// backbone shared across tasks plus one frozen-after-training (adapter, head)
// branch per task
class ContinualModel {
public:
    ContinualModel() = default;
    ContinualModel(const BackboneConfig& cfg, Rng& rng, bool frozen_backbone = false)
        : backbone_(cfg, rng), config_(cfg), frozen_backbone_(frozen_backbone) {}

    const BackboneConfig& config() const { return config_; }
    bool frozen_backbone() const { return frozen_backbone_; }
    void set_frozen_backbone(bool b) { frozen_backbone_ = b; }
    bool adapters_enabled() const { return adapters_enabled_; }
    // Disabled adapters are spawned with a zero up-projection (an exact
    // identity) and left out of the trainable set, so the branch reduces to a
    // plain head while the parameter layout stays uniform.
    void set_adapters_enabled(bool b) { adapters_enabled_ = b; }
    std::size_t feature_dim() const { return backbone_.output_dim; }
    std::size_t num_tasks() const { return tasks_.size(); }
    const Backbone& backbone() const { return backbone_; }
    const TaskBranch& task(std::size_t t) const {
        if (t >= tasks_.size())
            throw LookupError("task " + std::to_string(t) + " unknown; model has " +
                              std::to_string(tasks_.size()));
        return tasks_[t];
    }

    void spawn_task(std::size_t num_classes, std::size_t bottleneck_width, Rng& rng,
                    std::vector<int> class_list = {}, Activation g = Activation::relu) {
        if (num_classes == 0) throw ConfigError("spawn_task: need at least one class");
        if (class_list.empty()) {
            int base = 0;
            for (const TaskBranch& tb : tasks_) base += static_cast<int>(tb.class_list.size());
            for (std::size_t c = 0; c < num_classes; ++c) class_list.push_back(base + static_cast<int>(c));
        }
        if (class_list.size() != num_classes)
            throw ConfigError("spawn_task: class_list length " + std::to_string(class_list.size()) +
                              " != num_classes " + std::to_string(num_classes));
        TaskBranch tb;
        tb.adapter = Adapter(feature_dim(), bottleneck_width, g, true, rng);
        if (!adapters_enabled_)
            for (double& v : tb.adapter.up.weight.values()) v = 0.0;
        // zero-init biases; weights uniform(-1/sqrt(fan_in), +1/sqrt(fan_in))
        tb.head = LinearLayer(feature_dim(), num_classes, Activation::identity, true, rng);
        tb.class_list = std::move(class_list);
        tasks_.push_back(std::move(tb));
    }

    // backbone features, computed once and shared by every branch fed from them
    Tensor features(Graph& g, Tensor x) const { return backbone_.forward(g, x); }

    Tensor branch_logits(Graph& g, Tensor feats, std::size_t task_id) const {
        const TaskBranch& tb = task(task_id);
        return tb.head.forward(g, tb.adapter.forward(g, feats));
    }

    Tensor forward(Graph& g, Tensor x, std::size_t task_id) const {
        return branch_logits(g, features(g, x), task_id);
    }

    // parameter paths in stable order: backbone layers first, then branches
    std::vector<std::pair<std::string, Tensor>> named_parameters() const {
        std::vector<std::pair<std::string, Tensor>> out;
        auto push_layer = [&out](const std::string& prefix, const LinearLayer& l) {
            out.emplace_back(prefix + "/weight", l.weight);
            if (l.bias.defined()) out.emplace_back(prefix + "/bias", l.bias);
        };
        for (std::size_t i = 0; i < backbone_.layers.size(); ++i)
            push_layer("backbone/layer" + std::to_string(i), backbone_.layers[i]);
        for (std::size_t t = 0; t < tasks_.size(); ++t) {
            const std::string p = "task" + std::to_string(t);
            push_layer(p + "/adapter/down", tasks_[t].adapter.down);
            push_layer(p + "/adapter/up", tasks_[t].adapter.up);
            push_layer(p + "/head", tasks_[t].head);
        }
        return out;
    }

    static bool is_backbone_path(const std::string& path) { return path.rfind("backbone/", 0) == 0; }

    // what the optimizer may touch while task_id trains
    std::vector<std::pair<std::string, Tensor>> trainable_parameters(std::size_t task_id) const {
        if (task_id >= tasks_.size())
            throw LookupError("task " + std::to_string(task_id) + " unknown; model has " +
                              std::to_string(tasks_.size()));
        std::vector<std::pair<std::string, Tensor>> out;
        const std::string want = "task" + std::to_string(task_id) + "/";
        for (auto& [path, t] : named_parameters()) {
            if (is_backbone_path(path)) {
                if (!frozen_backbone_) out.emplace_back(path, t);
            } else if (path.rfind(want, 0) == 0) {
                if (!adapters_enabled_ && path.find("/adapter/") != std::string::npos) continue;
                out.emplace_back(path, t);
            }
        }
        return out;
    }

    void zero_grad() const {
        for (auto& [path, t] : named_parameters()) {
            (void)path;
            t.zero_grad();
        }
    }

    std::uint64_t checksum(const std::string& prefix = "") const {
        std::uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a
        auto mix = [&h](const void* p, std::size_t n) {
            const unsigned char* b = static_cast<const unsigned char*>(p);
            for (std::size_t i = 0; i < n; ++i) {
                h ^= b[i];
                h *= 0x100000001b3ull;
            }
        };
        for (auto& [path, t] : named_parameters()) {
            if (!prefix.empty() && path.rfind(prefix, 0) != 0) continue;
            mix(path.data(), path.size());
            mix(t.values().data(), t.values().size() * sizeof(double));
        }
        return h;
    }

    ContinualModel deep_copy() const {
        ContinualModel m;
        m.config_ = config_;
        m.frozen_backbone_ = frozen_backbone_;
        m.adapters_enabled_ = adapters_enabled_;
        m.backbone_.output_dim = backbone_.output_dim;
        auto copy_layer = [](const LinearLayer& l) {
            LinearLayer c;
            c.weight = l.weight.clone();
            if (l.bias.defined()) c.bias = l.bias.clone();
            c.activation = l.activation;
            return c;
        };
        for (const LinearLayer& l : backbone_.layers) m.backbone_.layers.push_back(copy_layer(l));
        for (const TaskBranch& tb : tasks_) {
            TaskBranch c;
            c.adapter.down = copy_layer(tb.adapter.down);
            c.adapter.up = copy_layer(tb.adapter.up);
            c.adapter.bottleneck_width = tb.adapter.bottleneck_width;
            c.head = copy_layer(tb.head);
            c.class_list = tb.class_list;
            m.tasks_.push_back(std::move(c));
        }
        return m;
    }

private:
    Backbone backbone_;
    BackboneConfig config_;
    std::vector<TaskBranch> tasks_;
    bool frozen_backbone_ = false;
    bool adapters_enabled_ = true;
};

}  // namespace lifelong
