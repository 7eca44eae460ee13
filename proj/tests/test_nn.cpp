#include "doctest.h"

#include <cstdio>
#include <fstream>

#include "lifelong/checkpoint.hpp"
#include "lifelong/nn.hpp"

#include "fd_oracle.hpp"

using namespace lifelong;

namespace {

ContinualModel small_model(std::uint64_t seed, std::size_t tasks = 2, bool frozen = false,
                           Activation g = Activation::relu) {
    BackboneConfig cfg;
    cfg.input_dim = 5;
    cfg.hidden = {8};
    cfg.output_dim = 6;
    cfg.activation = Activation::tanh;
    Rng rng(seed);
    ContinualModel m(cfg, rng, frozen);
    for (std::size_t t = 0; t < tasks; ++t) m.spawn_task(3, 3, rng, {}, g);
    return m;
}

}  // namespace

TEST_SUITE("nn") {

TEST_CASE("zero up-projection makes the adapter an exact identity") {
    Rng rng(1);
    Adapter a(4, 2, Activation::relu, true, rng);
    for (double& v : a.up.weight.values()) v = 0.0;
    for (double& v : a.up.bias.values()) v = 0.0;
    Tensor x = Tensor::from({3, 4}, {0.1, -2, 3, 4, 5, -6, 7, 0, -1, 2, -3, 4});
    Graph g;
    Tensor y = a.forward(g, x);
    CHECK(y.values() == x.values());  // bitwise
}

TEST_CASE("adapter hand evaluation with identity activation") {
    Rng rng(2);
    Adapter a(2, 1, Activation::identity, false, rng);
    a.down.weight.values() = {1, 1};   // 2x1
    a.up.weight.values() = {1, 0};     // 1x2
    Graph g;
    Tensor y = a.forward(g, Tensor::from({1, 2}, {2, 3}));
    CHECK(y.values() == std::vector<double>{7, 3});
}

TEST_CASE("adapter gradients match finite differences on a 4-row batch") {
    Rng rng(3);
    const std::size_t d = 5;
    Adapter a(d, 2, Activation::tanh, true, rng);
    Tensor x = Tensor::zeros({4, d});
    for (double& v : x.values()) v = rng.uniform(-1.0, 1.0);
    auto eval = [&]() {
        Graph g;
        return g.sum_sq(a.forward(g, x)).value();
    };
    Graph g;
    g.backward(g.sum_sq(a.forward(g, x)));
    for (Tensor* p : {&a.down.weight, &a.down.bias, &a.up.weight, &a.up.bias})
        CHECK(fd::max_rel_err(p->values(), p->grad(), eval) < 1e-5);
}

TEST_CASE("bottleneck width is bounded by the feature dim") {
    Rng rng(4);
    CHECK_THROWS_AS(Adapter(4, 0, Activation::relu, true, rng), DimensionError);
    CHECK_THROWS_AS(Adapter(4, 5, Activation::relu, true, rng), DimensionError);
    CHECK_NOTHROW(Adapter(4, 4, Activation::relu, true, rng));
}

TEST_CASE("adapter rejects wrong feature width") {
    Rng rng(5);
    Adapter a(4, 2, Activation::relu, true, rng);
    Graph g;
    CHECK_THROWS_AS(a.forward(g, Tensor::zeros({2, 3})), DimensionError);
}

TEST_CASE("zero head weights give all-zero logits") {
    ContinualModel m = small_model(10, 1);
    const TaskBranch& tb = m.task(0);
    for (double& v : const_cast<Tensor&>(tb.head.weight).values()) v = 0.0;
    Graph g;
    Tensor x = Tensor::filled({2, 5}, 0.3);
    Tensor logits = m.forward(g, x, 0);
    CHECK(logits.shape() == Shape{2, 3});
    for (double v : logits.values()) CHECK(v == 0.0);
}

TEST_CASE("logits carry each task's declared class count") {
    BackboneConfig cfg;
    cfg.input_dim = 4;
    cfg.hidden = {6};
    cfg.output_dim = 5;
    Rng rng(11);
    ContinualModel m(cfg, rng);
    m.spawn_task(2, 2, rng);
    m.spawn_task(7, 2, rng);
    Graph g;
    Tensor x = Tensor::filled({3, 4}, 0.5);
    CHECK(m.forward(g, x, 0).shape() == Shape{3, 2});
    CHECK(m.forward(g, x, 1).shape() == Shape{3, 7});
    CHECK_THROWS_AS(m.forward(g, x, 2), LookupError);
}

TEST_CASE("branches consume one shared feature pass") {
    ContinualModel m = small_model(12, 2);
    Graph g;
    Tensor x = Tensor::filled({2, 5}, 0.25);
    Tensor feats = m.features(g, x);
    Tensor l0 = m.branch_logits(g, feats, 0);
    Tensor l1 = m.branch_logits(g, feats, 1);
    CHECK(l0.shape() == Shape{2, 3});
    CHECK(l1.shape() == Shape{2, 3});
    // the composed forward equals branch-on-shared-features bitwise
    Graph g2;
    CHECK(m.forward(g2, x, 1).values() == l1.values());
}

TEST_CASE("spawn_task appends and stays deterministic") {
    ContinualModel a = small_model(77, 3);
    ContinualModel b = small_model(77, 3);
    CHECK(a.num_tasks() == 3);
    CHECK(a.checksum() == b.checksum());
    ContinualModel c = small_model(78, 3);
    CHECK(a.checksum() != c.checksum());
}

TEST_CASE("freshly spawned relu adapter is not the identity") {
    ContinualModel m = small_model(13, 1);
    Rng rng(99);
    Tensor x = Tensor::zeros({1, 5});
    for (double& v : x.values()) v = rng.uniform(-1.0, 1.0);
    Graph g;
    Tensor feats = m.features(g, x);
    Tensor adapted = m.task(0).adapter.forward(g, feats);
    double diff = 0.0;
    for (std::size_t i = 0; i < feats.size(); ++i) diff += std::fabs(adapted.values()[i] - feats.values()[i]);
    CHECK(diff > 1e-8);
}

TEST_CASE("weights honor the fan-in bound and biases start at zero") {
    ContinualModel m = small_model(21, 1);
    for (auto& [path, t] : m.named_parameters()) {
        if (path.ends_with("/bias")) {
            for (double v : t.values()) CHECK(v == 0.0);
        } else {
            double bound = 1.0 / std::sqrt(static_cast<double>(t.shape()[0]));
            for (double v : t.values()) {
                CHECK(v >= -bound);
                CHECK(v <= bound);
            }
        }
    }
}

TEST_CASE("parameter paths are stable and partitioned") {
    ContinualModel m = small_model(22, 2);
    auto params = m.named_parameters();
    // backbone: 2 layers x (w, b); each task: down w/b, up w/b, head w/b
    CHECK(params.size() == 4 + 2 * 6);
    CHECK(params[0].first == "backbone/layer0/weight");
    CHECK(params[4].first == "task0/adapter/down/weight");
    CHECK(params[10].first == "task1/adapter/down/weight");
    CHECK(ContinualModel::is_backbone_path("backbone/layer0/weight"));
    CHECK(!ContinualModel::is_backbone_path("task0/head/weight"));
}

TEST_CASE("trainable set respects current task and frozen backbone") {
    ContinualModel m = small_model(23, 3);
    auto p1 = m.trainable_parameters(1);
    CHECK(p1.size() == 4 + 6);
    for (auto& [path, t] : p1) CHECK((ContinualModel::is_backbone_path(path) || path.rfind("task1/", 0) == 0));

    m.set_frozen_backbone(true);
    auto p2 = m.trainable_parameters(1);
    CHECK(p2.size() == 6);
    for (auto& [path, t] : p2) CHECK(path.rfind("task1/", 0) == 0);

    CHECK_THROWS_AS(m.trainable_parameters(3), LookupError);
}

TEST_CASE("deep copy is independent of the original") {
    ContinualModel m = small_model(24, 2);
    ContinualModel c = m.deep_copy();
    CHECK(c.checksum() == m.checksum());
    auto params = m.named_parameters();
    params[0].second.values()[0] += 1.0;
    CHECK(c.checksum() != m.checksum());
    Graph g;
    Tensor x = Tensor::filled({1, 5}, 0.1);
    CHECK_NOTHROW(c.forward(g, x, 1));
}

TEST_CASE("checkpoint round trip preserves everything") {
    ContinualModel m = small_model(31, 2, true, Activation::tanh);
    const std::string path = "ckpt_roundtrip.json";
    save_checkpoint(m, path);
    ContinualModel r = load_checkpoint(path);
    CHECK(r.checksum() == m.checksum());
    CHECK(r.frozen_backbone() == m.frozen_backbone());
    CHECK(r.num_tasks() == 2);
    CHECK(r.task(1).class_list == m.task(1).class_list);
    CHECK(r.task(0).adapter.down.activation == Activation::tanh);
    CHECK(r.config().hidden == m.config().hidden);
    // forward agreement, bitwise
    Graph g1, g2;
    Tensor x = Tensor::filled({2, 5}, -0.4);
    CHECK(m.forward(g1, x, 0).values() == r.forward(g2, x, 0).values());
    std::remove(path.c_str());
}

TEST_CASE("checkpoint error paths") {
    CHECK_THROWS_AS(load_checkpoint("no_such_dir/nope.json"), InputError);

    const std::string bad = "ckpt_bad.json";
    {
        std::ofstream f(bad);
        f << "{ not json";
    }
    CHECK_THROWS_AS(load_checkpoint(bad), ParseError);

    ContinualModel m = small_model(32, 1);
    nlohmann::json j = checkpoint_to_json(m);
    nlohmann::json missing = j;
    missing["params"].erase("task0/head/weight");
    CHECK_THROWS_AS(checkpoint_from_json(missing), ParseError);

    nlohmann::json wrong_shape = j;
    wrong_shape["params"]["task0/head/weight"]["shape"] = {1, 1};
    CHECK_THROWS_AS(checkpoint_from_json(wrong_shape), ParseError);

    nlohmann::json wrong_fmt = j;
    wrong_fmt["format"] = "other";
    CHECK_THROWS_AS(checkpoint_from_json(wrong_fmt), ParseError);
    std::remove(bad.c_str());
}

}  // TEST_SUITE nn
