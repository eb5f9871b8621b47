#include "doctest.h"

#include "gradcheck.hpp"
#include "stroke/backbone.hpp"
#include "stroke/train.hpp"
#include "test_util.hpp"

using namespace stroke;

namespace {

// Restrict the finite-difference sweep to parameters whose name starts with
// one of the prefixes; everything else stays frozen (still in the graph).
void freeze_except(ParamStore& store, const std::vector<std::string>& prefixes) {
    for (Parameter* p : store.all()) {
        bool keep = false;
        for (const auto& pre : prefixes)
            if (p->name.rfind(pre, 0) == 0) keep = true;
        p->trainable = keep;
    }
}

double model_gradcheck(Backbone& model, const std::vector<std::string>& prefixes, uint64_t seed) {
    freeze_except(model.params(), prefixes);
    Tensor img = testutil::random_tensor({2, 3, model.config().image_side, model.config().image_side}, seed, 0.0, 1.0);
    std::vector<int> labels{static_cast<int>(seed % 3), static_cast<int>((seed + 1) % 3)};
    std::vector<double> weights{1.0, 1.6, 0.7};
    auto fn = [&](Tape& t) {
        auto fw = model.forward(t, t.leaf(img));
        return t.weighted_ce(fw.logits, labels, weights, true);
    };
    auto res = gradcheck::check_params(model.params(), fn, 3, seed * 31 + 7);
    INFO("worst coordinate: ", res.worst);
    CHECK(res.checked > 0);
    return res.max_rel;
}

}  // namespace

TEST_SUITE("gradients") {

TEST_CASE("vit attention parameters pass finite differences") {
    BackboneConfig cfg;
    cfg.image_side = 16;
    cfg.patch_size = 8;
    cfg.embed_dim = 8;
    cfg.depth = 1;
    cfg.heads = 2;
    auto model = make_backbone(cfg, 97);
    model->replace_head(98);
    CHECK(model_gradcheck(*model, {"blocks.0.attn."}, 1) < 1e-4);
}

TEST_CASE("vit end-to-end parameters pass finite differences") {
    BackboneConfig cfg;
    cfg.image_side = 16;
    cfg.patch_size = 8;
    cfg.embed_dim = 8;
    cfg.depth = 1;
    cfg.heads = 2;
    auto model = make_backbone(cfg, 99);
    model->replace_head(100);
    CHECK(model_gradcheck(*model, {""}, 2) < 1e-4);
}

TEST_CASE("convnext block parameters pass finite differences") {
    BackboneConfig cfg;
    cfg.arch = BackboneConfig::Arch::convnext;
    cfg.image_side = 16;
    cfg.patch_size = 4;
    cfg.embed_dim = 6;
    cfg.depth = 1;
    cfg.heads = 1;
    cfg.kernel_size = 3;
    auto model = make_backbone(cfg, 101);
    model->replace_head(102);
    CHECK(model_gradcheck(*model, {"blocks.0."}, 3) < 1e-4);
}

TEST_CASE("weighted cross entropy gradient matches the closed form") {
    ParamStore store;
    auto& logits = store.create("logits", {4, 3});
    logits.value = testutil::random_tensor({4, 3}, 55, -2.0, 2.0);
    const std::vector<int> labels{0, 2, 1, 0};
    const std::vector<double> w{2.0, 1.0, 0.5};

    auto fn = [&](Tape& t) { return t.weighted_ce(logits.bound, labels, w, true); };
    auto res = gradcheck::check_params(store, fn, 12, 7);
    CHECK(res.max_rel < 1e-6);

    // analytic cross-check: d/dlogits = w_label * (softmax - onehot) / sum(w_label)
    store.zero_grads();
    Tape t;
    store.bind(t);
    t.backward(fn(t));
    store.accumulate_grads(t);
    double norm = 0;
    for (int lb : labels) norm += w[static_cast<size_t>(lb)];
    for (int i = 0; i < 4; ++i) {
        std::vector<double> row{logits.value[i * 3], logits.value[i * 3 + 1], logits.value[i * 3 + 2]};
        auto p = softmax(row);
        for (int c = 0; c < 3; ++c) {
            const double want = w[static_cast<size_t>(labels[static_cast<size_t>(i)])] *
                                (p[static_cast<size_t>(c)] - (labels[static_cast<size_t>(i)] == c ? 1.0 : 0.0)) / norm;
            CHECK(std::abs(logits.grad[i * 3 + c] - want) <= 1e-6);
        }
    }
}

}  // TEST_SUITE
