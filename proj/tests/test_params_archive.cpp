#include "doctest.h"

#include <cmath>
#include <fstream>

#include "stroke/archive.hpp"
#include "stroke/backbone.hpp"
#include "stroke/errors.hpp"
#include "stroke/params.hpp"
#include "test_util.hpp"

using namespace stroke;

TEST_SUITE("params") {

TEST_CASE("trunc normal init is deterministic and bounded") {
    Tensor a({64, 32}), b({64, 32});
    {
        Rng rng(42);
        init_trunc_normal(a, rng, 0.02);
    }
    {
        Rng rng(42);
        init_trunc_normal(b, rng, 0.02);
    }
    CHECK(a.bit_equal(b));
    for (int64_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i]) <= 0.04 + 1e-15);
    Rng rng(43);
    Tensor c({64, 32});
    init_trunc_normal(c, rng, 0.02);
    CHECK_FALSE(a.bit_equal(c));
}

TEST_CASE("store iteration order follows creation order") {
    ParamStore store;
    store.create("z", {1});
    store.create("a", {2});
    store.create("m", {3});
    auto names = store.names();
    REQUIRE(names.size() == 3);
    CHECK(names[0] == "z");
    CHECK(names[1] == "a");
    CHECK(names[2] == "m");
    CHECK(store.total_count() == 6);
    store.get("a").trainable = false;
    CHECK(store.trainable_count() == 4);
}

TEST_CASE("adam single step matches the closed-form update") {
    ParamStore store;
    auto& p = store.create("w", {2});
    p.value[0] = 1.0, p.value[1] = -2.0;
    p.grad = Tensor::zeros({2});
    p.grad[0] = 0.3, p.grad[1] = -0.1;

    const double lr = 0.01, eps = 1e-8;
    Adam opt(lr);
    opt.step(store.all());

    // At t=1 the bias-corrected moments reduce to mhat=g, vhat=g^2.
    for (int i = 0; i < 2; ++i) {
        const double g = (i == 0) ? 0.3 : -0.1;
        const double want = ((i == 0) ? 1.0 : -2.0) - lr * g / (std::sqrt(g * g) + eps);
        CHECK(p.value[i] == doctest::Approx(want).epsilon(1e-12));
    }
    CHECK(opt.t() == 1);
}

TEST_CASE("adam skips frozen parameters") {
    ParamStore store;
    auto& p = store.create("frozen", {1});
    p.value[0] = 5.0;
    p.grad = Tensor::zeros({1});
    p.grad[0] = 10.0;
    p.trainable = false;
    Adam opt(0.1);
    opt.step(store.all());
    CHECK(p.value[0] == 5.0);
}

}  // TEST_SUITE

TEST_SUITE("archive") {

TEST_CASE("archive round-trips tensors and meta bit-exactly") {
    testutil::TempDir dir;
    const auto path = dir / "t.stk";

    std::vector<NamedTensor> ts;
    ts.push_back({"alpha", testutil::random_tensor({3, 4}, 1)});
    ts.push_back({"beta", testutil::random_tensor({7}, 2)});
    nlohmann::json meta{{"format", "test"}, {"epoch", 3}};
    write_archive(path, ts, meta);

    Archive a = read_archive(path);
    CHECK(a.meta["format"] == "test");
    CHECK(a.meta["epoch"] == 3);
    REQUIRE(a.tensors.size() == 2);
    const Tensor* alpha = a.find("alpha");
    REQUIRE(alpha != nullptr);
    CHECK(alpha->bit_equal(ts[0].tensor));
    CHECK(a.find("beta")->bit_equal(ts[1].tensor));
    CHECK(a.find("gamma") == nullptr);
}

TEST_CASE("load followed by save is byte-identical") {
    testutil::TempDir dir;
    const auto p1 = dir / "a.stk";
    const auto p2 = dir / "b.stk";
    std::vector<NamedTensor> ts;
    ts.push_back({"w", testutil::random_tensor({5, 5}, 3)});
    write_archive(p1, ts, nlohmann::json{{"k", "v"}});
    Archive a = read_archive(p1);
    write_archive(p2, a.tensors, a.meta);

    std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
    std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(s1 == s2);
    CHECK_FALSE(s1.empty());
}

TEST_CASE("loading into a mismatched store names every offender") {
    testutil::TempDir dir;
    const auto path = dir / "m.stk";
    std::vector<NamedTensor> ts;
    ts.push_back({"present", testutil::random_tensor({2}, 4)});
    ts.push_back({"extra", testutil::random_tensor({2}, 5)});
    write_archive(path, ts, {});

    ParamStore store;
    store.create("present", {2});
    store.create("missing", {2});
    try {
        load_archive_into_store(read_archive(path), store);
        FAIL("expected SchemaError");
    } catch (const SchemaError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("extra") != std::string::npos);
        CHECK(msg.find("missing") != std::string::npos);
    }
}

TEST_CASE("shape mismatch is rejected") {
    testutil::TempDir dir;
    const auto path = dir / "s.stk";
    std::vector<NamedTensor> ts;
    ts.push_back({"w", testutil::random_tensor({2, 3}, 6)});
    write_archive(path, ts, {});
    ParamStore store;
    store.create("w", {3, 2});
    CHECK_THROWS_AS(load_archive_into_store(read_archive(path), store), SchemaError);
}

TEST_CASE("backbone save/load reproduces logits") {
    BackboneConfig cfg;
    cfg.arch = BackboneConfig::Arch::vit;
    cfg.image_side = 32;
    cfg.patch_size = 8;
    cfg.embed_dim = 24;
    cfg.depth = 1;
    cfg.heads = 3;
    auto model = make_backbone(cfg, 77);
    model->replace_head(78);

    testutil::TempDir dir;
    const auto path = dir / "vit.stk";
    save_backbone(path, *model);
    auto loaded = load_backbone(path);
    CHECK(loaded->config().arch == cfg.arch);
    CHECK(loaded->config().embed_dim == cfg.embed_dim);
    CHECK(loaded->has_head());

    for (int i = 0; i < 10; ++i) {
        Tensor img = testutil::random_tensor({1, 3, 32, 32}, 100 + static_cast<uint64_t>(i));
        Tape t1;
        model->params().bind(t1);
        auto f1 = model->forward(t1, t1.leaf(img));
        Tape t2;
        loaded->params().bind(t2);
        auto f2 = loaded->forward(t2, t2.leaf(img));
        const Tensor& l1 = t1.val(f1.logits);
        const Tensor& l2 = t2.val(f2.logits);
        REQUIRE(l1.same_shape(l2));
        for (int64_t j = 0; j < l1.size(); ++j) CHECK(std::abs(l1[j] - l2[j]) <= 1e-6);
    }
}

}  // TEST_SUITE
