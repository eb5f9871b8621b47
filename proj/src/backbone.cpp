#include "stroke/backbone.hpp"

#include <cmath>
#include <numeric>

#include "arch_internal.hpp"
#include "stroke/archive.hpp"
#include "stroke/errors.hpp"
#include "stroke/rng.hpp"

namespace stroke {

namespace {

void require(bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
}

}  // namespace

void BackboneConfig::validate() const {
    require(image_side >= 8, "image_side must be at least 8");
    require(embed_dim > 0 && depth > 0 && heads > 0, "embed_dim, depth and heads must be positive");
    require(dropout >= 0.0 && dropout < 1.0, "dropout must lie in [0, 1)");
    switch (arch) {
        case Arch::vit:
            require(patch_size > 0 && image_side % patch_size == 0, "image_side must be divisible by patch_size");
            require(embed_dim % heads == 0, "heads must divide embed_dim");
            break;
        case Arch::tnt:
            require(patch_size > 0 && image_side % patch_size == 0, "image_side must be divisible by patch_size");
            require(embed_dim % heads == 0, "heads must divide embed_dim");
            require(inner_patch_size > 0 && patch_size % inner_patch_size == 0,
                    "patch_size must be divisible by inner_patch_size");
            require(embed_dim % 2 == 0 && (embed_dim / 2) % heads == 0,
                    "tnt inner width is embed_dim/2 and heads must divide it");
            break;
        case Arch::convnext:
            require(patch_size > 0 && image_side % patch_size == 0, "image_side must be divisible by patch_size");
            require(kernel_size > 0 && kernel_size % 2 == 1, "kernel_size must be odd");
            break;
        case Arch::maxvit: {
            require(window_size > 0, "window_size must be positive");
            require(image_side % 2 == 0, "image_side must be even for the strided stem");
            // stem halves the side; stages 1..depth-1 halve again
            int64_t side = image_side / 2;
            for (int64_t s = 0; s < depth; ++s) {
                if (s > 0) {
                    require(side % 2 == 0, "stage input side must be even to downsample");
                    side /= 2;
                }
                require(side % window_size == 0,
                        "every stage side must be divisible by window_size (stage " + std::to_string(s) +
                            " has side " + std::to_string(side) + ")");
            }
            require(embed_dim % heads == 0, "heads must divide embed_dim");
            break;
        }
    }
}

const char* arch_name(BackboneConfig::Arch a) {
    switch (a) {
        case BackboneConfig::Arch::vit: return "vit";
        case BackboneConfig::Arch::tnt: return "tnt";
        case BackboneConfig::Arch::convnext: return "convnext";
        case BackboneConfig::Arch::maxvit: return "maxvit";
    }
    return "vit";
}

BackboneConfig::Arch arch_from_name(const std::string& s) {
    if (s == "vit") return BackboneConfig::Arch::vit;
    if (s == "tnt") return BackboneConfig::Arch::tnt;
    if (s == "convnext") return BackboneConfig::Arch::convnext;
    if (s == "maxvit") return BackboneConfig::Arch::maxvit;
    throw ConfigError("unknown architecture '" + s + "' (expected vit, tnt, convnext or maxvit)");
}

nlohmann::json backbone_config_to_json(const BackboneConfig& cfg) {
    return nlohmann::json{{"arch", arch_name(cfg.arch)},
                          {"image_side", cfg.image_side},
                          {"patch_size", cfg.patch_size},
                          {"embed_dim", cfg.embed_dim},
                          {"depth", cfg.depth},
                          {"heads", cfg.heads},
                          {"inner_patch_size", cfg.inner_patch_size},
                          {"window_size", cfg.window_size},
                          {"kernel_size", cfg.kernel_size},
                          {"dropout", cfg.dropout}};
}

BackboneConfig backbone_config_from_json(const nlohmann::json& j) {
    BackboneConfig cfg;
    try {
        if (j.contains("arch")) cfg.arch = arch_from_name(j.at("arch").get<std::string>());
        cfg.image_side = j.value("image_side", cfg.image_side);
        cfg.patch_size = j.value("patch_size", cfg.patch_size);
        cfg.embed_dim = j.value("embed_dim", cfg.embed_dim);
        cfg.depth = j.value("depth", cfg.depth);
        cfg.heads = j.value("heads", cfg.heads);
        cfg.inner_patch_size = j.value("inner_patch_size", cfg.inner_patch_size);
        cfg.window_size = j.value("window_size", cfg.window_size);
        cfg.kernel_size = j.value("kernel_size", cfg.kernel_size);
        cfg.dropout = j.value("dropout", cfg.dropout);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad backbone config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

Backbone::Backbone(BackboneConfig cfg, uint64_t init_seed) : cfg_(std::move(cfg)), init_seed_(init_seed) {
    cfg_.validate();
}

Parameter& Backbone::add_weight(const std::string& name, std::vector<int64_t> shape) {
    Parameter& p = store_.create(name, std::move(shape));
    Rng rng(derive_seed(derive_seed(init_seed_, "param-init"), name));
    init_trunc_normal(p.value, rng, 0.02);
    return p;
}

Parameter& Backbone::add_zeros(const std::string& name, std::vector<int64_t> shape) {
    return store_.create(name, std::move(shape));
}

Parameter& Backbone::add_ones(const std::string& name, std::vector<int64_t> shape) {
    Parameter& p = store_.create(name, std::move(shape));
    std::fill(p.value.data(), p.value.data() + p.value.size(), 1.0);
    return p;
}

void Backbone::add_layernorm(const std::string& prefix, int64_t dim) {
    add_ones(prefix + ".gamma", {dim});
    add_zeros(prefix + ".beta", {dim});
}

void Backbone::add_attention(const std::string& prefix, int64_t dim) {
    for (const char* leg : {"q", "k", "v", "proj"}) {
        add_weight(prefix + "." + leg + ".weight", {dim, dim});
        add_zeros(prefix + "." + leg + ".bias", {dim});
    }
}

void Backbone::add_mlp(const std::string& prefix, int64_t dim, int64_t hidden) {
    add_weight(prefix + ".fc1.weight", {hidden, dim});
    add_zeros(prefix + ".fc1.bias", {hidden});
    add_weight(prefix + ".fc2.weight", {dim, hidden});
    add_zeros(prefix + ".fc2.bias", {dim});
}

void Backbone::add_transformer_block(const std::string& prefix, int64_t dim, int64_t hidden) {
    add_layernorm(prefix + ".norm1", dim);
    add_attention(prefix + ".attn", dim);
    add_layernorm(prefix + ".norm2", dim);
    add_mlp(prefix + ".mlp", dim, hidden);
}

Value Backbone::drop(Ctx& c, Value x) {
    if (!c.training || c.dropout == 0.0) {
        ++c.site;  // keep site numbering stable across training/eval
        return x;
    }
    return c.t.dropout(x, c.dropout, derive_seed(c.seed, c.site++));
}

Value Backbone::ln(Ctx& c, Value x, const std::string& prefix) {
    return c.t.layernorm_last(x, bound(prefix + ".gamma"), bound(prefix + ".beta"));
}

Value Backbone::mhsa(Ctx& c, Value x, const std::string& prefix, int64_t heads) {
    Tape& t = c.t;
    const Tensor& xt = t.val(x);
    const int64_t B = xt.dim(0), T = xt.dim(1), D = xt.dim(2);
    const int64_t dh = D / heads;
    auto split = [&](const char* leg) {
        Value y = t.linear(x, bound(prefix + "." + leg + ".weight"), bound(prefix + "." + leg + ".bias"));
        y = t.reshape(y, {B, T, heads, dh});
        y = t.permute(y, {0, 2, 1, 3});
        return t.reshape(y, {B * heads, T, dh});
    };
    Value q = split("q"), k = split("k"), v = split("v");
    Value scores = t.scale(t.bmm_nt(q, k), 1.0 / std::sqrt(static_cast<double>(dh)));
    Value probs = t.softmax_last(scores);
    if (c.fw) c.fw->attn_probs.push_back(probs);
    Value ctx = t.bmm(probs, v);
    ctx = t.reshape(ctx, {B, heads, T, dh});
    ctx = t.permute(ctx, {0, 2, 1, 3});
    ctx = t.reshape(ctx, {B, T, D});
    return t.linear(ctx, bound(prefix + ".proj.weight"), bound(prefix + ".proj.bias"));
}

Value Backbone::mlp(Ctx& c, Value x, const std::string& prefix) {
    Tape& t = c.t;
    Value h = t.linear(x, bound(prefix + ".fc1.weight"), bound(prefix + ".fc1.bias"));
    h = drop(c, t.gelu(h));
    return t.linear(h, bound(prefix + ".fc2.weight"), bound(prefix + ".fc2.bias"));
}

Value Backbone::transformer_block(Ctx& c, Value x, const std::string& prefix, int64_t heads) {
    x = c.t.add(x, drop(c, mhsa(c, ln(c, x, prefix + ".norm1"), prefix + ".attn", heads)));
    x = c.t.add(x, mlp(c, ln(c, x, prefix + ".norm2"), prefix + ".mlp"));
    return x;
}

Value Backbone::extract_patches(Tape& t, Value img, int64_t patch) {
    const Tensor& x = t.val(img);
    const int64_t B = x.dim(0), C = x.dim(1), S = x.dim(2);
    const int64_t g = S / patch;
    Value y = t.reshape(img, {B, C, g, patch, g, patch});
    y = t.permute(y, {0, 2, 4, 1, 3, 5});  // [B, g, g, C, P, P]
    return t.reshape(y, {B, g * g, C * patch * patch});
}

bool Backbone::has_head() const { return store_.has("head.weight") && store_.has("head.bias"); }

void Backbone::replace_head(uint64_t seed, int num_classes) {
    if (num_classes < 2) throw ConfigError("head needs at least 2 classes");
    if (store_.has("head.weight")) store_.remove("head.weight");
    if (store_.has("head.bias")) store_.remove("head.bias");
    Parameter& w = store_.create("head.weight", {num_classes, feature_dim_});
    Rng rng(derive_seed(derive_seed(seed, "head-init"), "head.weight"));
    init_trunc_normal(w.value, rng, 0.02);
    store_.create("head.bias", {num_classes});
    num_classes_ = num_classes;
}

void Backbone::apply_freeze(FreezeMode mode) {
    if (mode == FreezeMode::full) {
        store_.set_all_trainable(true);
        return;
    }
    store_.set_all_trainable(false);
    if (!has_head()) throw Error("cannot freeze to head only: model has no head");
    store_.get("head.weight").trainable = true;
    store_.get("head.bias").trainable = true;
}

Forward Backbone::forward(Tape& t, Value images, bool training, uint64_t dropout_seed) {
    if (!has_head()) throw Error("model has no classification head; call replace_head first");
    const Tensor& x = t.val(images);
    if (x.rank() != 4 || x.dim(1) != 3 || x.dim(2) != cfg_.image_side || x.dim(3) != cfg_.image_side)
        throw ShapeError("forward expects [B,3," + std::to_string(cfg_.image_side) + "," +
                         std::to_string(cfg_.image_side) + "], got " + x.shape_str());
    store_.bind(t);
    Forward fw = run(t, images, training, dropout_seed);
    fw.logits = t.linear(fw.features, bound("head.weight"), bound("head.bias"));
    return fw;
}

std::unique_ptr<Backbone> make_backbone(const BackboneConfig& cfg, uint64_t init_seed) {
    cfg.validate();
    switch (cfg.arch) {
        case BackboneConfig::Arch::vit: return detail::make_vit(cfg, init_seed);
        case BackboneConfig::Arch::tnt: return detail::make_tnt(cfg, init_seed);
        case BackboneConfig::Arch::convnext: return detail::make_convnext(cfg, init_seed);
        case BackboneConfig::Arch::maxvit: return detail::make_maxvit(cfg, init_seed);
    }
    throw ConfigError("unknown architecture");
}

void save_backbone(const std::filesystem::path& path, const Backbone& model, nlohmann::json extra_meta) {
    nlohmann::json meta = std::move(extra_meta);
    meta["format"] = "backbone";
    meta["config"] = backbone_config_to_json(model.config());
    meta["head_classes"] = model.has_head() ? model.num_classes() : 0;
    write_store_archive(path, model.params(), meta);
}

std::unique_ptr<Backbone> load_backbone(const std::filesystem::path& path) {
    Archive a = read_archive(path);
    if (!a.meta.contains("config")) throw SchemaError("archive " + path.string() + " carries no backbone config");
    BackboneConfig cfg = backbone_config_from_json(a.meta.at("config"));
    auto model = make_backbone(cfg, 0);
    const int head_classes = a.meta.value("head_classes", 0);
    if (head_classes > 0) model->replace_head(0, head_classes);
    load_archive_into_store(a, model->params());
    return model;
}

std::vector<int64_t> window_partition_order(int64_t h, int64_t w, int64_t P) {
    if (P <= 0 || h % P != 0 || w % P != 0)
        throw ShapeError("window partition needs P dividing both sides, got " + std::to_string(h) + "x" +
                         std::to_string(w) + " with P=" + std::to_string(P));
    std::vector<int64_t> order;
    order.reserve(static_cast<size_t>(h * w));
    for (int64_t A = 0; A < h / P; ++A)
        for (int64_t B = 0; B < w / P; ++B)
            for (int64_t a = 0; a < P; ++a)
                for (int64_t b = 0; b < P; ++b) order.push_back((A * P + a) * w + (B * P + b));
    return order;
}

std::vector<int64_t> grid_partition_order(int64_t h, int64_t w, int64_t P) {
    if (P <= 0 || h % P != 0 || w % P != 0)
        throw ShapeError("grid partition needs P dividing both sides, got " + std::to_string(h) + "x" +
                         std::to_string(w) + " with P=" + std::to_string(P));
    std::vector<int64_t> order;
    order.reserve(static_cast<size_t>(h * w));
    for (int64_t a = 0; a < P; ++a)
        for (int64_t b = 0; b < P; ++b)
            for (int64_t A = 0; A < h / P; ++A)
                for (int64_t B = 0; B < w / P; ++B) order.push_back((A * P + a) * w + (B * P + b));
    return order;
}

std::vector<int64_t> inverse_permutation(const std::vector<int64_t>& perm) {
    std::vector<int64_t> inv(perm.size(), -1);
    for (size_t j = 0; j < perm.size(); ++j) {
        int64_t p = perm[j];
        if (p < 0 || static_cast<size_t>(p) >= perm.size() || inv[static_cast<size_t>(p)] != -1)
            throw ShapeError("not a permutation");
        inv[static_cast<size_t>(p)] = static_cast<int64_t>(j);
    }
    return inv;
}

}  // namespace stroke
