#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "stroke/params.hpp"
#include "stroke/tape.hpp"

namespace stroke {

struct BackboneConfig {
    enum class Arch { vit, tnt, convnext, maxvit } arch = Arch::vit;
    int64_t image_side = 64;
    int64_t patch_size = 8;  // stem patchify stride for convnext
    int64_t embed_dim = 64;
    int64_t depth = 2;  // transformer blocks; stages for maxvit
    int64_t heads = 4;
    int64_t inner_patch_size = 4;  // tnt only
    int64_t window_size = 4;       // maxvit only
    int64_t kernel_size = 7;       // convnext only
    double dropout = 0.0;

    void validate() const;  // throws ConfigError
};

const char* arch_name(BackboneConfig::Arch a);
BackboneConfig::Arch arch_from_name(const std::string& s);
nlohmann::json backbone_config_to_json(const BackboneConfig& cfg);
BackboneConfig backbone_config_from_json(const nlohmann::json& j);

/// One activation tap recorded during a forward pass. Token captures carry
/// their grid so they can be reshaped to (channels, h, w).
struct SpatialCapture {
    std::string name;
    Value value;
    enum class Kind { chw, tokens } kind = Kind::chw;
    int64_t channels = 0, h = 0, w = 0;
};

struct LayerInfo {
    std::string name;
    bool spatial = false;
    int64_t channels = 0, h = 0, w = 0;
};

struct Forward {
    Value features;  // [B, feature_dim]
    Value logits;    // [B, num_classes]
    std::vector<SpatialCapture> captures;  // registry order
    std::vector<Value> attn_probs;         // every attention probability node
};

enum class FreezeMode { head_only, full };

/// Feature extractor + named layer registry + classification head. Parameter
/// names are stable for a given config; initialization derives one RNG per
/// parameter from (init_seed, name), so adding layers never reshuffles
/// existing ones.
class Backbone {
public:
    virtual ~Backbone() = default;
    Backbone(const Backbone&) = delete;
    Backbone& operator=(const Backbone&) = delete;

    const BackboneConfig& config() const { return cfg_; }
    ParamStore& params() { return store_; }
    const ParamStore& params() const { return store_; }
    const std::vector<LayerInfo>& layer_registry() const { return registry_; }
    int64_t feature_dim() const { return feature_dim_; }

    bool has_head() const;
    int num_classes() const { return num_classes_; }
    /// Drops any existing head and installs a fresh affine feature_dim -> n map.
    void replace_head(uint64_t seed, int num_classes = 3);
    void apply_freeze(FreezeMode mode);

    /// Runs the model on an image batch leaf [B,3,S,S]; binds every parameter
    /// onto the tape first. Requires a head.
    Forward forward(Tape& t, Value images, bool training = false, uint64_t dropout_seed = 0);

protected:
    explicit Backbone(BackboneConfig cfg, uint64_t init_seed);

    virtual Forward run(Tape& t, Value images, bool training, uint64_t dropout_seed) = 0;

    // parameter creation (deterministic per-name init)
    Parameter& add_weight(const std::string& name, std::vector<int64_t> shape);  // trunc normal 0.02
    Parameter& add_zeros(const std::string& name, std::vector<int64_t> shape);
    Parameter& add_ones(const std::string& name, std::vector<int64_t> shape);
    void add_layernorm(const std::string& prefix, int64_t dim);
    void add_attention(const std::string& prefix, int64_t dim);
    void add_mlp(const std::string& prefix, int64_t dim, int64_t hidden);
    void add_transformer_block(const std::string& prefix, int64_t dim, int64_t hidden);

    // forward-pass building blocks (parameters must already be bound)
    struct Ctx {
        Tape& t;
        bool training;
        uint64_t seed;
        double dropout;
        Forward* fw;
        int64_t site = 0;
    };
    Value bound(const std::string& name) { return store_.get(name).bound; }
    Value drop(Ctx& c, Value x);
    Value ln(Ctx& c, Value x, const std::string& prefix);
    /// Scaled dot-product attention over [B,T,D]; records probability rows.
    Value mhsa(Ctx& c, Value x, const std::string& prefix, int64_t heads);
    Value mlp(Ctx& c, Value x, const std::string& prefix);
    /// Pre-norm residual pair: x + attn(LN(x)), then x + mlp(LN(x)).
    Value transformer_block(Ctx& c, Value x, const std::string& prefix, int64_t heads);
    /// Non-overlapping patch extraction: [B,3,S,S] -> [B, T, 3*P*P].
    Value extract_patches(Tape& t, Value img, int64_t patch);

    BackboneConfig cfg_;
    uint64_t init_seed_ = 0;
    ParamStore store_;
    std::vector<LayerInfo> registry_;
    int64_t feature_dim_ = 0;
    int num_classes_ = 0;
};

std::unique_ptr<Backbone> make_backbone(const BackboneConfig& cfg, uint64_t init_seed);

/// Archive I/O. The archive meta echoes the config (and head size), so a
/// saved model reloads through the same contract; any parameter-name or shape
/// mismatch raises a SchemaError naming the offenders.
void save_backbone(const std::filesystem::path& path, const Backbone& model, nlohmann::json extra_meta = {});
std::unique_ptr<Backbone> load_backbone(const std::filesystem::path& path);

// MaxViT token partitions over a (h, w) grid with window side P. Both return
// a permutation of [0, h*w): tokens listed group-by-group.
//  - window: (h/P)*(w/P) windows of P*P contiguous tokens each.
//  - grid: P*P groups; group (a,b) holds the token at offset (a,b) of every
//    window, i.e. rows a, a+P, a+2P, ... (one token per window).
std::vector<int64_t> window_partition_order(int64_t h, int64_t w, int64_t P);
std::vector<int64_t> grid_partition_order(int64_t h, int64_t w, int64_t P);
std::vector<int64_t> inverse_permutation(const std::vector<int64_t>& perm);

}  // namespace stroke
