#include <memory>

#include "arch_internal.hpp"
#include "stroke/errors.hpp"

namespace stroke {
namespace {

/// Plain encoder: patchify -> linear embed + learned positions -> pre-norm
/// transformer blocks -> final norm -> token mean pool. Every token grid
/// (embedding and each block output) is a spatial registry layer.
class VitModel final : public Backbone {
public:
    VitModel(const BackboneConfig& cfg, uint64_t seed) : Backbone(cfg, seed) {
        const int64_t D = cfg_.embed_dim;
        const int64_t g = cfg_.image_side / cfg_.patch_size;
        tokens_ = g * g;
        grid_ = g;
        feature_dim_ = D;
        add_weight("patch_embed.weight", {D, 3 * cfg_.patch_size * cfg_.patch_size});
        add_zeros("patch_embed.bias", {D});
        add_zeros("pos_embed", {tokens_, D});  // learned, starts at zero
        for (int64_t i = 0; i < cfg_.depth; ++i)
            add_transformer_block("blocks." + std::to_string(i), D, 4 * D);
        add_layernorm("norm", D);

        registry_.push_back({"patch_embed", true, D, g, g});
        for (int64_t i = 0; i < cfg_.depth; ++i)
            registry_.push_back({"blocks." + std::to_string(i), true, D, g, g});
    }

protected:
    Forward run(Tape& t, Value images, bool training, uint64_t dropout_seed) override {
        Forward fw;
        Ctx c{t, training, dropout_seed, cfg_.dropout, &fw};
        Value x = t.linear(extract_patches(t, images, cfg_.patch_size), bound("patch_embed.weight"),
                           bound("patch_embed.bias"));
        x = t.add_bcast0(x, bound("pos_embed"));
        fw.captures.push_back({"patch_embed", x, SpatialCapture::Kind::tokens, cfg_.embed_dim, grid_, grid_});
        for (int64_t i = 0; i < cfg_.depth; ++i) {
            x = transformer_block(c, x, "blocks." + std::to_string(i), cfg_.heads);
            fw.captures.push_back(
                {"blocks." + std::to_string(i), x, SpatialCapture::Kind::tokens, cfg_.embed_dim, grid_, grid_});
        }
        fw.features = ln(c, t.mean_axis1(x), "norm");
        return fw;
    }

private:
    int64_t tokens_ = 0;
    int64_t grid_ = 0;
};

}  // namespace

namespace detail {
std::unique_ptr<Backbone> make_vit(const BackboneConfig& cfg, uint64_t seed) {
    return std::make_unique<VitModel>(cfg, seed);
}
}  // namespace detail

}  // namespace stroke
