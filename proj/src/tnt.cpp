#include <memory>

#include "arch_internal.hpp"
#include "stroke/errors.hpp"

namespace stroke {
namespace {

/// Transformer-in-transformer: an inner encoder runs on sub-patch "word"
/// tokens inside every patch, and each layer projects the words additively
/// into the sentence stream before the outer block. Outer parameters share
/// names (and therefore per-name init) with the plain encoder, so zeroing the
/// fuse projections collapses the model onto it exactly.
class TntModel final : public Backbone {
public:
    TntModel(const BackboneConfig& cfg, uint64_t seed) : Backbone(cfg, seed) {
        const int64_t D = cfg_.embed_dim;
        const int64_t g = cfg_.image_side / cfg_.patch_size;
        grid_ = g;
        inner_dim_ = D / 2;
        words_side_ = cfg_.patch_size / cfg_.inner_patch_size;
        words_ = words_side_ * words_side_;
        feature_dim_ = D;

        add_weight("patch_embed.weight", {D, 3 * cfg_.patch_size * cfg_.patch_size});
        add_zeros("patch_embed.bias", {D});
        add_zeros("pos_embed", {g * g, D});
        add_weight("word_embed.weight", {inner_dim_, 3 * cfg_.inner_patch_size * cfg_.inner_patch_size});
        add_zeros("word_embed.bias", {inner_dim_});
        add_zeros("word_pos", {words_, inner_dim_});
        for (int64_t i = 0; i < cfg_.depth; ++i) {
            const std::string idx = std::to_string(i);
            add_transformer_block("inner_blocks." + idx, inner_dim_, 4 * inner_dim_);
            add_weight("fuse." + idx + ".weight", {D, words_ * inner_dim_});
            add_zeros("fuse." + idx + ".bias", {D});
            add_transformer_block("blocks." + idx, D, 4 * D);
        }
        add_layernorm("norm", D);

        registry_.push_back({"patch_embed", true, D, g, g});
        for (int64_t i = 0; i < cfg_.depth; ++i)
            registry_.push_back({"blocks." + std::to_string(i), true, D, g, g});
    }

protected:
    Forward run(Tape& t, Value images, bool training, uint64_t dropout_seed) override {
        Forward fw;
        Ctx c{t, training, dropout_seed, cfg_.dropout, &fw};
        const Tensor& img = t.val(images);
        const int64_t B = img.dim(0);
        const int64_t T = grid_ * grid_;

        Value s = t.linear(extract_patches(t, images, cfg_.patch_size), bound("patch_embed.weight"),
                           bound("patch_embed.bias"));
        s = t.add_bcast0(s, bound("pos_embed"));
        fw.captures.push_back({"patch_embed", s, SpatialCapture::Kind::tokens, cfg_.embed_dim, grid_, grid_});

        // words: [B,3,S,S] -> [B*T, words, 3*ip*ip]
        const int64_t ip = cfg_.inner_patch_size, wi = words_side_, g = grid_;
        Value w = t.reshape(images, {B, 3, g, wi, ip, g, wi, ip});
        w = t.permute(w, {0, 2, 5, 3, 6, 1, 4, 7});
        w = t.reshape(w, {B * T, words_, 3 * ip * ip});
        w = t.linear(w, bound("word_embed.weight"), bound("word_embed.bias"));
        w = t.add_bcast0(w, bound("word_pos"));

        for (int64_t i = 0; i < cfg_.depth; ++i) {
            const std::string idx = std::to_string(i);
            w = transformer_block(c, w, "inner_blocks." + idx, cfg_.heads);
            Value flat = t.reshape(w, {B, T, words_ * inner_dim_});
            s = t.add(s, t.linear(flat, bound("fuse." + idx + ".weight"), bound("fuse." + idx + ".bias")));
            s = transformer_block(c, s, "blocks." + idx, cfg_.heads);
            fw.captures.push_back(
                {"blocks." + idx, s, SpatialCapture::Kind::tokens, cfg_.embed_dim, grid_, grid_});
        }
        s = ln(c, s, "norm");
        fw.features = t.mean_axis1(s);
        return fw;
    }

private:
    int64_t grid_ = 0;
    int64_t inner_dim_ = 0;
    int64_t words_side_ = 0;
    int64_t words_ = 0;
};

}  // namespace

namespace detail {
std::unique_ptr<Backbone> make_tnt(const BackboneConfig& cfg, uint64_t seed) {
    return std::make_unique<TntModel>(cfg, seed);
}
}  // namespace detail

}  // namespace stroke
