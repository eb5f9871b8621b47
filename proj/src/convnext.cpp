#include <memory>

#include "arch_internal.hpp"
#include "stroke/errors.hpp"

namespace stroke {
namespace {

/// Patchify stem followed by depth isotropic blocks:
/// depthwise kxk -> channelwise layernorm -> 1x1 expand x4 -> GELU -> 1x1
/// project, wrapped in a residual. Identity depthwise kernel plus zero
/// pointwise weights make a block an exact no-op.
class ConvNextModel final : public Backbone {
public:
    ConvNextModel(const BackboneConfig& cfg, uint64_t seed) : Backbone(cfg, seed) {
        const int64_t C = cfg_.embed_dim;
        grid_ = cfg_.image_side / cfg_.patch_size;
        feature_dim_ = C;
        add_weight("stem.weight", {C, 3, cfg_.patch_size, cfg_.patch_size});
        add_zeros("stem.bias", {C});
        for (int64_t i = 0; i < cfg_.depth; ++i) {
            const std::string p = "blocks." + std::to_string(i);
            add_weight(p + ".dw.weight", {C, 1, cfg_.kernel_size, cfg_.kernel_size});
            add_zeros(p + ".dw.bias", {C});
            add_layernorm(p + ".norm", C);
            add_weight(p + ".pw1.weight", {4 * C, C, 1, 1});
            add_zeros(p + ".pw1.bias", {4 * C});
            add_weight(p + ".pw2.weight", {C, 4 * C, 1, 1});
            add_zeros(p + ".pw2.bias", {C});
        }
        add_layernorm("norm", C);

        registry_.push_back({"stem", true, C, grid_, grid_});
        for (int64_t i = 0; i < cfg_.depth; ++i)
            registry_.push_back({"blocks." + std::to_string(i), true, C, grid_, grid_});
    }

protected:
    Forward run(Tape& t, Value images, bool training, uint64_t dropout_seed) override {
        Forward fw;
        Ctx c{t, training, dropout_seed, cfg_.dropout, &fw};
        const int64_t C = cfg_.embed_dim;
        Value x = t.add_bias_ch(t.conv2d(images, bound("stem.weight"), cfg_.patch_size, 0), bound("stem.bias"));
        fw.captures.push_back({"stem", x, SpatialCapture::Kind::chw, C, grid_, grid_});
        for (int64_t i = 0; i < cfg_.depth; ++i) {
            const std::string p = "blocks." + std::to_string(i);
            Value y = t.add_bias_ch(t.conv2d(x, bound(p + ".dw.weight"), 1, cfg_.kernel_size / 2, C),
                                    bound(p + ".dw.bias"));
            y = channel_ln(c, y, p + ".norm");
            y = t.add_bias_ch(t.conv2d(y, bound(p + ".pw1.weight"), 1, 0), bound(p + ".pw1.bias"));
            y = drop(c, t.gelu(y));
            y = t.add_bias_ch(t.conv2d(y, bound(p + ".pw2.weight"), 1, 0), bound(p + ".pw2.bias"));
            x = t.add(x, y);
            fw.captures.push_back({p, x, SpatialCapture::Kind::chw, C, grid_, grid_});
        }
        x = t.mean_hw(x);
        x = ln(c, x, "norm");
        fw.features = x;
        return fw;
    }

private:
    /// LayerNorm across channels at every spatial position.
    Value channel_ln(Ctx& c, Value x, const std::string& prefix) {
        Value y = c.t.permute(x, {0, 2, 3, 1});
        y = ln(c, y, prefix);
        return c.t.permute(y, {0, 3, 1, 2});
    }

    int64_t grid_ = 0;
};

}  // namespace

namespace detail {
std::unique_ptr<Backbone> make_convnext(const BackboneConfig& cfg, uint64_t seed) {
    return std::make_unique<ConvNextModel>(cfg, seed);
}
}  // namespace detail

}  // namespace stroke
