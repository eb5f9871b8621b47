#include <memory>

#include "arch_internal.hpp"
#include "stroke/errors.hpp"

namespace stroke {
namespace {

/// Strided conv stem, then one hybrid block per stage. A block runs a
/// residual depthwise+pointwise conv unit, window attention (tokens grouped
/// into P x P windows) and grid attention (P*P groups, each holding the same
/// within-window offset across all windows), each attention stage followed by
/// its own feed-forward. Stages past the first downsample by two.
class MaxVitModel final : public Backbone {
public:
    MaxVitModel(const BackboneConfig& cfg, uint64_t seed) : Backbone(cfg, seed) {
        const int64_t C = cfg_.embed_dim;
        feature_dim_ = C;
        add_weight("stem.conv1.weight", {C, 3, 3, 3});
        add_zeros("stem.conv1.bias", {C});
        int64_t side = cfg_.image_side / 2;
        registry_.push_back({"stem.conv1", true, C, side, side});
        for (int64_t s = 0; s < cfg_.depth; ++s) {
            const std::string p = "stages." + std::to_string(s);
            if (s > 0) {
                side /= 2;
                add_weight(p + ".down.weight", {C, C, 3, 3});
                add_zeros(p + ".down.bias", {C});
            }
            add_weight(p + ".block.conv.dw.weight", {C, 1, 3, 3});
            add_zeros(p + ".block.conv.dw.bias", {C});
            add_weight(p + ".block.conv.pw.weight", {C, C, 1, 1});
            add_zeros(p + ".block.conv.pw.bias", {C});
            add_transformer_block(p + ".block.win", C, 4 * C);
            add_transformer_block(p + ".block.grid", C, 4 * C);
            sides_.push_back(side);
            registry_.push_back({p + ".block", true, C, side, side});
        }
        add_layernorm("norm", C);
    }

protected:
    Forward run(Tape& t, Value images, bool training, uint64_t dropout_seed) override {
        Forward fw;
        Ctx c{t, training, dropout_seed, cfg_.dropout, &fw};
        const int64_t C = cfg_.embed_dim, P = cfg_.window_size;
        Value x = t.gelu(
            t.add_bias_ch(t.conv2d(images, bound("stem.conv1.weight"), 2, 1), bound("stem.conv1.bias")));
        const int64_t stem_side = cfg_.image_side / 2;
        fw.captures.push_back({"stem.conv1", x, SpatialCapture::Kind::chw, C, stem_side, stem_side});
        for (int64_t s = 0; s < cfg_.depth; ++s) {
            const std::string p = "stages." + std::to_string(s);
            if (s > 0) x = t.add_bias_ch(t.conv2d(x, bound(p + ".down.weight"), 2, 1), bound(p + ".down.bias"));
            const int64_t side = sides_[static_cast<size_t>(s)];

            // residual conv unit
            Value y = t.add_bias_ch(t.conv2d(x, bound(p + ".block.conv.dw.weight"), 1, 1, C),
                                    bound(p + ".block.conv.dw.bias"));
            y = t.add_bias_ch(t.conv2d(t.gelu(y), bound(p + ".block.conv.pw.weight"), 1, 0),
                              bound(p + ".block.conv.pw.bias"));
            x = t.add(x, y);

            const int64_t B = t.val(x).dim(0), T = side * side;
            Value tok = t.permute(t.reshape(x, {B, C, T}), {0, 2, 1});
            tok = attend_partition(c, tok, window_partition_order(side, side, P), B, T, C,
                                   (side / P) * (side / P), P * P, p + ".block.win");
            tok = attend_partition(c, tok, grid_partition_order(side, side, P), B, T, C, P * P,
                                   (side / P) * (side / P), p + ".block.grid");
            x = t.reshape(t.permute(tok, {0, 2, 1}), {B, C, side, side});
            fw.captures.push_back({p + ".block", x, SpatialCapture::Kind::chw, C, side, side});
        }
        x = t.mean_hw(x);
        fw.features = ln(c, x, "norm");
        return fw;
    }

private:
    /// Regroups tokens by `order`, attends within each group, restores order.
    Value attend_partition(Ctx& c, Value tok, const std::vector<int64_t>& order, int64_t B, int64_t T, int64_t C,
                           int64_t groups, int64_t group_len, const std::string& prefix) {
        Tape& t = c.t;
        Value g = t.gather_axis1(tok, order);
        g = t.reshape(g, {B * groups, group_len, C});
        g = transformer_block(c, g, prefix, cfg_.heads);
        g = t.reshape(g, {B, T, C});
        return t.gather_axis1(g, inverse_permutation(order));
    }

    std::vector<int64_t> sides_;
};

}  // namespace

namespace detail {
std::unique_ptr<Backbone> make_maxvit(const BackboneConfig& cfg, uint64_t seed) {
    return std::make_unique<MaxVitModel>(cfg, seed);
}
}  // namespace detail

}  // namespace stroke
