#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "stroke/tensor.hpp"

namespace stroke {

/// Handle to a node on a Tape.
struct Value {
    int64_t id = -1;
    bool valid() const { return id >= 0; }
};

/// Reverse-mode autodiff tape. Nodes are appended in forward order; backward()
/// walks them in reverse, so creation order is the topological order. Grad
/// buffers stay readable after backward (Grad-CAM reads activation gradients).
/// A tape is built per step and discarded; it is not thread-safe and not
/// movable (backward closures capture `this`).
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Value leaf(Tensor v, bool requires_grad = false);

    const Tensor& val(Value v) const { return node(v).val; }
    const Tensor& grad(Value v) const { return node(v).grad; }
    bool requires_grad(Value v) const { return node(v).requires_grad; }
    int64_t size() const { return static_cast<int64_t>(nodes_.size()); }

    /// Seeds d(root)/d(root) = 1 (root must be scalar) and propagates.
    void backward(Value root);
    /// General seed of root's shape, e.g. a one-hot class selector over logits.
    void backward(Value root, const Tensor& seed);
    /// Re-zeros every grad buffer so a second backward can run on the same tape.
    void zero_grad();

    // Elementwise / arithmetic ----------------------------------------------
    Value add(Value a, Value b);     // same shape
    Value sub(Value a, Value b);     // same shape
    Value mul(Value a, Value b);     // same shape, elementwise
    Value scale(Value x, double c);
    Value add_scalar(Value x, double c);
    /// x[B, ...] + p[...] with p broadcast over the leading axis.
    Value add_bcast0(Value x, Value p);

    // Activations ------------------------------------------------------------
    Value relu(Value x);
    Value leaky_relu(Value x, double slope);
    Value gelu(Value x);  // exact erf form
    Value sigmoid(Value x);
    Value tanh_op(Value x);
    Value softmax_last(Value x);
    /// Layer norm over the last axis with learned gamma/beta of that length.
    Value layernorm_last(Value x, Value gamma, Value beta, double eps = 1e-5);
    /// Keeps an element with probability 1-rate and rescales by 1/(1-rate);
    /// the mask is a pure function of (seed, element index).
    Value dropout(Value x, double rate, uint64_t seed);

    // Linear algebra ----------------------------------------------------------
    /// y[..., N] = x[..., K] . w[N, K]^T (+ b[N] when b is valid).
    Value linear(Value x, Value w, Value b = {});
    Value bmm(Value a, Value b);     // [B,n,k] . [B,k,m]
    Value bmm_nt(Value a, Value b);  // [B,n,k] . [B,m,k]^T

    // Shape -------------------------------------------------------------------
    Value reshape(Value x, std::vector<int64_t> shape);
    Value permute(Value x, std::vector<int> axes);
    Value concat(const std::vector<Value>& xs, int axis);
    /// y[b, j, :] = x[b, idx[j], :]; backward gathers through the inverse map.
    Value gather_axis1(Value x, std::vector<int64_t> idx);
    /// y[j, :] = table[idx[j], :]; embedding lookup.
    Value gather_rows(Value table, std::vector<int64_t> idx);

    // Reductions ---------------------------------------------------------------
    Value mean_axis1(Value x);  // [B,T,D] -> [B,D]
    Value mean_hw(Value x);     // [B,C,H,W] -> [B,C]
    Value mean_all(Value x);    // -> scalar

    // Convolution ---------------------------------------------------------------
    /// x[B,Cin,H,W], w[Cout,Cin/groups,kh,kw].
    Value conv2d(Value x, Value w, int64_t stride, int64_t pad, int64_t groups = 1);
    /// x[B,C,H,W] + b[C] broadcast over batch and space.
    Value add_bias_ch(Value x, Value b);
    /// x[B,Cin,H,W], w[Cin,Cout,kh,kw]; output side (H-1)*stride - 2*pad + kh.
    Value conv_transpose2d(Value x, Value w, int64_t stride, int64_t pad);

    // Losses ----------------------------------------------------------------------
    /// logits[B,C]; loss_i = w_{y_i} * (logsumexp_i - logit_{i,y_i}).
    /// weighted_mean divides the sum by sum(w_{y_i}), else returns the raw sum.
    Value weighted_ce(Value logits, const std::vector<int>& labels, const std::vector<double>& class_weights,
                      bool weighted_mean = true);
    /// Mean elementwise binary cross-entropy on logits (stable log1p form).
    Value bce_with_logits_mean(Value logits, Tensor targets);

private:
    struct Node {
        Tensor val;
        Tensor grad;
        std::function<void()> back;  // empty for leaves
        bool requires_grad = false;
    };

    Node& node(Value v) { return nodes_[static_cast<size_t>(v.id)]; }
    const Node& node(Value v) const { return nodes_[static_cast<size_t>(v.id)]; }
    Value push(Tensor val, bool requires_grad, std::function<void()> back);
    Tensor& g(Value v) { return node(v).grad; }
    const Tensor& v(Value x) const { return node(x).val; }

    std::vector<Node> nodes_;
};

/// Permute a tensor's axes (out-of-place); axes is the destination order:
/// out dim i = in dim axes[i].
Tensor permute_tensor(const Tensor& x, const std::vector<int>& axes);

}  // namespace stroke
