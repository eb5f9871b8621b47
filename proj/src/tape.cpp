#include "stroke/tape.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "stroke/errors.hpp"
#include "stroke/kernels.hpp"
#include "stroke/rng.hpp"

namespace stroke {

namespace {

void check(bool cond, const std::string& msg) {
    if (!cond) throw Error(msg);
}

void axpy(Tensor& dst, const Tensor& src) {
    double* d = dst.data();
    const double* s = src.data();
    for (int64_t i = 0; i < dst.size(); ++i) d[i] += s[i];
}

double norm_cdf(double x) { return 0.5 * (1.0 + std::erf(x * 0.7071067811865475244)); }
double norm_pdf(double x) { return 0.3989422804014326779 * std::exp(-0.5 * x * x); }

}  // namespace

Tensor permute_tensor(const Tensor& x, const std::vector<int>& axes) {
    const int64_t r = x.rank();
    check(static_cast<int64_t>(axes.size()) == r, "permute: axes rank mismatch");
    std::vector<int64_t> out_shape(axes.size());
    for (size_t i = 0; i < axes.size(); ++i) out_shape[i] = x.dim(axes[i]);
    Tensor out(out_shape);
    std::vector<int64_t> in_strides(static_cast<size_t>(r), 1);
    for (int64_t i = r - 2; i >= 0; --i)
        in_strides[static_cast<size_t>(i)] = in_strides[static_cast<size_t>(i + 1)] * x.dim(i + 1);
    std::vector<int64_t> step(axes.size());
    for (size_t i = 0; i < axes.size(); ++i) step[i] = in_strides[static_cast<size_t>(axes[i])];
    std::vector<int64_t> coord(axes.size(), 0);
    const double* src = x.data();
    double* dst = out.data();
    int64_t src_off = 0;
    for (int64_t o = 0; o < out.size(); ++o) {
        dst[o] = src[src_off];
        for (int64_t i = r - 1; i >= 0; --i) {
            size_t ui = static_cast<size_t>(i);
            coord[ui]++;
            src_off += step[ui];
            if (coord[ui] < out_shape[ui]) break;
            src_off -= step[ui] * out_shape[ui];
            coord[ui] = 0;
        }
    }
    return out;
}

Value Tape::push(Tensor val, bool requires_grad, std::function<void()> back) {
    Node n;
    n.val = std::move(val);
    if (requires_grad) n.grad = Tensor::zeros(n.val.shape());
    n.requires_grad = requires_grad;
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Value{static_cast<int64_t>(nodes_.size()) - 1};
}

Value Tape::leaf(Tensor v, bool requires_grad) { return push(std::move(v), requires_grad, nullptr); }

void Tape::backward(Value root) {
    check(v(root).size() == 1, "backward: scalar root required, got shape " + v(root).shape_str());
    backward(root, Tensor::full(v(root).shape(), 1.0));
}

void Tape::backward(Value root, const Tensor& seed) {
    check(root.valid() && root.id < size(), "backward: invalid root");
    check(node(root).requires_grad, "backward: root does not require grad");
    check(seed.same_shape(v(root)), "backward: seed shape mismatch");
    axpy(node(root).grad, seed);
    for (int64_t i = root.id; i >= 0; --i) {
        Node& n = nodes_[static_cast<size_t>(i)];
        if (n.requires_grad && n.back) n.back();
    }
}

void Tape::zero_grad() {
    for (Node& n : nodes_)
        if (n.requires_grad) n.grad.zero();
}

// --- elementwise -------------------------------------------------------------

Value Tape::add(Value a, Value b) {
    check(v(a).same_shape(v(b)), "add: shape mismatch " + v(a).shape_str() + " vs " + v(b).shape_str());
    Tensor y = v(a);
    axpy(y, v(b));
    bool rg = requires_grad(a) || requires_grad(b);
    Value out = push(std::move(y), rg, nullptr);
    if (rg)
        node(out).back = [this, a, b, out]() {
            if (requires_grad(a)) axpy(g(a), g(out));
            if (requires_grad(b)) axpy(g(b), g(out));
        };
    return out;
}

Value Tape::sub(Value a, Value b) {
    check(v(a).same_shape(v(b)), "sub: shape mismatch");
    Tensor y = v(a);
    const double* bd = v(b).data();
    for (int64_t i = 0; i < y.size(); ++i) y[i] -= bd[i];
    bool rg = requires_grad(a) || requires_grad(b);
    Value out = push(std::move(y), rg, nullptr);
    if (rg)
        node(out).back = [this, a, b, out]() {
            const Tensor& go = g(out);
            if (requires_grad(a)) axpy(g(a), go);
            if (requires_grad(b)) {
                double* gb = g(b).data();
                for (int64_t i = 0; i < go.size(); ++i) gb[i] -= go[i];
            }
        };
    return out;
}

Value Tape::mul(Value a, Value b) {
    check(v(a).same_shape(v(b)), "mul: shape mismatch");
    Tensor y = v(a);
    const double* bd = v(b).data();
    for (int64_t i = 0; i < y.size(); ++i) y[i] *= bd[i];
    bool rg = requires_grad(a) || requires_grad(b);
    Value out = push(std::move(y), rg, nullptr);
    if (rg)
        node(out).back = [this, a, b, out]() {
            const Tensor& go = g(out);
            if (requires_grad(a)) {
                double* ga = g(a).data();
                const double* bd2 = v(b).data();
                for (int64_t i = 0; i < go.size(); ++i) ga[i] += go[i] * bd2[i];
            }
            if (requires_grad(b)) {
                double* gb = g(b).data();
                const double* ad = v(a).data();
                for (int64_t i = 0; i < go.size(); ++i) gb[i] += go[i] * ad[i];
            }
        };
    return out;
}

Value Tape::scale(Value x, double c) {
    Tensor y = v(x);
    for (int64_t i = 0; i < y.size(); ++i) y[i] *= c;
    bool rg = requires_grad(x);
    Value out = push(std::move(y), rg, nullptr);
    if (rg)
        node(out).back = [this, x, out, c]() {
            double* gx = g(x).data();
            const Tensor& go = g(out);
            for (int64_t i = 0; i < go.size(); ++i) gx[i] += go[i] * c;
        };
    return out;
}

Value Tape::add_scalar(Value x, double c) {
    Tensor y = v(x);
    for (int64_t i = 0; i < y.size(); ++i) y[i] += c;
    bool rg = requires_grad(x);
    Value out = push(std::move(y), rg, nullptr);
    if (rg)
        node(out).back = [this, x, out]() { axpy(g(x), g(out)); };
    return out;
}

Value Tape::add_bcast0(Value x, Value p) {
    const Tensor& xt = v(x);
    const Tensor& pt = v(p);
    check(xt.rank() == pt.rank() + 1, "add_bcast0: rank mismatch");
    for (int64_t i = 0; i < pt.rank(); ++i)
        check(xt.dim(i + 1) == pt.dim(i), "add_bcast0: dim mismatch");
    const int64_t B = xt.dim(0), R = pt.size();
    Tensor y = xt;
    for (int64_t b = 0; b < B; ++b) {
        double* row = y.data() + b * R;
        const double* pd = pt.data();
        for (int64_t j = 0; j < R; ++j) row[j] += pd[j];
    }
    bool rg = requires_grad(x) || requires_grad(p);
    Value out = push(std::move(y), rg, nullptr);
    if (rg)
        node(out).back = [this, x, p, out, B, R]() {
            const Tensor& go = g(out);
            if (requires_grad(x)) axpy(g(x), go);
            if (requires_grad(p)) {
                double* gp = g(p).data();
                for (int64_t b = 0; b < B; ++b) {
                    const double* row = go.data() + b * R;
                    for (int64_t j = 0; j < R; ++j) gp[j] += row[j];
                }
            }
        };
    return out;
}

// --- activations ----------------------------------------------------------------

Value Tape::relu(Value x) {
    Tensor y = v(x);
    for (int64_t i = 0; i < y.size(); ++i) y[i] = y[i] > 0.0 ? y[i] : 0.0;
    bool rg = requires_grad(x);
    Value out = push(std::move(y), rg, nullptr);
    if (rg)
        node(out).back = [this, x, out]() {
            double* gx = g(x).data();
            const double* xd = v(x).data();
            const Tensor& go = g(out);
            for (int64_t i = 0; i < go.size(); ++i)
                if (xd[i] > 0.0) gx[i] += go[i];
        };
    return out;
}

Value Tape::leaky_relu(Value x, double slope) {
    Tensor y = v(x);
    for (int64_t i = 0; i < y.size(); ++i) y[i] = y[i] > 0.0 ? y[i] : slope * y[i];
    bool rg = requires_grad(x);
    Value out = push(std::move(y), rg, nullptr);
    if (rg)
        node(out).back = [this, x, out, slope]() {
            double* gx = g(x).data();
            const double* xd = v(x).data();
            const Tensor& go = g(out);
            for (int64_t i = 0; i < go.size(); ++i) gx[i] += go[i] * (xd[i] > 0.0 ? 1.0 : slope);
        };
    return out;
}

Value Tape::gelu(Value x) {
    Tensor y = v(x);
    for (int64_t i = 0; i < y.size(); ++i) y[i] = y[i] * norm_cdf(y[i]);
    bool rg = requires_grad(x);
    Value out = push(std::move(y), rg, nullptr);
    if (rg)
        node(out).back = [this, x, out]() {
            double* gx = g(x).data();
            const double* xd = v(x).data();
            const Tensor& go = g(out);
            for (int64_t i = 0; i < go.size(); ++i)
                gx[i] += go[i] * (norm_cdf(xd[i]) + xd[i] * norm_pdf(xd[i]));
        };
    return out;
}

Value Tape::sigmoid(Value x) {
    Tensor y = v(x);
    for (int64_t i = 0; i < y.size(); ++i) y[i] = 1.0 / (1.0 + std::exp(-y[i]));
    bool rg = requires_grad(x);
    Value out = push(std::move(y), rg, nullptr);
    if (rg)
        node(out).back = [this, x, out]() {
            double* gx = g(x).data();
            const double* yd = v(out).data();
            const Tensor& go = g(out);
            for (int64_t i = 0; i < go.size(); ++i) gx[i] += go[i] * yd[i] * (1.0 - yd[i]);
        };
    return out;
}

Value Tape::tanh_op(Value x) {
    Tensor y = v(x);
    for (int64_t i = 0; i < y.size(); ++i) y[i] = std::tanh(y[i]);
    bool rg = requires_grad(x);
    Value out = push(std::move(y), rg, nullptr);
    if (rg)
        node(out).back = [this, x, out]() {
            double* gx = g(x).data();
            const double* yd = v(out).data();
            const Tensor& go = g(out);
            for (int64_t i = 0; i < go.size(); ++i) gx[i] += go[i] * (1.0 - yd[i] * yd[i]);
        };
    return out;
}

Value Tape::softmax_last(Value x) {
    const Tensor& xt = v(x);
    check(xt.rank() >= 1, "softmax_last: rank >= 1 required");
    const int64_t n = xt.dim(xt.rank() - 1);
    const int64_t rows = xt.size() / n;
    Tensor y(xt.shape());
    kernels::softmax_rows(xt.data(), y.data(), rows, n);
    bool rg = requires_grad(x);
    Value out = push(std::move(y), rg, nullptr);
    if (rg)
        node(out).back = [this, x, out, rows, n]() {
            double* gx = g(x).data();
            const double* yd = v(out).data();
            const double* go = g(out).data();
            for (int64_t r = 0; r < rows; ++r) {
                const double* yr = yd + r * n;
                const double* gr = go + r * n;
                double dot = 0.0;
                for (int64_t j = 0; j < n; ++j) dot += gr[j] * yr[j];
                double* gxr = gx + r * n;
                for (int64_t j = 0; j < n; ++j) gxr[j] += yr[j] * (gr[j] - dot);
            }
        };
    return out;
}

Value Tape::layernorm_last(Value x, Value gamma, Value beta, double eps) {
    const Tensor& xt = v(x);
    const int64_t D = xt.dim(xt.rank() - 1);
    check(v(gamma).size() == D && v(beta).size() == D, "layernorm_last: gamma/beta length mismatch");
    const int64_t rows = xt.size() / D;
    auto xhat = std::make_shared<Tensor>(xt.shape());
    auto inv_std = std::make_shared<Tensor>(std::vector<int64_t>{rows});
    Tensor y(xt.shape());
    const double* gd = v(gamma).data();
    const double* bd = v(beta).data();
    for (int64_t r = 0; r < rows; ++r) {
        const double* xr = xt.data() + r * D;
        double mu = 0.0;
        for (int64_t j = 0; j < D; ++j) mu += xr[j];
        mu /= static_cast<double>(D);
        double var = 0.0;
        for (int64_t j = 0; j < D; ++j) {
            double d = xr[j] - mu;
            var += d * d;
        }
        var /= static_cast<double>(D);
        double inv = 1.0 / std::sqrt(var + eps);
        (*inv_std)[r] = inv;
        double* xh = xhat->data() + r * D;
        double* yr = y.data() + r * D;
        for (int64_t j = 0; j < D; ++j) {
            xh[j] = (xr[j] - mu) * inv;
            yr[j] = gd[j] * xh[j] + bd[j];
        }
    }
    bool rg = requires_grad(x) || requires_grad(gamma) || requires_grad(beta);
    Value out = push(std::move(y), rg, nullptr);
    if (rg)
        node(out).back = [this, x, gamma, beta, out, xhat, inv_std, rows, D]() {
            const double* go = g(out).data();
            const double* xh = xhat->data();
            const double* gd = v(gamma).data();
            for (int64_t r = 0; r < rows; ++r) {
                const double* gr = go + r * D;
                const double* xr = xh + r * D;
                if (requires_grad(gamma)) {
                    double* gg = g(gamma).data();
                    for (int64_t j = 0; j < D; ++j) gg[j] += gr[j] * xr[j];
                }
                if (requires_grad(beta)) {
                    double* gb = g(beta).data();
                    for (int64_t j = 0; j < D; ++j) gb[j] += gr[j];
                }
                if (requires_grad(x)) {
                    double m1 = 0.0, m2 = 0.0;
                    for (int64_t j = 0; j < D; ++j) {
                        double gh = gr[j] * gd[j];
                        m1 += gh;
                        m2 += gh * xr[j];
                    }
                    m1 /= static_cast<double>(D);
                    m2 /= static_cast<double>(D);
                    const double inv = (*inv_std)[r];
                    double* gx = g(x).data() + r * D;
                    for (int64_t j = 0; j < D; ++j) gx[j] += inv * (gr[j] * gd[j] - m1 - xr[j] * m2);
                }
            }
        };
    return out;
}

Value Tape::dropout(Value x, double rate, uint64_t seed) {
    check(rate >= 0.0 && rate < 1.0, "dropout: rate must be in [0,1)");
    if (rate == 0.0) return x;
    const Tensor& xt = v(x);
    auto mask = std::make_shared<Tensor>(xt.shape());
    const double keep_scale = 1.0 / (1.0 - rate);
    Tensor y(xt.shape());
    for (int64_t i = 0; i < xt.size(); ++i) {
        uint64_t h = splitmix64(seed + 0x9e3779b97f4a7c15ull * static_cast<uint64_t>(i + 1));
        double u = (h >> 11) * 0x1.0p-53;
        double m = u >= rate ? keep_scale : 0.0;
        (*mask)[i] = m;
        y[i] = xt[i] * m;
    }
    bool rg = requires_grad(x);
    Value out = push(std::move(y), rg, nullptr);
    if (rg)
        node(out).back = [this, x, out, mask]() {
            double* gx = g(x).data();
            const Tensor& go = g(out);
            for (int64_t i = 0; i < go.size(); ++i) gx[i] += go[i] * (*mask)[i];
        };
    return out;
}

// --- linear algebra --------------------------------------------------------------

Value Tape::linear(Value x, Value w, Value b) {
    const Tensor& xt = v(x);
    const Tensor& wt = v(w);
    check(wt.rank() == 2, "linear: weight must be [out,in]");
    const int64_t K = xt.dim(xt.rank() - 1);
    const int64_t N = wt.dim(0);
    check(wt.dim(1) == K, "linear: in-dim mismatch, x " + xt.shape_str() + " w " + wt.shape_str());
    const int64_t R = xt.size() / K;
    std::vector<int64_t> out_shape(xt.shape());
    out_shape.back() = N;
    Tensor y(out_shape);
    kernels::matmul_nt(xt.data(), wt.data(), y.data(), R, K, N);
    if (b.valid()) {
        check(v(b).size() == N, "linear: bias length mismatch");
        const double* bd = v(b).data();
        for (int64_t r = 0; r < R; ++r) {
            double* yr = y.data() + r * N;
            for (int64_t j = 0; j < N; ++j) yr[j] += bd[j];
        }
    }
    bool rg = requires_grad(x) || requires_grad(w) || (b.valid() && requires_grad(b));
    Value out = push(std::move(y), rg, nullptr);
    if (rg)
        node(out).back = [this, x, w, b, out, R, K, N]() {
            const Tensor& go = g(out);
            if (requires_grad(x)) kernels::matmul(go.data(), v(w).data(), g(x).data(), R, N, K, true);
            if (requires_grad(w)) kernels::matmul_tn(go.data(), v(x).data(), g(w).data(), R, N, K, true);
            if (b.valid() && requires_grad(b)) {
                double* gb = g(b).data();
                for (int64_t r = 0; r < R; ++r) {
                    const double* gr = go.data() + r * N;
                    for (int64_t j = 0; j < N; ++j) gb[j] += gr[j];
                }
            }
        };
    return out;
}

Value Tape::bmm(Value a, Value b) {
    const Tensor& at = v(a);
    const Tensor& bt = v(b);
    check(at.rank() == 3 && bt.rank() == 3 && at.dim(0) == bt.dim(0) && at.dim(2) == bt.dim(1),
          "bmm: shape mismatch " + at.shape_str() + " x " + bt.shape_str());
    const int64_t B = at.dim(0), n = at.dim(1), k = at.dim(2), m = bt.dim(2);
    Tensor y({B, n, m});
    kernels::bmm(at.data(), bt.data(), y.data(), B, n, k, m);
    bool rg = requires_grad(a) || requires_grad(b);
    Value out = push(std::move(y), rg, nullptr);
    if (rg)
        node(out).back = [this, a, b, out, B, n, k, m]() {
            const Tensor& go = g(out);
            if (requires_grad(a)) kernels::bmm_nt(go.data(), v(b).data(), g(a).data(), B, n, m, k, true);
            if (requires_grad(b)) kernels::bmm_tn(v(a).data(), go.data(), g(b).data(), B, n, k, m, true);
        };
    return out;
}

Value Tape::bmm_nt(Value a, Value b) {
    const Tensor& at = v(a);
    const Tensor& bt = v(b);
    check(at.rank() == 3 && bt.rank() == 3 && at.dim(0) == bt.dim(0) && at.dim(2) == bt.dim(2),
          "bmm_nt: shape mismatch " + at.shape_str() + " x " + bt.shape_str());
    const int64_t B = at.dim(0), n = at.dim(1), k = at.dim(2), m = bt.dim(1);
    Tensor y({B, n, m});
    kernels::bmm_nt(at.data(), bt.data(), y.data(), B, n, k, m);
    bool rg = requires_grad(a) || requires_grad(b);
    Value out = push(std::move(y), rg, nullptr);
    if (rg)
        node(out).back = [this, a, b, out, B, n, k, m]() {
            const Tensor& go = g(out);
            if (requires_grad(a)) kernels::bmm(go.data(), v(b).data(), g(a).data(), B, n, m, k, true);
            if (requires_grad(b)) kernels::bmm_tn(go.data(), v(a).data(), g(b).data(), B, n, m, k, true);
        };
    return out;
}

// --- shape ------------------------------------------------------------------------

Value Tape::reshape(Value x, std::vector<int64_t> shape) {
    Tensor y = v(x).reshaped(std::move(shape));
    bool rg = requires_grad(x);
    Value out = push(std::move(y), rg, nullptr);
    if (rg)
        node(out).back = [this, x, out]() { axpy(g(x), g(out)); };
    return out;
}

Value Tape::permute(Value x, std::vector<int> axes) {
    Tensor y = permute_tensor(v(x), axes);
    bool rg = requires_grad(x);
    std::vector<int> inv(axes.size());
    for (size_t i = 0; i < axes.size(); ++i) inv[static_cast<size_t>(axes[i])] = static_cast<int>(i);
    Value out = push(std::move(y), rg, nullptr);
    if (rg)
        node(out).back = [this, x, out, inv]() {
            Tensor gi = permute_tensor(g(out), inv);
            axpy(g(x), gi);
        };
    return out;
}

Value Tape::concat(const std::vector<Value>& xs, int axis) {
    check(!xs.empty(), "concat: empty input list");
    const Tensor& first = v(xs[0]);
    const int64_t r = first.rank();
    check(axis >= 0 && axis < r, "concat: axis out of range");
    int64_t axis_total = 0;
    for (Value x : xs) {
        const Tensor& t = v(x);
        check(t.rank() == r, "concat: rank mismatch");
        for (int64_t i = 0; i < r; ++i)
            if (i != axis) check(t.dim(i) == first.dim(i), "concat: dim mismatch off-axis");
        axis_total += t.dim(axis);
    }
    std::vector<int64_t> out_shape(first.shape());
    out_shape[static_cast<size_t>(axis)] = axis_total;
    int64_t outer = 1, inner = 1;
    for (int64_t i = 0; i < axis; ++i) outer *= first.dim(i);
    for (int64_t i = axis + 1; i < r; ++i) inner *= first.dim(i);
    Tensor y(out_shape);
    {
        int64_t col = 0;
        for (Value x : xs) {
            const Tensor& t = v(x);
            const int64_t na = t.dim(axis);
            for (int64_t o = 0; o < outer; ++o) {
                const double* src = t.data() + o * na * inner;
                double* dst = y.data() + (o * axis_total + col) * inner;
                std::copy(src, src + na * inner, dst);
            }
            col += na;
        }
    }
    bool rg = false;
    for (Value x : xs) rg = rg || requires_grad(x);
    std::vector<Value> xs_copy = xs;
    Value out = push(std::move(y), rg, nullptr);
    if (rg)
        node(out).back = [this, xs_copy, out, axis, outer, inner, axis_total]() {
            const Tensor& go = g(out);
            int64_t col = 0;
            for (Value x : xs_copy) {
                const int64_t na = v(x).dim(axis);
                if (requires_grad(x)) {
                    double* gx = g(x).data();
                    for (int64_t o = 0; o < outer; ++o) {
                        const double* src = go.data() + (o * axis_total + col) * inner;
                        double* dst = gx + o * na * inner;
                        for (int64_t i = 0; i < na * inner; ++i) dst[i] += src[i];
                    }
                }
                col += na;
            }
        };
    return out;
}

Value Tape::gather_axis1(Value x, std::vector<int64_t> idx) {
    const Tensor& xt = v(x);
    check(xt.rank() == 3, "gather_axis1: expects [B,T,D]");
    const int64_t B = xt.dim(0), T = xt.dim(1), D = xt.dim(2);
    const int64_t M = static_cast<int64_t>(idx.size());
    for (int64_t j : idx) check(j >= 0 && j < T, "gather_axis1: index out of range");
    Tensor y({B, M, D});
    for (int64_t b = 0; b < B; ++b)
        for (int64_t j = 0; j < M; ++j) {
            const double* src = xt.data() + (b * T + idx[static_cast<size_t>(j)]) * D;
            double* dst = y.data() + (b * M + j) * D;
            std::copy(src, src + D, dst);
        }
    bool rg = requires_grad(x);
    Value out = push(std::move(y), rg, nullptr);
    if (rg) {
        auto inv = std::make_shared<std::vector<std::vector<int64_t>>>(static_cast<size_t>(T));
        for (int64_t j = 0; j < M; ++j) (*inv)[static_cast<size_t>(idx[static_cast<size_t>(j)])].push_back(j);
        node(out).back = [this, x, out, inv, B, T, D, M]() {
            const Tensor& go = g(out);
            double* gx = g(x).data();
            for (int64_t b = 0; b < B; ++b)
                for (int64_t t = 0; t < T; ++t) {
                    double* dst = gx + (b * T + t) * D;
                    for (int64_t j : (*inv)[static_cast<size_t>(t)]) {
                        const double* src = go.data() + (b * M + j) * D;
                        for (int64_t d = 0; d < D; ++d) dst[d] += src[d];
                    }
                }
        };
    }
    return out;
}

Value Tape::gather_rows(Value table, std::vector<int64_t> idx) {
    const Tensor& tt = v(table);
    check(tt.rank() == 2, "gather_rows: expects [V,D]");
    const int64_t V = tt.dim(0), D = tt.dim(1);
    const int64_t M = static_cast<int64_t>(idx.size());
    for (int64_t j : idx) check(j >= 0 && j < V, "gather_rows: index out of range");
    Tensor y({M, D});
    for (int64_t j = 0; j < M; ++j) {
        const double* src = tt.data() + idx[static_cast<size_t>(j)] * D;
        std::copy(src, src + D, y.data() + j * D);
    }
    bool rg = requires_grad(table);
    Value out = push(std::move(y), rg, nullptr);
    if (rg) {
        auto inv = std::make_shared<std::vector<std::vector<int64_t>>>(static_cast<size_t>(V));
        for (int64_t j = 0; j < M; ++j) (*inv)[static_cast<size_t>(idx[static_cast<size_t>(j)])].push_back(j);
        node(out).back = [this, table, out, inv, V, D, M]() {
            const Tensor& go = g(out);
            double* gt = g(table).data();
            for (int64_t r = 0; r < V; ++r) {
                double* dst = gt + r * D;
                for (int64_t j : (*inv)[static_cast<size_t>(r)]) {
                    const double* src = go.data() + j * D;
                    for (int64_t d = 0; d < D; ++d) dst[d] += src[d];
                }
            }
        };
    }
    return out;
}

// --- reductions ----------------------------------------------------------------------

Value Tape::mean_axis1(Value x) {
    const Tensor& xt = v(x);
    check(xt.rank() == 3, "mean_axis1: expects [B,T,D]");
    const int64_t B = xt.dim(0), T = xt.dim(1), D = xt.dim(2);
    Tensor y({B, D});
    const double inv = 1.0 / static_cast<double>(T);
    for (int64_t b = 0; b < B; ++b)
        for (int64_t t = 0; t < T; ++t) {
            const double* src = xt.data() + (b * T + t) * D;
            double* dst = y.data() + b * D;
            for (int64_t d = 0; d < D; ++d) dst[d] += src[d] * inv;
        }
    bool rg = requires_grad(x);
    Value out = push(std::move(y), rg, nullptr);
    if (rg)
        node(out).back = [this, x, out, B, T, D, inv]() {
            const Tensor& go = g(out);
            double* gx = g(x).data();
            for (int64_t b = 0; b < B; ++b)
                for (int64_t t = 0; t < T; ++t) {
                    double* dst = gx + (b * T + t) * D;
                    const double* src = go.data() + b * D;
                    for (int64_t d = 0; d < D; ++d) dst[d] += src[d] * inv;
                }
        };
    return out;
}

Value Tape::mean_hw(Value x) {
    const Tensor& xt = v(x);
    check(xt.rank() == 4, "mean_hw: expects [B,C,H,W]");
    const int64_t B = xt.dim(0), C = xt.dim(1), HW = xt.dim(2) * xt.dim(3);
    Tensor y({B, C});
    const double inv = 1.0 / static_cast<double>(HW);
    for (int64_t bc = 0; bc < B * C; ++bc) {
        const double* src = xt.data() + bc * HW;
        double s = 0.0;
        for (int64_t i = 0; i < HW; ++i) s += src[i];
        y[bc] = s * inv;
    }
    bool rg = requires_grad(x);
    Value out = push(std::move(y), rg, nullptr);
    if (rg)
        node(out).back = [this, x, out, B, C, HW, inv]() {
            const Tensor& go = g(out);
            double* gx = g(x).data();
            for (int64_t bc = 0; bc < B * C; ++bc) {
                const double gv = go[bc] * inv;
                double* dst = gx + bc * HW;
                for (int64_t i = 0; i < HW; ++i) dst[i] += gv;
            }
        };
    return out;
}

Value Tape::mean_all(Value x) {
    const Tensor& xt = v(x);
    const int64_t N = xt.size();
    Tensor y = Tensor::scalar(xt.sum() / static_cast<double>(N));
    bool rg = requires_grad(x);
    Value out = push(std::move(y), rg, nullptr);
    if (rg)
        node(out).back = [this, x, out, N]() {
            const double gv = g(out)[0] / static_cast<double>(N);
            double* gx = g(x).data();
            for (int64_t i = 0; i < N; ++i) gx[i] += gv;
        };
    return out;
}

// --- convolution ------------------------------------------------------------------------

Value Tape::conv2d(Value x, Value w, int64_t stride, int64_t pad, int64_t groups) {
    const Tensor& xt = v(x);
    const Tensor& wt = v(w);
    check(xt.rank() == 4 && wt.rank() == 4, "conv2d: expects x[B,Cin,H,W], w[Cout,Cin/g,kh,kw]");
    const int64_t B = xt.dim(0), Cin = xt.dim(1), H = xt.dim(2), W = xt.dim(3);
    const int64_t Cout = wt.dim(0), kh = wt.dim(2), kw = wt.dim(3);
    check(groups >= 1 && Cin % groups == 0 && Cout % groups == 0, "conv2d: group divisibility");
    check(wt.dim(1) == Cin / groups, "conv2d: weight Cin/groups mismatch");
    const int64_t Ho = kernels::conv_out_side(H, kh, stride, pad);
    const int64_t Wo = kernels::conv_out_side(W, kw, stride, pad);
    check(Ho >= 1 && Wo >= 1, "conv2d: output side would be empty");
    Tensor y({B, Cout, Ho, Wo});
    kernels::conv2d(xt.data(), wt.data(), y.data(), B, Cin, H, W, Cout, kh, kw, stride, pad, groups);
    bool rg = requires_grad(x) || requires_grad(w);
    Value out = push(std::move(y), rg, nullptr);
    if (rg)
        node(out).back = [this, x, w, out, B, Cin, H, W, Cout, kh, kw, stride, pad, groups]() {
            const Tensor& go = g(out);
            if (requires_grad(x)) {
                Tensor tmp({B, Cin, H, W});
                kernels::conv2d_grad_input(go.data(), v(w).data(), tmp.data(), B, Cin, H, W, Cout, kh, kw, stride,
                                           pad, groups);
                axpy(g(x), tmp);
            }
            if (requires_grad(w)) {
                Tensor tmp(v(w).shape());
                kernels::conv2d_grad_weight(v(x).data(), go.data(), tmp.data(), B, Cin, H, W, Cout, kh, kw, stride,
                                            pad, groups);
                axpy(g(w), tmp);
            }
        };
    return out;
}

Value Tape::add_bias_ch(Value x, Value b) {
    const Tensor& xt = v(x);
    check(xt.rank() == 4, "add_bias_ch: expects [B,C,H,W]");
    const int64_t B = xt.dim(0), C = xt.dim(1), HW = xt.dim(2) * xt.dim(3);
    check(v(b).size() == C, "add_bias_ch: bias length mismatch");
    Tensor y = xt;
    const double* bd = v(b).data();
    for (int64_t bi = 0; bi < B; ++bi)
        for (int64_t c = 0; c < C; ++c) {
            double* p = y.data() + (bi * C + c) * HW;
            for (int64_t i = 0; i < HW; ++i) p[i] += bd[c];
        }
    bool rg = requires_grad(x) || requires_grad(b);
    Value out = push(std::move(y), rg, nullptr);
    if (rg)
        node(out).back = [this, x, b, out, B, C, HW]() {
            const Tensor& go = g(out);
            if (requires_grad(x)) axpy(g(x), go);
            if (requires_grad(b)) {
                double* gb = g(b).data();
                for (int64_t bi = 0; bi < B; ++bi)
                    for (int64_t c = 0; c < C; ++c) {
                        const double* p = go.data() + (bi * C + c) * HW;
                        double s = 0.0;
                        for (int64_t i = 0; i < HW; ++i) s += p[i];
                        gb[c] += s;
                    }
            }
        };
    return out;
}

Value Tape::conv_transpose2d(Value x, Value w, int64_t stride, int64_t pad) {
    const Tensor& xt = v(x);
    const Tensor& wt = v(w);
    check(xt.rank() == 4 && wt.rank() == 4, "conv_transpose2d: expects x[B,Cin,H,W], w[Cin,Cout,kh,kw]");
    const int64_t B = xt.dim(0), Cin = xt.dim(1), H = xt.dim(2), W = xt.dim(3);
    check(wt.dim(0) == Cin, "conv_transpose2d: weight Cin mismatch");
    const int64_t Cout = wt.dim(1), kh = wt.dim(2), kw = wt.dim(3);
    const int64_t Ho = kernels::conv_transpose_out_side(H, kh, stride, pad);
    const int64_t Wo = kernels::conv_transpose_out_side(W, kw, stride, pad);
    check(Ho >= 1 && Wo >= 1, "conv_transpose2d: output side would be empty");
    Tensor y({B, Cout, Ho, Wo});
    kernels::conv_transpose2d(xt.data(), wt.data(), y.data(), B, Cin, H, W, Cout, kh, kw, stride, pad);
    bool rg = requires_grad(x) || requires_grad(w);
    Value out = push(std::move(y), rg, nullptr);
    if (rg)
        node(out).back = [this, x, w, out, B, Cin, H, W, Cout, kh, kw, stride, pad]() {
            const Tensor& go = g(out);
            if (requires_grad(x)) {
                Tensor tmp({B, Cin, H, W});
                kernels::conv_transpose2d_grad_input(go.data(), v(w).data(), tmp.data(), B, Cin, H, W, Cout, kh, kw,
                                                     stride, pad);
                axpy(g(x), tmp);
            }
            if (requires_grad(w)) {
                Tensor tmp(v(w).shape());
                kernels::conv_transpose2d_grad_weight(v(x).data(), go.data(), tmp.data(), B, Cin, H, W, Cout, kh, kw,
                                                      stride, pad);
                axpy(g(w), tmp);
            }
        };
    return out;
}

// --- losses --------------------------------------------------------------------------------

Value Tape::weighted_ce(Value logits, const std::vector<int>& labels, const std::vector<double>& class_weights,
                        bool weighted_mean) {
    const Tensor& L = v(logits);
    check(L.rank() == 2, "weighted_ce: logits must be [B,C]");
    const int64_t B = L.dim(0), C = L.dim(1);
    check(static_cast<int64_t>(labels.size()) == B, "weighted_ce: labels length mismatch");
    check(static_cast<int64_t>(class_weights.size()) == C, "weighted_ce: weights length mismatch");
    if (!L.all_finite()) throw NumericError("weighted_ce: non-finite logits");
    auto probs = std::make_shared<Tensor>(std::vector<int64_t>{B, C});
    kernels::ref::softmax_rows(L.data(), probs->data(), B, C);
    double total = 0.0, wsum = 0.0;
    auto wvec = std::make_shared<std::vector<double>>(static_cast<size_t>(B));
    auto yvec = std::make_shared<std::vector<int>>(labels);
    for (int64_t b = 0; b < B; ++b) {
        const int y = labels[static_cast<size_t>(b)];
        check(y >= 0 && y < C, "weighted_ce: label out of range");
        const double wb = class_weights[static_cast<size_t>(y)];
        (*wvec)[static_cast<size_t>(b)] = wb;
        wsum += wb;
        const double* lr = L.data() + b * C;
        double mx = lr[0];
        for (int64_t j = 1; j < C; ++j) mx = std::max(mx, lr[j]);
        double se = 0.0;
        for (int64_t j = 0; j < C; ++j) se += std::exp(lr[j] - mx);
        const double lse = mx + std::log(se);
        total += wb * (lse - lr[y]);
    }
    const double denom = weighted_mean ? wsum : 1.0;
    bool rg = requires_grad(logits);
    Value out = push(Tensor::scalar(total / denom), rg, nullptr);
    if (rg)
        node(out).back = [this, logits, out, probs, wvec, yvec, B, C, denom]() {
            const double go = g(out)[0];
            double* gl = g(logits).data();
            for (int64_t b = 0; b < B; ++b) {
                const double scale = go * (*wvec)[static_cast<size_t>(b)] / denom;
                const double* pr = probs->data() + b * C;
                double* gr = gl + b * C;
                const int y = (*yvec)[static_cast<size_t>(b)];
                for (int64_t j = 0; j < C; ++j) gr[j] += scale * (pr[j] - (j == y ? 1.0 : 0.0));
            }
        };
    return out;
}

Value Tape::bce_with_logits_mean(Value logits, Tensor targets) {
    const Tensor& L = v(logits);
    check(L.size() == targets.size(), "bce_with_logits_mean: target size mismatch");
    const int64_t N = L.size();
    check(N > 0, "bce_with_logits_mean: empty input");
    double total = 0.0;
    for (int64_t i = 0; i < N; ++i) {
        const double x = L[i], t = targets[i];
        total += std::max(x, 0.0) - x * t + std::log1p(std::exp(-std::abs(x)));
    }
    auto tgt = std::make_shared<Tensor>(std::move(targets));
    bool rg = requires_grad(logits);
    Value out = push(Tensor::scalar(total / static_cast<double>(N)), rg, nullptr);
    if (rg)
        node(out).back = [this, logits, out, tgt, N]() {
            const double go = g(out)[0] / static_cast<double>(N);
            double* gl = g(logits).data();
            const double* xd = v(logits).data();
            for (int64_t i = 0; i < N; ++i) {
                const double s = 1.0 / (1.0 + std::exp(-xd[i]));
                gl[i] += go * (s - (*tgt)[i]);
            }
        };
    return out;
}

}  // namespace stroke
