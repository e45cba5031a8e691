#include "attrgan/autograd.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <unordered_map>
#include <unordered_set>

namespace attrgan::ag {

namespace {

thread_local bool t_grad_enabled = true;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

Var op_node(const char* name, Tensor value, std::vector<Var> parents,
            std::function<std::vector<Var>(const Var&)> bwd) {
    bool rg = false;
    if (t_grad_enabled) {
        for (const auto& p : parents) {
            if (p && p->requires_grad) {
                rg = true;
                break;
            }
        }
    }
    auto v = std::make_shared<Variable>(std::move(value), rg);
    v->op = name;
    if (rg) {
        v->parents = std::move(parents);
        v->backward = std::move(bwd);
    }
    return v;
}

int dim_or_throw(const Var& v, int rank, const char* op) {
    if (v->value.rank() != rank)
        throw std::invalid_argument(std::string(op) + ": expected rank " + std::to_string(rank) + " tensor, got " +
                                    v->value.shape_str());
    return rank;
}

// out spatial size for square kernel
int conv_out_dim(int in, int k, int stride, int pad) {
    const int out = (in + 2 * pad - k) / stride + 1;
    if (out <= 0) throw std::invalid_argument("conv2d: kernel does not fit input");
    return out;
}

// cols layout: [c*k*k, ho*wo] row-major, so each (ci,ky,kx) slot is a
// contiguous span that maps to a shifted scanline of the input plane
void im2col(const double* x, int c, int h, int w, int k, int stride, int pad, double* cols, int ho, int wo) {
    const size_t npix = static_cast<size_t>(ho) * wo;
    int slot = 0;
    for (int ci = 0; ci < c; ++ci) {
        const double* plane = x + static_cast<size_t>(ci) * h * w;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx, ++slot) {
                double* dst = cols + static_cast<size_t>(slot) * npix;
                for (int oy = 0; oy < ho; ++oy) {
                    double* row = dst + static_cast<size_t>(oy) * wo;
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= h) {
                        std::fill(row, row + wo, 0.0);
                        continue;
                    }
                    const double* src = plane + static_cast<size_t>(iy) * w;
                    // valid ox range: 0 <= ox*stride - pad + kx < w
                    const int lo = std::max(0, (pad - kx + stride - 1) / stride);
                    const int hi = std::min(wo, (w - 1 - kx + pad) / stride + 1);
                    if (lo > 0) std::fill(row, row + lo, 0.0);
                    if (hi < wo) std::fill(row + hi, row + wo, 0.0);
                    if (stride == 1) {
                        if (hi > lo) std::copy_n(src + lo - pad + kx, hi - lo, row + lo);
                    } else {
                        for (int ox = lo; ox < hi; ++ox) row[ox] = src[ox * stride - pad + kx];
                    }
                }
            }
        }
    }
}

// adjoint of im2col; x must be zero-initialised
void col2im(const double* cols, int c, int h, int w, int k, int stride, int pad, double* x, int ho, int wo) {
    const size_t npix = static_cast<size_t>(ho) * wo;
    int slot = 0;
    for (int ci = 0; ci < c; ++ci) {
        double* plane = x + static_cast<size_t>(ci) * h * w;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx, ++slot) {
                const double* src_slot = cols + static_cast<size_t>(slot) * npix;
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= h) continue;
                    const double* row = src_slot + static_cast<size_t>(oy) * wo;
                    double* dst = plane + static_cast<size_t>(iy) * w;
                    const int lo = std::max(0, (pad - kx + stride - 1) / stride);
                    const int hi = std::min(wo, (w - 1 - kx + pad) / stride + 1);
                    if (stride == 1) {
                        double* d = dst - pad + kx;
                        for (int ox = lo; ox < hi; ++ox) d[ox] += row[ox];
                    } else {
                        for (int ox = lo; ox < hi; ++ox) dst[ox * stride - pad + kx] += row[ox];
                    }
                }
            }
        }
    }
}

struct ConvDims {
    int b, cin, h, w, cout, k, ho, wo;
};

ConvDims conv_dims(const std::vector<int>& xs, const std::vector<int>& ws, int stride, int pad) {
    if (xs.size() != 4 || ws.size() != 4) throw std::invalid_argument("conv2d: need 4-d input and weight");
    if (ws[2] != ws[3]) throw std::invalid_argument("conv2d: only square kernels supported");
    if (xs[1] != ws[1])
        throw std::invalid_argument("conv2d: input channels " + std::to_string(xs[1]) + " != weight channels " +
                                    std::to_string(ws[1]));
    ConvDims d{};
    d.b = xs[0];
    d.cin = xs[1];
    d.h = xs[2];
    d.w = xs[3];
    d.cout = ws[0];
    d.k = ws[2];
    d.ho = conv_out_dim(d.h, d.k, stride, pad);
    d.wo = conv_out_dim(d.w, d.k, stride, pad);
    return d;
}

Var bcast_scalar(const Var& g, std::vector<int> shape);

Var embed_diag(const Var& g);

Var pad_cols(const Var& g, int start, int total);

Var slice_channels(const Var& x, int start, int len);
Var pad_channels(const Var& g, int start, int total);

// scalar -> full tensor (backward of sum/mean)
Var bcast_scalar(const Var& g, std::vector<int> shape) {
    Tensor out(shape);
    const double v = g->value.item();
    std::fill(out.data.begin(), out.data.end(), v);
    auto shp = shape;
    return op_node("bcast_scalar", std::move(out), {g},
                   [](const Var& go) -> std::vector<Var> { return {sum(go)}; });
}

Var embed_diag(const Var& g) {
    const int m = g->value.dim(0);
    Tensor out({m, m});
    for (int i = 0; i < m; ++i) out.data[static_cast<size_t>(i) * m + i] = g->value.data[static_cast<size_t>(i)];
    return op_node("embed_diag", std::move(out), {g},
                   [](const Var& go) -> std::vector<Var> { return {diag(go)}; });
}

Var pad_cols(const Var& g, int start, int total) {
    const int m = g->value.dim(0);
    const int len = g->value.dim(1);
    Tensor out({m, total});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < len; ++j)
            out.data[static_cast<size_t>(i) * total + start + j] = g->value.data[static_cast<size_t>(i) * len + j];
    return op_node("pad_cols", std::move(out), {g}, [start, len](const Var& go) -> std::vector<Var> {
        return {slice_cols(go, start, len)};
    });
}

Var slice_channels(const Var& x, int start, int len) {
    dim_or_throw(x, 4, "slice_channels");
    const auto& s = x->value.shape;
    const int b = s[0], c = s[1], h = s[2], w = s[3];
    if (start < 0 || start + len > c) throw std::invalid_argument("slice_channels: out of range");
    Tensor out({b, len, h, w});
    const size_t hw = static_cast<size_t>(h) * w;
    for (int bi = 0; bi < b; ++bi)
        std::copy_n(x->value.data.data() + (static_cast<size_t>(bi) * c + start) * hw, static_cast<size_t>(len) * hw,
                    out.data.data() + static_cast<size_t>(bi) * len * hw);
    return op_node("slice_channels", std::move(out), {x}, [start, c](const Var& go) -> std::vector<Var> {
        return {pad_channels(go, start, c)};
    });
}

Var pad_channels(const Var& g, int start, int total) {
    const auto& s = g->value.shape;
    const int b = s[0], len = s[1], h = s[2], w = s[3];
    Tensor out({b, total, h, w});
    const size_t hw = static_cast<size_t>(h) * w;
    for (int bi = 0; bi < b; ++bi)
        std::copy_n(g->value.data.data() + static_cast<size_t>(bi) * len * hw, static_cast<size_t>(len) * hw,
                    out.data.data() + (static_cast<size_t>(bi) * total + start) * hw);
    return op_node("pad_channels", std::move(out), {g}, [start, len](const Var& go) -> std::vector<Var> {
        return {slice_channels(go, start, len)};
    });
}

}  // namespace

Var make_var(Tensor value, bool requires_grad) { return std::make_shared<Variable>(std::move(value), requires_grad); }
Var constant(Tensor value) { return std::make_shared<Variable>(std::move(value), false); }
Var scalar(double v) { return constant(Tensor::scalar(v)); }

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = prev_; }

Var detach(const Var& v) { return constant(v->value); }

std::vector<Var> grad(const Var& loss, const std::vector<Var>& wrt, bool create_graph) {
    if (loss->value.numel() != 1) throw std::invalid_argument("grad: loss must be a scalar");

    std::vector<Var> result(wrt.size());
    auto zeros_for = [](const Var& w) { return constant(Tensor::zeros(w->value.shape)); };

    if (!loss->requires_grad) {
        for (size_t i = 0; i < wrt.size(); ++i) result[i] = zeros_for(wrt[i]);
        return result;
    }

    // iterative post-order DFS over the requires_grad subgraph
    std::vector<Var> topo;
    std::unordered_set<Variable*> visited;
    struct Frame {
        Var node;
        size_t next_parent;
    };
    std::vector<Frame> stack;
    stack.push_back({loss, 0});
    visited.insert(loss.get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next_parent < f.node->parents.size()) {
            Var p = f.node->parents[f.next_parent++];
            if (p && p->requires_grad && !visited.count(p.get())) {
                visited.insert(p.get());
                stack.push_back({p, 0});
            }
        } else {
            topo.push_back(f.node);
            stack.pop_back();
        }
    }

    std::unordered_map<Variable*, Var> grads;
    grads[loss.get()] = constant(Tensor::full(loss->value.shape, 1.0));

    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        const Var& node = *it;
        auto git = grads.find(node.get());
        if (git == grads.end() || !node->backward) continue;
        std::vector<Var> pgrads;
        {
            const bool prev = t_grad_enabled;
            t_grad_enabled = create_graph;
            try {
                pgrads = node->backward(git->second);
            } catch (...) {
                t_grad_enabled = prev;
                throw;
            }
            t_grad_enabled = prev;
        }
        if (pgrads.size() != node->parents.size())
            throw std::logic_error(std::string("grad: backward of ") + node->op + " returned wrong arity");
        for (size_t i = 0; i < pgrads.size(); ++i) {
            const Var& p = node->parents[i];
            if (!p || !p->requires_grad || !pgrads[i]) continue;
            check_same_shape(pgrads[i]->value, p->value, node->op);
            auto existing = grads.find(p.get());
            if (existing == grads.end()) {
                grads[p.get()] = pgrads[i];
            } else {
                const bool prev = t_grad_enabled;
                t_grad_enabled = create_graph;
                existing->second = add(existing->second, pgrads[i]);
                t_grad_enabled = prev;
            }
        }
    }

    for (size_t i = 0; i < wrt.size(); ++i) {
        auto it2 = grads.find(wrt[i].get());
        result[i] = it2 != grads.end() ? it2->second : zeros_for(wrt[i]);
    }
    return result;
}

// ---- elementwise ----

Var add(const Var& a, const Var& b) {
    check_same_shape(a->value, b->value, "add");
    Tensor out(a->value.shape);
    for (std::int64_t i = 0; i < out.numel(); ++i) out.data[i] = a->value.data[i] + b->value.data[i];
    return op_node("add", std::move(out), {a, b}, [](const Var& g) -> std::vector<Var> { return {g, g}; });
}

Var sub(const Var& a, const Var& b) {
    check_same_shape(a->value, b->value, "sub");
    Tensor out(a->value.shape);
    for (std::int64_t i = 0; i < out.numel(); ++i) out.data[i] = a->value.data[i] - b->value.data[i];
    return op_node("sub", std::move(out), {a, b}, [](const Var& g) -> std::vector<Var> { return {g, neg(g)}; });
}

Var mul(const Var& a, const Var& b) {
    check_same_shape(a->value, b->value, "mul");
    Tensor out(a->value.shape);
    for (std::int64_t i = 0; i < out.numel(); ++i) out.data[i] = a->value.data[i] * b->value.data[i];
    return op_node("mul", std::move(out), {a, b},
                   [a, b](const Var& g) -> std::vector<Var> { return {mul(g, b), mul(g, a)}; });
}

Var div(const Var& a, const Var& b) {
    check_same_shape(a->value, b->value, "div");
    Tensor out(a->value.shape);
    for (std::int64_t i = 0; i < out.numel(); ++i) out.data[i] = a->value.data[i] / b->value.data[i];
    return op_node("div", std::move(out), {a, b}, [a, b](const Var& g) -> std::vector<Var> {
        return {div(g, b), neg(mul(g, div(a, mul(b, b))))};
    });
}

Var neg(const Var& a) {
    Tensor out(a->value.shape);
    for (std::int64_t i = 0; i < out.numel(); ++i) out.data[i] = -a->value.data[i];
    return op_node("neg", std::move(out), {a}, [](const Var& g) -> std::vector<Var> { return {neg(g)}; });
}

Var add_scalar(const Var& a, double c) {
    Tensor out(a->value.shape);
    for (std::int64_t i = 0; i < out.numel(); ++i) out.data[i] = a->value.data[i] + c;
    return op_node("add_scalar", std::move(out), {a}, [](const Var& g) -> std::vector<Var> { return {g}; });
}

Var mul_scalar(const Var& a, double c) {
    Tensor out(a->value.shape);
    for (std::int64_t i = 0; i < out.numel(); ++i) out.data[i] = a->value.data[i] * c;
    return op_node("mul_scalar", std::move(out), {a},
                   [c](const Var& g) -> std::vector<Var> { return {mul_scalar(g, c)}; });
}

Var pow_scalar(const Var& a, double p) {
    Tensor out(a->value.shape);
    for (std::int64_t i = 0; i < out.numel(); ++i) out.data[i] = std::pow(a->value.data[i], p);
    return op_node("pow_scalar", std::move(out), {a}, [a, p](const Var& g) -> std::vector<Var> {
        return {mul_scalar(mul(g, pow_scalar(a, p - 1.0)), p)};
    });
}

Var exp(const Var& a) {
    Tensor out(a->value.shape);
    for (std::int64_t i = 0; i < out.numel(); ++i) out.data[i] = std::exp(a->value.data[i]);
    return op_node("exp", std::move(out), {a}, [a](const Var& g) -> std::vector<Var> { return {mul(g, exp(a))}; });
}

Var log(const Var& a) {
    Tensor out(a->value.shape);
    for (std::int64_t i = 0; i < out.numel(); ++i) out.data[i] = std::log(a->value.data[i]);
    return op_node("log", std::move(out), {a}, [a](const Var& g) -> std::vector<Var> { return {div(g, a)}; });
}

Var sqrt(const Var& a) {
    Tensor out(a->value.shape);
    for (std::int64_t i = 0; i < out.numel(); ++i) out.data[i] = std::sqrt(a->value.data[i]);
    return op_node("sqrt", std::move(out), {a}, [a](const Var& g) -> std::vector<Var> {
        return {mul_scalar(mul(g, pow_scalar(a, -0.5)), 0.5)};
    });
}

Var tanh(const Var& a) {
    Tensor out(a->value.shape);
    for (std::int64_t i = 0; i < out.numel(); ++i) out.data[i] = std::tanh(a->value.data[i]);
    return op_node("tanh", std::move(out), {a}, [a](const Var& g) -> std::vector<Var> {
        Var t = tanh(a);
        return {mul(g, add_scalar(neg(mul(t, t)), 1.0))};
    });
}

Var sigmoid(const Var& a) {
    Tensor out(a->value.shape);
    for (std::int64_t i = 0; i < out.numel(); ++i) out.data[i] = 1.0 / (1.0 + std::exp(-a->value.data[i]));
    return op_node("sigmoid", std::move(out), {a}, [a](const Var& g) -> std::vector<Var> {
        Var s = sigmoid(a);
        return {mul(g, mul(s, add_scalar(neg(s), 1.0)))};
    });
}

namespace {
// derivative masks are piecewise constant in the input; treating them as
// constants keeps second-order gradients exact almost everywhere
Var masked_grad(const Var& g, const Tensor& mask) {
    return mul(g, constant(mask));
}
}  // namespace

Var relu(const Var& a) {
    Tensor out(a->value.shape);
    for (std::int64_t i = 0; i < out.numel(); ++i) out.data[i] = a->value.data[i] > 0.0 ? a->value.data[i] : 0.0;
    return op_node("relu", std::move(out), {a}, [a](const Var& g) -> std::vector<Var> {
        Tensor mask(a->value.shape);
        for (std::int64_t i = 0; i < mask.numel(); ++i) mask.data[i] = a->value.data[i] > 0.0 ? 1.0 : 0.0;
        return {masked_grad(g, mask)};
    });
}

Var leaky_relu(const Var& a, double slope) {
    Tensor out(a->value.shape);
    for (std::int64_t i = 0; i < out.numel(); ++i) {
        const double v = a->value.data[i];
        out.data[i] = v > 0.0 ? v : slope * v;
    }
    return op_node("leaky_relu", std::move(out), {a}, [a, slope](const Var& g) -> std::vector<Var> {
        Tensor mask(a->value.shape);
        for (std::int64_t i = 0; i < mask.numel(); ++i) mask.data[i] = a->value.data[i] > 0.0 ? 1.0 : slope;
        return {masked_grad(g, mask)};
    });
}

Var clamp(const Var& a, double lo, double hi) {
    Tensor out(a->value.shape);
    for (std::int64_t i = 0; i < out.numel(); ++i) out.data[i] = std::min(hi, std::max(lo, a->value.data[i]));
    return op_node("clamp", std::move(out), {a}, [a, lo, hi](const Var& g) -> std::vector<Var> {
        Tensor mask(a->value.shape);
        for (std::int64_t i = 0; i < mask.numel(); ++i) {
            const double v = a->value.data[i];
            mask.data[i] = (v >= lo && v <= hi) ? 1.0 : 0.0;
        }
        return {masked_grad(g, mask)};
    });
}

// ---- reductions / shape ----

Var sum(const Var& a) {
    double acc = 0.0;
    for (double v : a->value.data) acc += v;
    auto shape = a->value.shape;
    return op_node("sum", Tensor::scalar(acc), {a}, [shape](const Var& g) -> std::vector<Var> {
        return {bcast_scalar(g, shape)};
    });
}

Var mean(const Var& a) {
    if (a->value.numel() == 0) throw std::invalid_argument("mean: empty tensor");
    const double inv = 1.0 / static_cast<double>(a->value.numel());
    return mul_scalar(sum(a), inv);
}

Var sum_rows(const Var& a) {
    dim_or_throw(a, 2, "sum_rows");
    const int m = a->value.dim(0), n = a->value.dim(1);
    Tensor out({m});
    for (int i = 0; i < m; ++i) {
        double acc = 0.0;
        for (int j = 0; j < n; ++j) acc += a->value.data[static_cast<size_t>(i) * n + j];
        out.data[static_cast<size_t>(i)] = acc;
    }
    return op_node("sum_rows", std::move(out), {a}, [m, n](const Var& g) -> std::vector<Var> {
        return {scale_rows(constant(Tensor::full({m, n}, 1.0)), g)};
    });
}

Var sum_cols(const Var& a) {
    dim_or_throw(a, 2, "sum_cols");
    const int m = a->value.dim(0), n = a->value.dim(1);
    Tensor out({n});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.data[static_cast<size_t>(j)] += a->value.data[static_cast<size_t>(i) * n + j];
    return op_node("sum_cols", std::move(out), {a}, [m, n](const Var& g) -> std::vector<Var> {
        return {matmul(constant(Tensor::full({m, 1}, 1.0)), reshape(g, {1, n}))};
    });
}

Var diag(const Var& a) {
    dim_or_throw(a, 2, "diag");
    const int m = a->value.dim(0);
    if (a->value.dim(1) != m) throw std::invalid_argument("diag: matrix must be square");
    Tensor out({m});
    for (int i = 0; i < m; ++i) out.data[static_cast<size_t>(i)] = a->value.data[static_cast<size_t>(i) * m + i];
    return op_node("diag", std::move(out), {a},
                   [](const Var& g) -> std::vector<Var> { return {embed_diag(g)}; });
}

Var reshape(const Var& a, std::vector<int> shape) {
    if (Tensor::count(shape) != a->value.numel())
        throw std::invalid_argument("reshape: element count mismatch for " + a->value.shape_str());
    Tensor out(shape, a->value.data);
    auto orig = a->value.shape;
    return op_node("reshape", std::move(out), {a}, [orig](const Var& g) -> std::vector<Var> {
        return {reshape(g, orig)};
    });
}

Var transpose(const Var& a) {
    dim_or_throw(a, 2, "transpose");
    const int m = a->value.dim(0), n = a->value.dim(1);
    Tensor out({n, m});
    CMapMat src(a->value.data.data(), m, n);
    MapMat dst(out.data.data(), n, m);
    dst = src.transpose();
    return op_node("transpose", std::move(out), {a},
                   [](const Var& g) -> std::vector<Var> { return {transpose(g)}; });
}

Var slice_cols(const Var& a, int start, int len) {
    dim_or_throw(a, 2, "slice_cols");
    const int m = a->value.dim(0), n = a->value.dim(1);
    if (start < 0 || len < 0 || start + len > n) throw std::invalid_argument("slice_cols: out of range");
    Tensor out({m, len});
    for (int i = 0; i < m; ++i)
        std::copy_n(a->value.data.data() + static_cast<size_t>(i) * n + start, len,
                    out.data.data() + static_cast<size_t>(i) * len);
    return op_node("slice_cols", std::move(out), {a}, [start, n](const Var& g) -> std::vector<Var> {
        return {pad_cols(g, start, n)};
    });
}

Var concat_cols(const Var& a, const Var& b) {
    dim_or_throw(a, 2, "concat_cols");
    dim_or_throw(b, 2, "concat_cols");
    const int m = a->value.dim(0), p = a->value.dim(1), q = b->value.dim(1);
    if (b->value.dim(0) != m) throw std::invalid_argument("concat_cols: row mismatch");
    Tensor out({m, p + q});
    for (int i = 0; i < m; ++i) {
        std::copy_n(a->value.data.data() + static_cast<size_t>(i) * p, p,
                    out.data.data() + static_cast<size_t>(i) * (p + q));
        std::copy_n(b->value.data.data() + static_cast<size_t>(i) * q, q,
                    out.data.data() + static_cast<size_t>(i) * (p + q) + p);
    }
    return op_node("concat_cols", std::move(out), {a, b}, [p, q](const Var& g) -> std::vector<Var> {
        return {slice_cols(g, 0, p), slice_cols(g, p, q)};
    });
}

Var scale_rows(const Var& a, const Var& s) {
    dim_or_throw(a, 2, "scale_rows");
    dim_or_throw(s, 1, "scale_rows");
    const int m = a->value.dim(0), n = a->value.dim(1);
    if (s->value.dim(0) != m) throw std::invalid_argument("scale_rows: scale length mismatch");
    Tensor out({m, n});
    for (int i = 0; i < m; ++i) {
        const double f = s->value.data[static_cast<size_t>(i)];
        for (int j = 0; j < n; ++j)
            out.data[static_cast<size_t>(i) * n + j] = a->value.data[static_cast<size_t>(i) * n + j] * f;
    }
    return op_node("scale_rows", std::move(out), {a, s}, [a, s](const Var& g) -> std::vector<Var> {
        return {scale_rows(g, s), sum_rows(mul(g, a))};
    });
}

Var add_rowvec(const Var& a, const Var& b) {
    dim_or_throw(a, 2, "add_rowvec");
    dim_or_throw(b, 1, "add_rowvec");
    const int m = a->value.dim(0), n = a->value.dim(1);
    if (b->value.dim(0) != n) throw std::invalid_argument("add_rowvec: vector length mismatch");
    Tensor out({m, n});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            out.data[static_cast<size_t>(i) * n + j] =
                a->value.data[static_cast<size_t>(i) * n + j] + b->value.data[static_cast<size_t>(j)];
    return op_node("add_rowvec", std::move(out), {a, b},
                   [](const Var& g) -> std::vector<Var> { return {g, sum_cols(g)}; });
}

Var matmul(const Var& a, const Var& b) {
    dim_or_throw(a, 2, "matmul");
    dim_or_throw(b, 2, "matmul");
    const int m = a->value.dim(0), k = a->value.dim(1), n = b->value.dim(1);
    if (b->value.dim(0) != k)
        throw std::invalid_argument("matmul: inner dimension mismatch " + a->value.shape_str() + " x " +
                                    b->value.shape_str());
    Tensor out({m, n});
    CMapMat am(a->value.data.data(), m, k);
    CMapMat bm(b->value.data.data(), k, n);
    MapMat cm(out.data.data(), m, n);
    cm.noalias() = am * bm;
    return op_node("matmul", std::move(out), {a, b}, [a, b](const Var& g) -> std::vector<Var> {
        return {matmul(g, transpose(b)), matmul(transpose(a), g)};
    });
}

// ---- image ops ----

Var conv2d(const Var& x, const Var& w, int stride, int pad) {
    const ConvDims d = conv_dims(x->value.shape, w->value.shape, stride, pad);
    Tensor out({d.b, d.cout, d.ho, d.wo});
    const int patch = d.cin * d.k * d.k;
    const int npix = d.ho * d.wo;
    std::vector<double> cols(static_cast<size_t>(npix) * patch);
    CMapMat wm(w->value.data.data(), d.cout, patch);
    for (int bi = 0; bi < d.b; ++bi) {
        im2col(x->value.data.data() + static_cast<size_t>(bi) * d.cin * d.h * d.w, d.cin, d.h, d.w, d.k, stride, pad,
               cols.data(), d.ho, d.wo);
        CMapMat cm(cols.data(), patch, npix);
        MapMat om(out.data.data() + static_cast<size_t>(bi) * d.cout * npix, d.cout, npix);
        om.noalias() = wm * cm;
    }
    auto xshape = x->value.shape;
    auto wshape = w->value.shape;
    return op_node("conv2d", std::move(out), {x, w},
                   [x, w, stride, pad, xshape, wshape](const Var& g) -> std::vector<Var> {
                       return {conv2d_input_grad(g, w, stride, pad, xshape),
                               conv2d_weight_grad(x, g, stride, pad, wshape)};
                   });
}

Var conv2d_input_grad(const Var& gy, const Var& w, int stride, int pad, std::vector<int> x_shape) {
    const ConvDims d = conv_dims(x_shape, w->value.shape, stride, pad);
    if (gy->value.shape != std::vector<int>{d.b, d.cout, d.ho, d.wo})
        throw std::invalid_argument("conv2d_input_grad: gradient shape mismatch " + gy->value.shape_str());
    Tensor out(x_shape);
    const int patch = d.cin * d.k * d.k;
    const int npix = d.ho * d.wo;
    std::vector<double> cols(static_cast<size_t>(npix) * patch);
    CMapMat wm(w->value.data.data(), d.cout, patch);
    for (int bi = 0; bi < d.b; ++bi) {
        CMapMat gm(gy->value.data.data() + static_cast<size_t>(bi) * d.cout * npix, d.cout, npix);
        MapMat cm(cols.data(), patch, npix);
        cm.noalias() = wm.transpose() * gm;
        col2im(cols.data(), d.cin, d.h, d.w, d.k, stride, pad,
               out.data.data() + static_cast<size_t>(bi) * d.cin * d.h * d.w, d.ho, d.wo);
    }
    auto wshape = w->value.shape;
    return op_node("conv2d_input_grad", std::move(out), {gy, w},
                   [gy, w, stride, pad, wshape](const Var& h) -> std::vector<Var> {
                       return {conv2d(h, w, stride, pad), conv2d_weight_grad(h, gy, stride, pad, wshape)};
                   });
}

Var conv2d_weight_grad(const Var& x, const Var& gy, int stride, int pad, std::vector<int> w_shape) {
    const ConvDims d = conv_dims(x->value.shape, w_shape, stride, pad);
    if (gy->value.shape != std::vector<int>{d.b, d.cout, d.ho, d.wo})
        throw std::invalid_argument("conv2d_weight_grad: gradient shape mismatch " + gy->value.shape_str());
    Tensor out(w_shape);
    const int patch = d.cin * d.k * d.k;
    const int npix = d.ho * d.wo;
    std::vector<double> cols(static_cast<size_t>(npix) * patch);
    MapMat wm(out.data.data(), d.cout, patch);
    for (int bi = 0; bi < d.b; ++bi) {
        im2col(x->value.data.data() + static_cast<size_t>(bi) * d.cin * d.h * d.w, d.cin, d.h, d.w, d.k, stride, pad,
               cols.data(), d.ho, d.wo);
        CMapMat cm(cols.data(), patch, npix);
        CMapMat gm(gy->value.data.data() + static_cast<size_t>(bi) * d.cout * npix, d.cout, npix);
        wm.noalias() += gm * cm.transpose();
    }
    auto xshape = x->value.shape;
    return op_node("conv2d_weight_grad", std::move(out), {x, gy},
                   [x, gy, stride, pad, xshape](const Var& hw) -> std::vector<Var> {
                       return {conv2d_input_grad(gy, hw, stride, pad, xshape), conv2d(x, hw, stride, pad)};
                   });
}

Var add_channel_bias(const Var& x, const Var& b) {
    dim_or_throw(x, 4, "add_channel_bias");
    dim_or_throw(b, 1, "add_channel_bias");
    const auto& s = x->value.shape;
    if (b->value.dim(0) != s[1]) throw std::invalid_argument("add_channel_bias: channel mismatch");
    Tensor out(s);
    const size_t hw = static_cast<size_t>(s[2]) * s[3];
    size_t idx = 0;
    for (int bi = 0; bi < s[0]; ++bi)
        for (int c = 0; c < s[1]; ++c) {
            const double bv = b->value.data[static_cast<size_t>(c)];
            for (size_t p = 0; p < hw; ++p, ++idx) out.data[idx] = x->value.data[idx] + bv;
        }
    return op_node("add_channel_bias", std::move(out), {x, b}, [](const Var& g) -> std::vector<Var> {
        return {g, sum_cols(sum_hw(g))};
    });
}

Var mul_channel(const Var& x, const Var& s) {
    dim_or_throw(x, 4, "mul_channel");
    dim_or_throw(s, 2, "mul_channel");
    const auto& xs = x->value.shape;
    if (s->value.dim(0) != xs[0] || s->value.dim(1) != xs[1])
        throw std::invalid_argument("mul_channel: scale shape mismatch");
    Tensor out(xs);
    const size_t hw = static_cast<size_t>(xs[2]) * xs[3];
    size_t idx = 0;
    for (int bi = 0; bi < xs[0]; ++bi)
        for (int c = 0; c < xs[1]; ++c) {
            const double f = s->value.data[static_cast<size_t>(bi) * xs[1] + c];
            for (size_t p = 0; p < hw; ++p, ++idx) out.data[idx] = x->value.data[idx] * f;
        }
    return op_node("mul_channel", std::move(out), {x, s}, [x, s](const Var& g) -> std::vector<Var> {
        return {mul_channel(g, s), sum_hw(mul(g, x))};
    });
}

Var add_channel(const Var& x, const Var& t) {
    dim_or_throw(x, 4, "add_channel");
    dim_or_throw(t, 2, "add_channel");
    const auto& xs = x->value.shape;
    if (t->value.dim(0) != xs[0] || t->value.dim(1) != xs[1])
        throw std::invalid_argument("add_channel: shift shape mismatch");
    Tensor out(xs);
    const size_t hw = static_cast<size_t>(xs[2]) * xs[3];
    size_t idx = 0;
    for (int bi = 0; bi < xs[0]; ++bi)
        for (int c = 0; c < xs[1]; ++c) {
            const double f = t->value.data[static_cast<size_t>(bi) * xs[1] + c];
            for (size_t p = 0; p < hw; ++p, ++idx) out.data[idx] = x->value.data[idx] + f;
        }
    return op_node("add_channel", std::move(out), {x, t},
                   [](const Var& g) -> std::vector<Var> { return {g, sum_hw(g)}; });
}

Var sum_hw(const Var& x) {
    dim_or_throw(x, 4, "sum_hw");
    const auto& s = x->value.shape;
    Tensor out({s[0], s[1]});
    const size_t hw = static_cast<size_t>(s[2]) * s[3];
    size_t idx = 0;
    for (int bi = 0; bi < s[0]; ++bi)
        for (int c = 0; c < s[1]; ++c) {
            double acc = 0.0;
            for (size_t p = 0; p < hw; ++p, ++idx) acc += x->value.data[idx];
            out.data[static_cast<size_t>(bi) * s[1] + c] = acc;
        }
    const int h = s[2], w = s[3];
    return op_node("sum_hw", std::move(out), {x}, [h, w](const Var& g) -> std::vector<Var> {
        return {broadcast_hw(g, h, w)};
    });
}

Var broadcast_hw(const Var& s, int h, int w) {
    dim_or_throw(s, 2, "broadcast_hw");
    const int b = s->value.dim(0), c = s->value.dim(1);
    Tensor out({b, c, h, w});
    const size_t hw = static_cast<size_t>(h) * w;
    size_t idx = 0;
    for (int bi = 0; bi < b; ++bi)
        for (int ci = 0; ci < c; ++ci) {
            const double v = s->value.data[static_cast<size_t>(bi) * c + ci];
            for (size_t p = 0; p < hw; ++p, ++idx) out.data[idx] = v;
        }
    return op_node("broadcast_hw", std::move(out), {s},
                   [](const Var& g) -> std::vector<Var> { return {sum_hw(g)}; });
}

Var upsample2x(const Var& x) {
    dim_or_throw(x, 4, "upsample2x");
    const auto& s = x->value.shape;
    const int b = s[0], c = s[1], h = s[2], w = s[3];
    Tensor out({b, c, h * 2, w * 2});
    for (int bc = 0; bc < b * c; ++bc) {
        const double* src = x->value.data.data() + static_cast<size_t>(bc) * h * w;
        double* dst = out.data.data() + static_cast<size_t>(bc) * h * w * 4;
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx) {
                const double v = src[static_cast<size_t>(y) * w + xx];
                double* d0 = dst + (static_cast<size_t>(2 * y) * 2 * w + 2 * xx);
                d0[0] = v;
                d0[1] = v;
                d0[2 * static_cast<size_t>(w)] = v;
                d0[2 * static_cast<size_t>(w) + 1] = v;
            }
    }
    return op_node("upsample2x", std::move(out), {x}, [](const Var& g) -> std::vector<Var> {
        return {mul_scalar(avg_pool2x(g), 4.0)};
    });
}

Var avg_pool2x(const Var& x) {
    dim_or_throw(x, 4, "avg_pool2x");
    const auto& s = x->value.shape;
    const int b = s[0], c = s[1], h = s[2], w = s[3];
    if (h % 2 || w % 2) throw std::invalid_argument("avg_pool2x: odd spatial size");
    Tensor out({b, c, h / 2, w / 2});
    for (int bc = 0; bc < b * c; ++bc) {
        const double* src = x->value.data.data() + static_cast<size_t>(bc) * h * w;
        double* dst = out.data.data() + static_cast<size_t>(bc) * (h / 2) * (w / 2);
        for (int y = 0; y < h / 2; ++y)
            for (int xx = 0; xx < w / 2; ++xx) {
                const double* s0 = src + (static_cast<size_t>(2 * y) * w + 2 * xx);
                dst[static_cast<size_t>(y) * (w / 2) + xx] =
                    0.25 * (s0[0] + s0[1] + s0[static_cast<size_t>(w)] + s0[static_cast<size_t>(w) + 1]);
            }
    }
    return op_node("avg_pool2x", std::move(out), {x}, [](const Var& g) -> std::vector<Var> {
        return {mul_scalar(upsample2x(g), 0.25)};
    });
}

Var global_avg_pool(const Var& x) {
    dim_or_throw(x, 4, "global_avg_pool");
    const double inv = 1.0 / (static_cast<double>(x->value.dim(2)) * x->value.dim(3));
    return mul_scalar(sum_hw(x), inv);
}

Var concat_channels(const Var& a, const Var& b) {
    dim_or_throw(a, 4, "concat_channels");
    dim_or_throw(b, 4, "concat_channels");
    const auto& sa = a->value.shape;
    const auto& sb = b->value.shape;
    if (sa[0] != sb[0] || sa[2] != sb[2] || sa[3] != sb[3])
        throw std::invalid_argument("concat_channels: incompatible shapes " + a->value.shape_str() + " vs " +
                                    b->value.shape_str());
    const int bn = sa[0], ca = sa[1], cb = sb[1];
    Tensor out({bn, ca + cb, sa[2], sa[3]});
    const size_t hw = static_cast<size_t>(sa[2]) * sa[3];
    for (int bi = 0; bi < bn; ++bi) {
        std::copy_n(a->value.data.data() + static_cast<size_t>(bi) * ca * hw, static_cast<size_t>(ca) * hw,
                    out.data.data() + static_cast<size_t>(bi) * (ca + cb) * hw);
        std::copy_n(b->value.data.data() + static_cast<size_t>(bi) * cb * hw, static_cast<size_t>(cb) * hw,
                    out.data.data() + (static_cast<size_t>(bi) * (ca + cb) + ca) * hw);
    }
    return op_node("concat_channels", std::move(out), {a, b}, [ca, cb](const Var& g) -> std::vector<Var> {
        return {slice_channels(g, 0, ca), slice_channels(g, ca, cb)};
    });
}

}  // namespace attrgan::ag
