#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "attrgan/tensor.hpp"

namespace attrgan::ag {

class Variable;
using Var = std::shared_ptr<Variable>;

// One node of a define-by-run graph. backward maps the incoming gradient to
// per-parent gradients and is itself written in terms of tracked ops, so
// differentiating through a gradient (grad with create_graph=true) works to
// any order.
class Variable {
public:
    Tensor value;
    bool requires_grad = false;
    std::vector<Var> parents;
    std::function<std::vector<Var>(const Var& grad_out)> backward;
    const char* op = "leaf";

    explicit Variable(Tensor v, bool rg = false) : value(std::move(v)), requires_grad(rg) {}
};

Var make_var(Tensor value, bool requires_grad = false);
Var constant(Tensor value);
Var scalar(double v);

// Grad recording can be suspended (used for fake generation in the D step and
// for plain backward passes that need no second-order graph).
bool grad_enabled();

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

// d loss / d wrt[i] for a scalar loss. Unreached inputs get exact zeros.
// create_graph records the backward computation itself so the result can be
// differentiated again.
std::vector<Var> grad(const Var& loss, const std::vector<Var>& wrt, bool create_graph = false);

Var detach(const Var& v);

// ---- elementwise ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var neg(const Var& a);
Var add_scalar(const Var& a, double c);
Var mul_scalar(const Var& a, double c);
Var pow_scalar(const Var& a, double p);
Var exp(const Var& a);
Var log(const Var& a);
Var sqrt(const Var& a);
Var tanh(const Var& a);
Var sigmoid(const Var& a);
Var relu(const Var& a);
Var leaky_relu(const Var& a, double slope);
Var clamp(const Var& a, double lo, double hi);

// ---- reductions / shape ----
Var sum(const Var& a);                       // -> scalar
Var mean(const Var& a);                      // -> scalar
Var sum_rows(const Var& a);                  // [m,n] -> [m]
Var sum_cols(const Var& a);                  // [m,n] -> [n]
Var diag(const Var& a);                      // [m,m] -> [m]
Var reshape(const Var& a, std::vector<int> shape);
Var transpose(const Var& a);                 // [m,n] -> [n,m]
Var slice_cols(const Var& a, int start, int len);  // [m,n] -> [m,len]
Var concat_cols(const Var& a, const Var& b);       // [m,p],[m,q] -> [m,p+q]
Var scale_rows(const Var& a, const Var& s);  // [m,n] * s[m] per row
Var add_rowvec(const Var& a, const Var& b);  // [m,n] + b[n] per row

// ---- linear algebra ----
Var matmul(const Var& a, const Var& b);      // [m,k] x [k,n]

// ---- image ops on [B,C,H,W] ----
Var conv2d(const Var& x, const Var& w, int stride, int pad);          // w: [Cout,Cin,k,k]
Var conv2d_input_grad(const Var& gy, const Var& w, int stride, int pad, std::vector<int> x_shape);
Var conv2d_weight_grad(const Var& x, const Var& gy, int stride, int pad, std::vector<int> w_shape);
Var add_channel_bias(const Var& x, const Var& b);   // + b[C] per channel
Var mul_channel(const Var& x, const Var& s);        // * s[B,C] per channel
Var add_channel(const Var& x, const Var& t);        // + t[B,C] per channel
Var sum_hw(const Var& x);                           // [B,C,H,W] -> [B,C]
Var broadcast_hw(const Var& s, int h, int w);       // [B,C] -> [B,C,H,W]
Var upsample2x(const Var& x);                       // nearest neighbour
Var avg_pool2x(const Var& x);
Var global_avg_pool(const Var& x);                  // [B,C,H,W] -> [B,C]
Var concat_channels(const Var& a, const Var& b);

}  // namespace attrgan::ag
