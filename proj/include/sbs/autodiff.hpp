#pragma once
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>
#include <sbs/error.hpp>
#include <sbs/parameters.hpp>
#include <sbs/tensor.hpp>

namespace sbs {

/// Handle to a node on a Tape.
struct Var
{
    std::size_t id = 0;
};

/// Scalar loss together with the per-sample terms it averages.
struct LossValue
{
    double scalar = 0.0;
    std::vector<double> per_sample;
};

/*
 * Reverse-mode tape. Nodes are appended in evaluation order, so the record
 * list is topologically sorted by construction and backward() is a single
 * reverse sweep. All reductions run in a fixed left-to-right order so that
 * identical inputs give bit-identical gradients.
 */
class Tape
{
public:
    using Backward = std::function<void(Tape&)>;

    Var constant(Tensor value) { return push_node(std::move(value), false, {}); }

    /// Leaf that receives a gradient but is not bound to a ParameterStore.
    Var variable(Tensor value) { return push_node(std::move(value), true, {}); }

    /// Leaf holding a copy of parameter group `group`; its gradient is
    /// scattered back into the flat layout by parameter_gradient().
    Var parameter(const ParameterStore& store, std::size_t group)
    {
        if (!revision_) revision_ = store.revision();
        else if (*revision_ != store.revision()) {
            throw PreconditionError("tape mixes parameter-store revisions");
        }
        const auto& g = store.groups()[group];
        auto vals = store.group_values(group);
        Var v = push_node(Tensor(g.shape, std::vector<double>(vals.begin(), vals.end())), true, {});
        nodes_[v.id].param_offset = g.offset;
        return v;
    }

    /// Appends an interior node; `parents` decide whether it needs a gradient.
    Var push(Tensor value, std::span<const Var> parents, Backward backward)
    {
        bool needs = false;
        for (auto p : parents) needs = needs || nodes_.at(p.id).requires_grad;
        return push_node(std::move(value), needs, needs ? std::move(backward) : Backward{});
    }

    const Tensor& value(Var v) const { return nodes_.at(v.id).value; }

    /// Gradient of the last backward() target w.r.t. v (zeros if unreached).
    Tensor grad(Var v) const
    {
        const auto& n = nodes_.at(v.id);
        return n.grad.empty() ? Tensor(n.value.shape()) : n.grad;
    }

    /// Gradient flowing into v during backward(); only valid inside a
    /// backward callback of v.
    const Tensor& upstream(Var v) const { return nodes_.at(v.id).grad; }

    bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

    /// Accumulation buffer for v's gradient, allocated on first use.
    Tensor& grad_buffer(Var v)
    {
        auto& n = nodes_.at(v.id);
        if (n.grad.empty()) n.grad = Tensor(n.value.shape());
        return n.grad;
    }

    /// Propagates d(seed * target)/d(node) to every node reachable from target.
    void backward(Var target, double seed = 1.0)
    {
        if (nodes_.at(target.id).value.size() != 1) {
            throw ShapeError("backward target must be a scalar");
        }
        for (auto& n : nodes_) n.grad = Tensor();
        grad_buffer(target)[0] = seed;
        for (std::size_t i = target.id + 1; i-- > 0;) {
            auto& n = nodes_[i];
            if (n.backward && !n.grad.empty()) n.backward(*this);
        }
        backward_done_ = true;
    }

    /// Flat gradient aligned with a ParameterStore of `parameter_count` scalars.
    std::vector<double> parameter_gradient(std::size_t parameter_count) const
    {
        if (!backward_done_) throw PreconditionError("parameter_gradient() before backward()");
        std::vector<double> out(parameter_count, 0.0);
        for (const auto& n : nodes_) {
            if (!n.param_offset || n.grad.empty()) continue;
            const std::size_t off = *n.param_offset;
            if (off + n.grad.size() > parameter_count) throw ShapeError("parameter gradient out of range");
            for (std::size_t k = 0; k < n.grad.size(); ++k) out[off + k] += n.grad[k];
        }
        return out;
    }

    std::optional<std::uint64_t> revision() const noexcept { return revision_; }
    std::size_t size() const noexcept { return nodes_.size(); }

private:
    struct Node
    {
        Tensor value;
        Tensor grad;
        Backward backward;
        bool requires_grad = false;
        std::optional<std::size_t> param_offset;
    };

    Var push_node(Tensor value, bool requires_grad, Backward backward)
    {
        nodes_.push_back(Node{std::move(value), Tensor(), std::move(backward), requires_grad, std::nullopt});
        return Var{nodes_.size() - 1};
    }

    std::vector<Node> nodes_;
    std::optional<std::uint64_t> revision_;
    bool backward_done_ = false;
};

/// Gradient of `loss` w.r.t. every scalar in `store`. The tape must have been
/// recorded against the store's current revision.
inline std::vector<double> backward(Tape& tape, Var loss, const ParameterStore& store, double seed = 1.0)
{
    if (tape.revision() && *tape.revision() != store.revision()) {
        throw PreconditionError("tape was recorded at parameter revision " + std::to_string(*tape.revision())
                                + " but the store is at revision " + std::to_string(store.revision()));
    }
    tape.backward(loss, seed);
    return tape.parameter_gradient(store.size());
}

namespace ops {

namespace detail {

inline void same_shape(const Tensor& a, const Tensor& b, const char* op)
{
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs "
                         + shape_string(b.shape()));
    }
}

inline Var push2(Tape& t, Tensor v, Var a, Var b, Tape::Backward fn)
{
    const Var ps[] = {a, b};
    return t.push(std::move(v), ps, std::move(fn));
}

inline Var push1(Tape& t, Tensor v, Var a, Tape::Backward fn)
{
    const Var ps[] = {a};
    return t.push(std::move(v), ps, std::move(fn));
}

} // namespace detail

inline Var add(Tape& t, Var a, Var b)
{
    const auto& av = t.value(a);
    const auto& bv = t.value(b);
    detail::same_shape(av, bv, "add");
    Tensor out(av.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    Var self{t.size()};
    return detail::push2(t, std::move(out), a, b, [=](Tape& tp) {
        const Tensor& g = tp.upstream(self);
        for (Var p : {a, b}) {
            if (!tp.requires_grad(p)) continue;
            auto& gp = tp.grad_buffer(p);
            for (std::size_t i = 0; i < g.size(); ++i) gp[i] += g[i];
        }
    });
}

inline Var sub(Tape& t, Var a, Var b)
{
    const auto& av = t.value(a);
    const auto& bv = t.value(b);
    detail::same_shape(av, bv, "sub");
    Tensor out(av.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
    Var self{t.size()};
    return detail::push2(t, std::move(out), a, b, [=](Tape& tp) {
        const Tensor& g = tp.upstream(self);
        if (tp.requires_grad(a)) {
            auto& ga = tp.grad_buffer(a);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (tp.requires_grad(b)) {
            auto& gb = tp.grad_buffer(b);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        }
    });
}

inline Var mul(Tape& t, Var a, Var b)
{
    const auto& av = t.value(a);
    const auto& bv = t.value(b);
    detail::same_shape(av, bv, "mul");
    Tensor out(av.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    Var self{t.size()};
    return detail::push2(t, std::move(out), a, b, [=](Tape& tp) {
        const Tensor& g = tp.upstream(self);
        const Tensor& x = tp.value(a);
        const Tensor& y = tp.value(b);
        if (tp.requires_grad(a)) {
            auto& ga = tp.grad_buffer(a);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
        }
        if (tp.requires_grad(b)) {
            auto& gb = tp.grad_buffer(b);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
        }
    });
}

inline Var scale(Tape& t, Var a, double c)
{
    const auto& av = t.value(a);
    Tensor out(av.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * av[i];
    Var self{t.size()};
    return detail::push1(t, std::move(out), a, [=](Tape& tp) {
        const Tensor& g = tp.upstream(self);
        auto& ga = tp.grad_buffer(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
    });
}

inline Var square(Tape& t, Var a) { return mul(t, a, a); }

/// Sum of all elements, as a 1-element tensor.
inline Var sum(Tape& t, Var a)
{
    const auto& av = t.value(a);
    double s = 0.0;
    for (std::size_t i = 0; i < av.size(); ++i) s += av[i];
    Var self{t.size()};
    return detail::push1(t, Tensor::scalar(s), a, [=](Tape& tp) {
        const double g = tp.upstream(self)[0];
        auto& ga = tp.grad_buffer(a);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
    });
}

/// y = x W^T with x (N, in) and W (out, in).
inline Var linear(Tape& t, Var x, Var w)
{
    const auto& xv = t.value(x);
    const auto& wv = t.value(w);
    if (xv.rank() != 2 || wv.rank() != 2 || xv.dim(1) != wv.dim(1)) {
        throw ShapeError("linear: input " + shape_string(xv.shape()) + " incompatible with weight "
                         + shape_string(wv.shape()));
    }
    const std::size_t n = xv.dim(0), in = xv.dim(1), out = wv.dim(0);
    Tensor y({n, out});
    for (std::size_t r = 0; r < n; ++r) {
        const double* xr = xv.data() + r * in;
        for (std::size_t o = 0; o < out; ++o) {
            const double* wo = wv.data() + o * in;
            double acc = 0.0;
            for (std::size_t i = 0; i < in; ++i) acc += xr[i] * wo[i];
            y[r * out + o] = acc;
        }
    }
    Var self{t.size()};
    return detail::push2(t, std::move(y), x, w, [=](Tape& tp) {
        const Tensor& g = tp.upstream(self);
        const Tensor& xv = tp.value(x);
        const Tensor& wv = tp.value(w);
        if (tp.requires_grad(x)) {
            auto& gx = tp.grad_buffer(x);
            for (std::size_t r = 0; r < n; ++r) {
                double* gxr = gx.data() + r * in;
                for (std::size_t o = 0; o < out; ++o) {
                    const double go = g[r * out + o];
                    const double* wo = wv.data() + o * in;
                    for (std::size_t i = 0; i < in; ++i) gxr[i] += go * wo[i];
                }
            }
        }
        if (tp.requires_grad(w)) {
            auto& gw = tp.grad_buffer(w);
            for (std::size_t o = 0; o < out; ++o) {
                double* gwo = gw.data() + o * in;
                for (std::size_t r = 0; r < n; ++r) {
                    const double go = g[r * out + o];
                    const double* xr = xv.data() + r * in;
                    for (std::size_t i = 0; i < in; ++i) gwo[i] += go * xr[i];
                }
            }
        }
    });
}

/// Adds b[c] along axis 1 of x (N, C, ...).
inline Var add_channel_bias(Tape& t, Var x, Var b)
{
    const auto& xv = t.value(x);
    const auto& bv = t.value(b);
    if (xv.rank() < 2 || bv.size() != xv.dim(1)) {
        throw ShapeError("add_channel_bias: bias of " + std::to_string(bv.size()) + " for input "
                         + shape_string(xv.shape()));
    }
    const std::size_t n = xv.dim(0), c = xv.dim(1), inner = xv.size() / (n * c);
    Tensor y(xv.shape());
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t k = 0; k < inner; ++k) {
                const std::size_t idx = (r * c + ch) * inner + k;
                y[idx] = xv[idx] + bv[ch];
            }
    Var self{t.size()};
    return detail::push2(t, std::move(y), x, b, [=](Tape& tp) {
        const Tensor& g = tp.upstream(self);
        if (tp.requires_grad(x)) {
            auto& gx = tp.grad_buffer(x);
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        }
        if (tp.requires_grad(b)) {
            auto& gb = tp.grad_buffer(b);
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t ch = 0; ch < c; ++ch)
                    for (std::size_t k = 0; k < inner; ++k) gb[ch] += g[(r * c + ch) * inner + k];
        }
    });
}

/// 3x3 convolution, stride 1, zero padding 1. x (N, C, H, W), w (O, C, 3, 3).
inline Var conv2d_3x3(Tape& t, Var x, Var w)
{
    const auto& xv = t.value(x);
    const auto& wv = t.value(w);
    if (xv.rank() != 4 || wv.rank() != 4 || wv.dim(1) != xv.dim(1) || wv.dim(2) != 3 || wv.dim(3) != 3) {
        throw ShapeError("conv2d_3x3: input " + shape_string(xv.shape()) + " incompatible with weight "
                         + shape_string(wv.shape()));
    }
    const std::size_t n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), wd = xv.dim(3), o = wv.dim(0);
    const auto xi = [=](std::size_t r, std::size_t ch, std::size_t i, std::size_t j) {
        return ((r * c + ch) * h + i) * wd + j;
    };
    const auto wi = [=](std::size_t oc, std::size_t ch, std::size_t di, std::size_t dj) {
        return ((oc * c + ch) * 3 + di) * 3 + dj;
    };
    const auto yi = [=](std::size_t r, std::size_t oc, std::size_t i, std::size_t j) {
        return ((r * o + oc) * h + i) * wd + j;
    };
    Tensor y({n, o, h, wd});
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t oc = 0; oc < o; ++oc)
            for (std::size_t i = 0; i < h; ++i)
                for (std::size_t j = 0; j < wd; ++j) {
                    double acc = 0.0;
                    for (std::size_t ch = 0; ch < c; ++ch)
                        for (std::size_t di = 0; di < 3; ++di) {
                            if (i + di < 1 || i + di - 1 >= h) continue;
                            for (std::size_t dj = 0; dj < 3; ++dj) {
                                if (j + dj < 1 || j + dj - 1 >= wd) continue;
                                acc += xv[xi(r, ch, i + di - 1, j + dj - 1)] * wv[wi(oc, ch, di, dj)];
                            }
                        }
                    y[yi(r, oc, i, j)] = acc;
                }
    Var self{t.size()};
    return detail::push2(t, std::move(y), x, w, [=](Tape& tp) {
        const Tensor& g = tp.upstream(self);
        const Tensor& xv = tp.value(x);
        const Tensor& wv = tp.value(w);
        const bool need_x = tp.requires_grad(x), need_w = tp.requires_grad(w);
        Tensor* gx = need_x ? &tp.grad_buffer(x) : nullptr;
        Tensor* gw = need_w ? &tp.grad_buffer(w) : nullptr;
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t oc = 0; oc < o; ++oc)
                for (std::size_t i = 0; i < h; ++i)
                    for (std::size_t j = 0; j < wd; ++j) {
                        const double go = g[yi(r, oc, i, j)];
                        for (std::size_t ch = 0; ch < c; ++ch)
                            for (std::size_t di = 0; di < 3; ++di) {
                                if (i + di < 1 || i + di - 1 >= h) continue;
                                for (std::size_t dj = 0; dj < 3; ++dj) {
                                    if (j + dj < 1 || j + dj - 1 >= wd) continue;
                                    const std::size_t xk = xi(r, ch, i + di - 1, j + dj - 1);
                                    const std::size_t wk = wi(oc, ch, di, dj);
                                    if (gx) (*gx)[xk] += go * wv[wk];
                                    if (gw) (*gw)[wk] += go * xv[xk];
                                }
                            }
                    }
    });
}

inline Var relu(Tape& t, Var x)
{
    const auto& xv = t.value(x);
    Tensor y(xv.shape());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = xv[i] > 0.0 ? xv[i] : 0.0;
    Var self{t.size()};
    return detail::push1(t, std::move(y), x, [=](Tape& tp) {
        const Tensor& g = tp.upstream(self);
        const Tensor& xv = tp.value(x);
        auto& gx = tp.grad_buffer(x);
        for (std::size_t i = 0; i < g.size(); ++i)
            if (xv[i] > 0.0) gx[i] += g[i];
    });
}

/// 2x2 max pooling with stride 2 on (N, C, H, W); H and W must be even.
/// Ties resolve to the first element in row-major window order.
inline Var max_pool2x2(Tape& t, Var x)
{
    const auto& xv = t.value(x);
    if (xv.rank() != 4 || xv.dim(2) % 2 || xv.dim(3) % 2) {
        throw ShapeError("max_pool2x2: needs (N,C,H,W) with even H, W; got " + shape_string(xv.shape()));
    }
    const std::size_t n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
    const std::size_t ho = h / 2, wo = w / 2;
    Tensor y({n, c, ho, wo});
    std::vector<std::size_t> argmax(y.size());
    for (std::size_t rc = 0; rc < n * c; ++rc)
        for (std::size_t i = 0; i < ho; ++i)
            for (std::size_t j = 0; j < wo; ++j) {
                std::size_t best = (rc * h + 2 * i) * w + 2 * j;
                for (std::size_t di = 0; di < 2; ++di)
                    for (std::size_t dj = 0; dj < 2; ++dj) {
                        const std::size_t k = (rc * h + 2 * i + di) * w + 2 * j + dj;
                        if (xv[k] > xv[best]) best = k;
                    }
                const std::size_t out = (rc * ho + i) * wo + j;
                y[out] = xv[best];
                argmax[out] = best;
            }
    Var self{t.size()};
    return detail::push1(t, std::move(y), x, [=, argmax = std::move(argmax)](Tape& tp) {
        const Tensor& g = tp.upstream(self);
        auto& gx = tp.grad_buffer(x);
        for (std::size_t k = 0; k < g.size(); ++k) gx[argmax[k]] += g[k];
    });
}

/// Reshape (N, ...) to (N, prod(...)).
inline Var flatten(Tape& t, Var x)
{
    const auto& xv = t.value(x);
    const std::size_t n = xv.dim(0);
    Var self{t.size()};
    return detail::push1(t, xv.reshaped({n, xv.size() / n}), x, [=](Tape& tp) {
        const Tensor& g = tp.upstream(self);
        auto& gx = tp.grad_buffer(x);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
}

/// Running statistics of one batch-norm layer.
struct BatchNormBuffers
{
    std::vector<double> running_mean;
    std::vector<double> running_var;

    explicit BatchNormBuffers(std::size_t channels = 0)
        : running_mean(channels, 0.0), running_var(channels, 1.0) {}
};

inline constexpr double batchnorm_epsilon = 1e-5;
inline constexpr double batchnorm_momentum = 0.1;

/*
 * Batch normalization over axis 1 of x (N, C, ...). In training mode the
 * batch mean and (biased) variance normalize x and, when `buffers` is
 * non-null, the running estimates move by batchnorm_momentum (running
 * variance uses the unbiased estimate). In evaluation mode the running
 * estimates are used and buffers are left untouched.
 */
inline Var batch_norm(Tape& t, Var x, Var gamma, Var beta, bool training, BatchNormBuffers* buffers)
{
    const auto& xv = t.value(x);
    const auto& gv = t.value(gamma);
    const auto& bv = t.value(beta);
    if (xv.rank() < 2 || gv.size() != xv.dim(1) || bv.size() != xv.dim(1)) {
        throw ShapeError("batch_norm: parameters do not match input " + shape_string(xv.shape()));
    }
    const std::size_t n = xv.dim(0), c = xv.dim(1), inner = xv.size() / (n * c);
    const std::size_t count = n * inner;
    if (!training && (!buffers || buffers->running_mean.size() != c)) {
        throw PreconditionError("batch_norm: evaluation mode needs running statistics");
    }
    std::vector<double> mean(c, 0.0), invstd(c, 0.0);
    for (std::size_t ch = 0; ch < c; ++ch) {
        double m, var;
        if (training) {
            double s = 0.0;
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t k = 0; k < inner; ++k) s += xv[(r * c + ch) * inner + k];
            m = s / static_cast<double>(count);
            double ss = 0.0;
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t k = 0; k < inner; ++k) {
                    const double d = xv[(r * c + ch) * inner + k] - m;
                    ss += d * d;
                }
            var = ss / static_cast<double>(count);
            if (buffers) {
                const double unbiased = count > 1 ? ss / static_cast<double>(count - 1) : var;
                buffers->running_mean[ch] = (1.0 - batchnorm_momentum) * buffers->running_mean[ch] + batchnorm_momentum * m;
                buffers->running_var[ch] = (1.0 - batchnorm_momentum) * buffers->running_var[ch] + batchnorm_momentum * unbiased;
            }
        } else {
            m = buffers->running_mean[ch];
            var = buffers->running_var[ch];
        }
        mean[ch] = m;
        invstd[ch] = 1.0 / std::sqrt(var + batchnorm_epsilon);
    }
    Tensor xhat(xv.shape());
    Tensor y(xv.shape());
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t k = 0; k < inner; ++k) {
                const std::size_t i = (r * c + ch) * inner + k;
                xhat[i] = (xv[i] - mean[ch]) * invstd[ch];
                y[i] = gv[ch] * xhat[i] + bv[ch];
            }
    Var self{t.size()};
    const Var ps[] = {x, gamma, beta};
    return t.push(std::move(y), ps, [=, xhat = std::move(xhat), invstd = std::move(invstd)](Tape& tp) {
        const Tensor& g = tp.upstream(self);
        const Tensor& gv = tp.value(gamma);
        std::vector<double> sum_g(c, 0.0), sum_gx(c, 0.0);
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t k = 0; k < inner; ++k) {
                    const std::size_t i = (r * c + ch) * inner + k;
                    sum_g[ch] += g[i];
                    sum_gx[ch] += g[i] * xhat[i];
                }
        if (tp.requires_grad(gamma)) {
            auto& gg = tp.grad_buffer(gamma);
            for (std::size_t ch = 0; ch < c; ++ch) gg[ch] += sum_gx[ch];
        }
        if (tp.requires_grad(beta)) {
            auto& gb = tp.grad_buffer(beta);
            for (std::size_t ch = 0; ch < c; ++ch) gb[ch] += sum_g[ch];
        }
        if (tp.requires_grad(x)) {
            auto& gx = tp.grad_buffer(x);
            const double inv_count = 1.0 / static_cast<double>(count);
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t ch = 0; ch < c; ++ch)
                    for (std::size_t k = 0; k < inner; ++k) {
                        const std::size_t i = (r * c + ch) * inner + k;
                        if (training) {
                            gx[i] += gv[ch] * invstd[ch] * inv_count
                                     * (static_cast<double>(count) * g[i] - sum_g[ch] - xhat[i] * sum_gx[ch]);
                        } else {
                            gx[i] += gv[ch] * invstd[ch] * g[i];
                        }
                    }
        }
    });
}

struct CrossEntropyResult
{
    Var loss;
    LossValue value;
};

/// Fused softmax + cross-entropy over logits (N, C); loss is the batch mean.
inline CrossEntropyResult softmax_cross_entropy(Tape& t, Var logits, std::span<const int> labels)
{
    const auto& z = t.value(logits);
    if (z.rank() != 2 || z.dim(0) != labels.size()) {
        throw ShapeError("softmax_cross_entropy: logits " + shape_string(z.shape()) + " for "
                         + std::to_string(labels.size()) + " labels");
    }
    const std::size_t n = z.dim(0), c = z.dim(1);
    Tensor prob(z.shape());
    LossValue lv;
    lv.per_sample.resize(n);
    double total = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        const int y = labels[r];
        if (y < 0 || static_cast<std::size_t>(y) >= c) {
            throw PreconditionError("label " + std::to_string(y) + " outside [0, " + std::to_string(c) + ")");
        }
        const double* zr = z.data() + r * c;
        double mx = zr[0];
        for (std::size_t k = 1; k < c; ++k) mx = std::max(mx, zr[k]);
        double se = 0.0;
        for (std::size_t k = 0; k < c; ++k) se += std::exp(zr[k] - mx);
        const double lse = mx + std::log(se);
        for (std::size_t k = 0; k < c; ++k) prob[r * c + k] = std::exp(zr[k] - lse);
        lv.per_sample[r] = lse - zr[y];
        total += lv.per_sample[r];
    }
    lv.scalar = total / static_cast<double>(n);
    std::vector<int> lab(labels.begin(), labels.end());
    Var self{t.size()};
    Var loss = detail::push1(t, Tensor::scalar(lv.scalar), logits,
                             [=, prob = std::move(prob), lab = std::move(lab)](Tape& tp) {
        const double g = tp.upstream(self)[0] / static_cast<double>(n);
        auto& gz = tp.grad_buffer(logits);
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t k = 0; k < c; ++k) {
                const double target = static_cast<std::size_t>(lab[r]) == k ? 1.0 : 0.0;
                gz[r * c + k] += g * (prob[r * c + k] - target);
            }
    });
    return {loss, std::move(lv)};
}

} // namespace ops
} // namespace sbs
