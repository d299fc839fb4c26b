// Copyright Contributors to the atlasgs project
// SPDX-License-Identifier: Apache-2.0

#include "atlasgs/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <limits>
#include <cmath>
#include <numbers>
#include <sstream>
#include <unordered_set>

namespace atlasgs {

namespace {

std::atomic<Precision> g_precision{Precision::f64};
thread_local bool t_grad_enabled = true;
std::atomic<std::size_t> g_score_pairs{0};

void require(bool ok, const std::string &message) {
    if (!ok) {
        throw ShapeError(message);
    }
}

std::size_t rows_of(const Tensor &t) {
    require(t.rank() == 2, "expected a 2-D tensor, got " + shape_string(t.shape()));
    return t.dim(0);
}

std::size_t cols_of(const Tensor &t) {
    require(t.rank() == 2, "expected a 2-D tensor, got " + shape_string(t.shape()));
    return t.dim(1);
}

std::size_t last_dim(const Tensor &t) {
    require(t.rank() >= 1, "expected rank >= 1");
    return t.shape().back();
}

// The smaller operand must have a shape equal to a suffix of the larger.
bool suffix_compatible(const Shape &big, const Shape &small) {
    if (shape_numel(small) == 1) {
        return true;
    }
    if (small.size() > big.size()) {
        return false;
    }
    return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

template <typename Fwd, typename DA, typename DB>
Tensor binary_op(const char *name, const Tensor &a, const Tensor &b, Fwd fwd, DA da, DB db) {
    const bool a_big = a.numel() >= b.numel();
    const Shape &out_shape = a_big ? a.shape() : b.shape();
    require(suffix_compatible(out_shape, a_big ? b.shape() : a.shape()),
            std::string(name) + ": incompatible shapes " + shape_string(a.shape()) + " and " +
                shape_string(b.shape()));
    const std::size_t n = shape_numel(out_shape);
    const std::size_t an = a.numel();
    const std::size_t bn = b.numel();
    auto av = a.values();
    auto bv = b.values();
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = fwd(av[i % an], bv[i % bn]);
    }
    auto an_ = a.node();
    auto bn_ = b.node();
    return detail::make_result(
        name, out_shape, std::move(out), {&a, &b},
        [an_, bn_, an, bn, n, da, db](detail::Node &o) {
            const auto &g = o.grad;
            if (an_->requires_grad) {
                auto &ga = an_->ensure_grad();
                for (std::size_t i = 0; i < n; ++i) {
                    ga[i % an] += g[i] * da(an_->value[i % an], bn_->value[i % bn]);
                }
            }
            if (bn_->requires_grad) {
                auto &gb = bn_->ensure_grad();
                for (std::size_t i = 0; i < n; ++i) {
                    gb[i % bn] += g[i] * db(an_->value[i % an], bn_->value[i % bn]);
                }
            }
        });
}

// Unary op whose derivative is expressed through input x and output y.
template <typename Fwd, typename Deriv>
Tensor unary_op(const char *name, const Tensor &a, Fwd fwd, Deriv deriv) {
    auto av = a.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) {
        out[i] = fwd(av[i]);
    }
    auto in = a.node();
    return detail::make_result(name, a.shape(), std::move(out), {&a},
                               [in, deriv](detail::Node &o) {
                                   auto &gi = in->ensure_grad();
                                   for (std::size_t i = 0; i < gi.size(); ++i) {
                                       gi[i] += o.grad[i] * deriv(in->value[i], o.value[i]);
                                   }
                               });
}

} // namespace

std::size_t shape_numel(const Shape &shape) {
    std::size_t n = 1;
    for (auto e : shape) {
        n *= e;
    }
    return n;
}

std::string shape_string(const Shape &shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "," : "") << shape[i];
    }
    os << ']';
    return os.str();
}

void set_precision(Precision p) { g_precision.store(p); }
Precision precision() { return g_precision.load(); }

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

std::vector<double> &detail::Node::ensure_grad() {
    if (grad.size() != value.size()) {
        grad.assign(value.size(), 0.0);
    }
    return grad;
}

double detail::round_to_precision(double v) {
    return precision() == Precision::f32 ? static_cast<double>(static_cast<float>(v)) : v;
}

Tensor detail::make_result(const char *op, Shape shape, std::vector<double> value,
                           const std::vector<const Tensor *> &inputs, BackwardFn fn) {
    require(shape_numel(shape) == value.size(),
            std::string(op) + ": value size does not match shape " + shape_string(shape));
    const bool f32 = precision() == Precision::f32;
    for (auto &v : value) {
        if (f32) {
            v = static_cast<double>(static_cast<float>(v));
        }
        if (!std::isfinite(v)) {
            throw NonFiniteError(std::string(op) + " produced a non-finite value");
        }
    }
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    if (t_grad_enabled) {
        bool any = false;
        for (const Tensor *in : inputs) {
            any = any || (in->defined() && in->requires_grad());
        }
        if (any) {
            node->requires_grad = true;
            for (const Tensor *in : inputs) {
                if (in->defined()) {
                    node->parents.push_back(in->node());
                }
            }
            node->backward = std::move(fn);
        }
    }
    return Tensor(std::move(node));
}

Tensor detail::make_result(const char *op, Shape shape, std::vector<double> value,
                           std::initializer_list<const Tensor *> inputs, BackwardFn fn) {
    return make_result(op, std::move(shape), std::move(value),
                       std::vector<const Tensor *>(inputs), std::move(fn));
}

// -- Tensor ---------------------------------------------------------------------

Tensor::Tensor(Shape shape, double fill) : node_(std::make_shared<detail::Node>()) {
    node_->value.assign(shape_numel(shape), fill);
    node_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<double> values) : node_(std::make_shared<detail::Node>()) {
    require(shape_numel(shape) == values.size(),
            "tensor data length " + std::to_string(values.size()) + " does not match shape " +
                shape_string(shape));
    node_->shape = std::move(shape);
    node_->value = std::move(values);
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{1}, std::vector<double>{value}); }

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
    Tensor t(std::move(shape), std::move(values));
    t.node_->requires_grad = true;
    return t;
}

const Shape &Tensor::shape() const {
    static const Shape empty;
    return node_ ? node_->shape : empty;
}

std::size_t Tensor::dim(std::size_t axis) const {
    require(axis < rank(), "axis " + std::to_string(axis) + " out of range for " +
                               shape_string(shape()));
    return node_->shape[axis];
}

std::size_t Tensor::numel() const { return node_ ? node_->value.size() : 0; }

std::span<const double> Tensor::values() const {
    return node_ ? std::span<const double>(node_->value) : std::span<const double>();
}

std::span<double> Tensor::mutable_values() { return std::span<double>(node_->value); }

double Tensor::item() const {
    require(numel() == 1, "item() on tensor of shape " + shape_string(shape()));
    return node_->value[0];
}

double Tensor::at(std::size_t row, std::size_t col) const {
    return node_->value[row * cols_of(*this) + col];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool on) { node_->requires_grad = on; }

bool Tensor::has_grad() const { return node_ && node_->grad.size() == node_->value.size(); }

std::span<const double> Tensor::grad() const {
    return has_grad() ? std::span<const double>(node_->grad) : std::span<const double>();
}

std::span<double> Tensor::mutable_grad() { return std::span<double>(node_->ensure_grad()); }

void Tensor::zero_grad() {
    if (node_) {
        std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
    }
}

Tensor Tensor::detach() const { return Tensor(shape(), node_->value); }

void Tensor::backward() const {
    require(numel() == 1, "backward() requires a single-element tensor, got " +
                              shape_string(shape()));
    if (!node_->requires_grad) {
        return;
    }
    // Iterative post-order DFS gives a topological order.
    std::vector<detail::Node *> order;
    std::unordered_set<detail::Node *> visited;
    std::vector<std::pair<detail::Node *, std::size_t>> stack{{node_.get(), 0}};
    visited.insert(node_.get());
    while (!stack.empty()) {
        auto &[node, next] = stack.back();
        if (next < node->parents.size()) {
            detail::Node *parent = node->parents[next++].get();
            if (parent->requires_grad && visited.insert(parent).second) {
                stack.emplace_back(parent, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    node_->ensure_grad()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node *node = *it;
        if (node->backward && !node->grad.empty()) {
            node->backward(*node);
            // Intermediate gradients are consumed exactly once.
            node->grad.clear();
            node->grad.shrink_to_fit();
        }
    }
}

// -- arithmetic ---------------------------------------------------------------

Tensor add(const Tensor &a, const Tensor &b) {
    return binary_op(
        "add", a, b, [](double x, double y) { return x + y; },
        [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor &a, const Tensor &b) {
    return binary_op(
        "sub", a, b, [](double x, double y) { return x - y; },
        [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor &a, const Tensor &b) {
    return binary_op(
        "mul", a, b, [](double x, double y) { return x * y; },
        [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor scale(const Tensor &a, double factor) {
    return unary_op(
        "scale", a, [factor](double x) { return x * factor; },
        [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor &a, double offset) {
    return unary_op(
        "add_scalar", a, [offset](double x) { return x + offset; },
        [](double, double) { return 1.0; });
}

Tensor neg(const Tensor &a) { return scale(a, -1.0); }

Tensor exp(const Tensor &a) {
    return unary_op(
        "exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor &a) {
    return unary_op(
        "log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor tanh(const Tensor &a) {
    return unary_op(
        "tanh", a, [](double x) { return std::tanh(x); },
        [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor &a) {
    return unary_op(
        "sigmoid", a,
        [](double x) {
            if (x >= 0) {
                return 1.0 / (1.0 + std::exp(-x));
            }
            const double e = std::exp(x);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor gelu(const Tensor &a) {
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    constexpr double inv_sqrt_2pi = 0.39894228040143267794;
    return unary_op(
        "gelu", a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); },
        [](double x, double) {
            return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
        });
}

Tensor sin(const Tensor &a) {
    return unary_op(
        "sin", a, [](double x) { return std::sin(x); }, [](double x, double) { return std::cos(x); });
}

Tensor cos(const Tensor &a) {
    return unary_op(
        "cos", a, [](double x) { return std::cos(x); },
        [](double x, double) { return -std::sin(x); });
}

Tensor square(const Tensor &a) {
    return unary_op(
        "square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor sqrt(const Tensor &a) {
    return unary_op(
        "sqrt", a, [](double x) { return std::sqrt(x); },
        [](double, double y) { return 0.5 / y; });
}

Tensor clamp(const Tensor &a, double lo, double hi) {
    return unary_op(
        "clamp", a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
        [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

// -- reductions -------------------------------------------------------------------

Tensor sum(const Tensor &a) {
    double s = 0.0;
    for (double v : a.values()) {
        s += v;
    }
    auto in = a.node();
    return detail::make_result("sum", Shape{1}, {s}, {&a}, [in](detail::Node &o) {
        auto &g = in->ensure_grad();
        for (auto &v : g) {
            v += o.grad[0];
        }
    });
}

Tensor mean(const Tensor &a) {
    require(a.numel() > 0, "mean of empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor mse(const Tensor &a, const Tensor &b) {
    require(a.shape() == b.shape(), "mse: shape mismatch " + shape_string(a.shape()) + " vs " +
                                        shape_string(b.shape()));
    const std::size_t n = a.numel();
    require(n > 0, "mse of empty tensors");
    auto av = a.values();
    auto bv = b.values();
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = av[i] - bv[i];
        s += d * d;
    }
    auto an = a.node();
    auto bn = b.node();
    return detail::make_result("mse", Shape{1}, {s / static_cast<double>(n)}, {&a, &b},
                               [an, bn, n](detail::Node &o) {
                                   const double k = 2.0 * o.grad[0] / static_cast<double>(n);
                                   if (an->requires_grad) {
                                       auto &g = an->ensure_grad();
                                       for (std::size_t i = 0; i < n; ++i) {
                                           g[i] += k * (an->value[i] - bn->value[i]);
                                       }
                                   }
                                   if (bn->requires_grad) {
                                       auto &g = bn->ensure_grad();
                                       for (std::size_t i = 0; i < n; ++i) {
                                           g[i] -= k * (an->value[i] - bn->value[i]);
                                       }
                                   }
                               });
}

// -- linear algebra -------------------------------------------------------------------

namespace {

// c[n,m] += a[n,k] * b[k,m]
void gemm_nn(const double *a, const double *b, double *c, std::size_t n, std::size_t k,
             std::size_t m) {
    for (std::size_t i = 0; i < n; ++i) {
        double *ci = c + i * m;
        const double *ai = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = ai[p];
            if (aip == 0.0) {
                continue;
            }
            const double *bp = b + p * m;
            for (std::size_t j = 0; j < m; ++j) {
                ci[j] += aip * bp[j];
            }
        }
    }
}

// da[n,k] += dc[n,m] * b[k,m]^T
void gemm_nt(const double *dc, const double *b, double *da, std::size_t n, std::size_t k,
             std::size_t m) {
    for (std::size_t i = 0; i < n; ++i) {
        const double *dci = dc + i * m;
        double *dai = da + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double *bp = b + p * m;
            double s = 0.0;
            for (std::size_t j = 0; j < m; ++j) {
                s += dci[j] * bp[j];
            }
            dai[p] += s;
        }
    }
}

// db[k,m] += a[n,k]^T * dc[n,m]
void gemm_tn(const double *a, const double *dc, double *db, std::size_t n, std::size_t k,
             std::size_t m) {
    for (std::size_t i = 0; i < n; ++i) {
        const double *ai = a + i * k;
        const double *dci = dc + i * m;
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = ai[p];
            if (aip == 0.0) {
                continue;
            }
            double *dbp = db + p * m;
            for (std::size_t j = 0; j < m; ++j) {
                dbp[j] += aip * dci[j];
            }
        }
    }
}

} // namespace

Tensor matmul(const Tensor &a, const Tensor &b) {
    const std::size_t n = rows_of(a), k = cols_of(a), m = cols_of(b);
    require(rows_of(b) == k, "matmul: inner dimensions differ " + shape_string(a.shape()) + " x " +
                                 shape_string(b.shape()));
    std::vector<double> out(n * m, 0.0);
    gemm_nn(a.values().data(), b.values().data(), out.data(), n, k, m);
    auto an = a.node();
    auto bn = b.node();
    return detail::make_result("matmul", Shape{n, m}, std::move(out), {&a, &b},
                               [an, bn, n, k, m](detail::Node &o) {
                                   if (an->requires_grad) {
                                       gemm_nt(o.grad.data(), bn->value.data(),
                                               an->ensure_grad().data(), n, k, m);
                                   }
                                   if (bn->requires_grad) {
                                       gemm_tn(an->value.data(), o.grad.data(),
                                               bn->ensure_grad().data(), n, k, m);
                                   }
                               });
}

Tensor linear(const Tensor &x, const Tensor &weight, const Tensor &bias) {
    const std::size_t p = last_dim(x);
    require(weight.rank() == 2 && weight.dim(0) == p,
            "linear: input " + shape_string(x.shape()) + " does not match weight " +
                shape_string(weight.shape()));
    const std::size_t q = weight.dim(1);
    require(!bias.defined() || bias.numel() == q, "linear: bias size mismatch");
    const std::size_t n = x.numel() / p;
    std::vector<double> out(n * q, 0.0);
    if (bias.defined()) {
        auto bv = bias.values();
        for (std::size_t i = 0; i < n; ++i) {
            std::copy(bv.begin(), bv.end(), out.begin() + static_cast<std::ptrdiff_t>(i * q));
        }
    }
    gemm_nn(x.values().data(), weight.values().data(), out.data(), n, p, q);
    Shape out_shape = x.shape();
    out_shape.back() = q;
    auto xn = x.node();
    auto wn = weight.node();
    auto bn = bias.node();
    return detail::make_result(
        "linear", std::move(out_shape), std::move(out), {&x, &weight, &bias},
        [xn, wn, bn, n, p, q](detail::Node &o) {
            if (xn->requires_grad) {
                gemm_nt(o.grad.data(), wn->value.data(), xn->ensure_grad().data(), n, p, q);
            }
            if (wn->requires_grad) {
                gemm_tn(xn->value.data(), o.grad.data(), wn->ensure_grad().data(), n, p, q);
            }
            if (bn && bn->requires_grad) {
                auto &gb = bn->ensure_grad();
                for (std::size_t i = 0; i < n; ++i) {
                    for (std::size_t j = 0; j < q; ++j) {
                        gb[j] += o.grad[i * q + j];
                    }
                }
            }
        });
}

Tensor transpose(const Tensor &a) {
    const std::size_t n = rows_of(a), m = cols_of(a);
    auto av = a.values();
    std::vector<double> out(n * m);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            out[j * n + i] = av[i * m + j];
        }
    }
    auto in = a.node();
    return detail::make_result("transpose", Shape{m, n}, std::move(out), {&a},
                               [in, n, m](detail::Node &o) {
                                   auto &g = in->ensure_grad();
                                   for (std::size_t i = 0; i < n; ++i) {
                                       for (std::size_t j = 0; j < m; ++j) {
                                           g[i * m + j] += o.grad[j * n + i];
                                       }
                                   }
                               });
}

Tensor softmax(const Tensor &a) {
    const std::size_t len = last_dim(a);
    const std::size_t rows = a.numel() / len;
    auto av = a.values();
    std::vector<double> out(a.numel());
    for (std::size_t r = 0; r < rows; ++r) {
        const double *x = av.data() + r * len;
        double *y = out.data() + r * len;
        const double mx = *std::max_element(x, x + len);
        double z = 0.0;
        for (std::size_t j = 0; j < len; ++j) {
            y[j] = std::exp(x[j] - mx);
            z += y[j];
        }
        for (std::size_t j = 0; j < len; ++j) {
            y[j] /= z;
        }
    }
    auto in = a.node();
    return detail::make_result("softmax", a.shape(), std::move(out), {&a},
                               [in, rows, len](detail::Node &o) {
                                   auto &g = in->ensure_grad();
                                   for (std::size_t r = 0; r < rows; ++r) {
                                       const double *y = o.value.data() + r * len;
                                       const double *dy = o.grad.data() + r * len;
                                       double dot = 0.0;
                                       for (std::size_t j = 0; j < len; ++j) {
                                           dot += y[j] * dy[j];
                                       }
                                       for (std::size_t j = 0; j < len; ++j) {
                                           g[r * len + j] += y[j] * (dy[j] - dot);
                                       }
                                   }
                               });
}

Tensor layer_norm(const Tensor &x, const Tensor &gamma, const Tensor &beta, double eps) {
    const std::size_t d = last_dim(x);
    require(gamma.numel() == d && beta.numel() == d, "layer_norm: affine size mismatch");
    const std::size_t rows = x.numel() / d;
    auto xv = x.values();
    auto gv = gamma.values();
    auto bv = beta.values();
    std::vector<double> out(x.numel());
    auto xhat = std::make_shared<std::vector<double>>(x.numel());
    auto inv_std = std::make_shared<std::vector<double>>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double *xr = xv.data() + r * d;
        double mu = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            mu += xr[j];
        }
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            var += (xr[j] - mu) * (xr[j] - mu);
        }
        var /= static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[r] = is;
        for (std::size_t j = 0; j < d; ++j) {
            const double h = (xr[j] - mu) * is;
            (*xhat)[r * d + j] = h;
            out[r * d + j] = gv[j] * h + bv[j];
        }
    }
    auto xn = x.node();
    auto gn = gamma.node();
    auto bn = beta.node();
    return detail::make_result(
        "layer_norm", x.shape(), std::move(out), {&x, &gamma, &beta},
        [xn, gn, bn, xhat, inv_std, rows, d](detail::Node &o) {
            const auto &dy = o.grad;
            if (gn->requires_grad || bn->requires_grad) {
                auto &gg = gn->ensure_grad();
                auto &gb = bn->ensure_grad();
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t j = 0; j < d; ++j) {
                        gg[j] += dy[r * d + j] * (*xhat)[r * d + j];
                        gb[j] += dy[r * d + j];
                    }
                }
            }
            if (xn->requires_grad) {
                auto &gx = xn->ensure_grad();
                const double inv_d = 1.0 / static_cast<double>(d);
                for (std::size_t r = 0; r < rows; ++r) {
                    double m1 = 0.0, m2 = 0.0;
                    for (std::size_t j = 0; j < d; ++j) {
                        const double dh = dy[r * d + j] * gn->value[j];
                        m1 += dh;
                        m2 += dh * (*xhat)[r * d + j];
                    }
                    m1 *= inv_d;
                    m2 *= inv_d;
                    for (std::size_t j = 0; j < d; ++j) {
                        const double dh = dy[r * d + j] * gn->value[j];
                        gx[r * d + j] += (*inv_std)[r] * (dh - m1 - (*xhat)[r * d + j] * m2);
                    }
                }
            }
        });
}

Tensor normalize_rows(const Tensor &a) {
    const std::size_t d = last_dim(a);
    const std::size_t rows = a.numel() / d;
    auto av = a.values();
    std::vector<double> out(a.numel());
    auto norms = std::make_shared<std::vector<double>>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            s += av[r * d + j] * av[r * d + j];
        }
        const double nrm = std::sqrt(s);
        if (!(nrm > 0.0)) {
            throw NonFiniteError("normalize_rows: zero-length row " + std::to_string(r));
        }
        (*norms)[r] = nrm;
        for (std::size_t j = 0; j < d; ++j) {
            out[r * d + j] = av[r * d + j] / nrm;
        }
    }
    auto in = a.node();
    return detail::make_result("normalize_rows", a.shape(), std::move(out), {&a},
                               [in, norms, rows, d](detail::Node &o) {
                                   auto &g = in->ensure_grad();
                                   for (std::size_t r = 0; r < rows; ++r) {
                                       const double *y = o.value.data() + r * d;
                                       const double *dy = o.grad.data() + r * d;
                                       double dot = 0.0;
                                       for (std::size_t j = 0; j < d; ++j) {
                                           dot += y[j] * dy[j];
                                       }
                                       for (std::size_t j = 0; j < d; ++j) {
                                           g[r * d + j] += (dy[j] - y[j] * dot) / (*norms)[r];
                                       }
                                   }
                               });
}

// -- shape manipulation ---------------------------------------------------------------

Tensor reshape(const Tensor &a, Shape shape) {
    require(shape_numel(shape) == a.numel(), "reshape: " + shape_string(a.shape()) + " -> " +
                                                 shape_string(shape));
    auto in = a.node();
    std::vector<double> out(a.values().begin(), a.values().end());
    return detail::make_result("reshape", std::move(shape), std::move(out), {&a},
                               [in](detail::Node &o) {
                                   auto &g = in->ensure_grad();
                                   for (std::size_t i = 0; i < g.size(); ++i) {
                                       g[i] += o.grad[i];
                                   }
                               });
}

Tensor slice_rows(const Tensor &a, std::size_t begin, std::size_t end) {
    const std::size_t n = rows_of(a), m = cols_of(a);
    require(begin <= end && end <= n, "slice_rows: range out of bounds");
    auto av = a.values();
    std::vector<double> out(av.begin() + static_cast<std::ptrdiff_t>(begin * m),
                            av.begin() + static_cast<std::ptrdiff_t>(end * m));
    auto in = a.node();
    return detail::make_result("slice_rows", Shape{end - begin, m}, std::move(out), {&a},
                               [in, begin, m](detail::Node &o) {
                                   auto &g = in->ensure_grad();
                                   for (std::size_t i = 0; i < o.grad.size(); ++i) {
                                       g[begin * m + i] += o.grad[i];
                                   }
                               });
}

Tensor slice_cols(const Tensor &a, std::size_t begin, std::size_t end) {
    const std::size_t n = rows_of(a), m = cols_of(a);
    require(begin <= end && end <= m, "slice_cols: range out of bounds");
    const std::size_t w = end - begin;
    auto av = a.values();
    std::vector<double> out(n * w);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < w; ++j) {
            out[i * w + j] = av[i * m + begin + j];
        }
    }
    auto in = a.node();
    return detail::make_result("slice_cols", Shape{n, w}, std::move(out), {&a},
                               [in, n, m, w, begin](detail::Node &o) {
                                   auto &g = in->ensure_grad();
                                   for (std::size_t i = 0; i < n; ++i) {
                                       for (std::size_t j = 0; j < w; ++j) {
                                           g[i * m + begin + j] += o.grad[i * w + j];
                                       }
                                   }
                               });
}

Tensor concat_rows(const std::vector<Tensor> &parts) {
    require(!parts.empty(), "concat_rows: no inputs");
    const std::size_t m = cols_of(parts.front());
    std::size_t n = 0;
    std::vector<double> out;
    std::vector<const Tensor *> inputs;
    std::vector<std::shared_ptr<detail::Node>> nodes;
    for (const auto &p : parts) {
        require(cols_of(p) == m, "concat_rows: column counts differ");
        n += p.dim(0);
        out.insert(out.end(), p.values().begin(), p.values().end());
        inputs.push_back(&p);
        nodes.push_back(p.node());
    }
    return detail::make_result("concat_rows", Shape{n, m}, std::move(out), inputs,
                               [nodes](detail::Node &o) {
                                   std::size_t offset = 0;
                                   for (const auto &nd : nodes) {
                                       const std::size_t len = nd->value.size();
                                       if (nd->requires_grad) {
                                           auto &g = nd->ensure_grad();
                                           for (std::size_t i = 0; i < len; ++i) {
                                               g[i] += o.grad[offset + i];
                                           }
                                       }
                                       offset += len;
                                   }
                               });
}

Tensor concat_cols(const std::vector<Tensor> &parts) {
    require(!parts.empty(), "concat_cols: no inputs");
    const std::size_t n = rows_of(parts.front());
    std::size_t m = 0;
    std::vector<const Tensor *> inputs;
    std::vector<std::shared_ptr<detail::Node>> nodes;
    std::vector<std::size_t> widths;
    for (const auto &p : parts) {
        require(rows_of(p) == n, "concat_cols: row counts differ");
        widths.push_back(p.dim(1));
        m += p.dim(1);
        inputs.push_back(&p);
        nodes.push_back(p.node());
    }
    std::vector<double> out(n * m);
    std::size_t col = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        auto pv = parts[k].values();
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < widths[k]; ++j) {
                out[i * m + col + j] = pv[i * widths[k] + j];
            }
        }
        col += widths[k];
    }
    return detail::make_result("concat_cols", Shape{n, m}, std::move(out), inputs,
                               [nodes, widths, n, m](detail::Node &o) {
                                   std::size_t c = 0;
                                   for (std::size_t k = 0; k < nodes.size(); ++k) {
                                       if (nodes[k]->requires_grad) {
                                           auto &g = nodes[k]->ensure_grad();
                                           for (std::size_t i = 0; i < n; ++i) {
                                               for (std::size_t j = 0; j < widths[k]; ++j) {
                                                   g[i * widths[k] + j] += o.grad[i * m + c + j];
                                               }
                                           }
                                       }
                                       c += widths[k];
                                   }
                               });
}

Tensor gather_rows(const Tensor &a, std::span<const std::size_t> indices) {
    const std::size_t n = rows_of(a), m = cols_of(a);
    auto av = a.values();
    std::vector<double> out(indices.size() * m);
    for (std::size_t r = 0; r < indices.size(); ++r) {
        require(indices[r] < n, "gather_rows: index out of range");
        std::copy_n(av.begin() + static_cast<std::ptrdiff_t>(indices[r] * m), m,
                    out.begin() + static_cast<std::ptrdiff_t>(r * m));
    }
    auto in = a.node();
    std::vector<std::size_t> idx(indices.begin(), indices.end());
    return detail::make_result("gather_rows", Shape{idx.size(), m}, std::move(out), {&a},
                               [in, idx, m](detail::Node &o) {
                                   auto &g = in->ensure_grad();
                                   for (std::size_t r = 0; r < idx.size(); ++r) {
                                       for (std::size_t j = 0; j < m; ++j) {
                                           g[idx[r] * m + j] += o.grad[r * m + j];
                                       }
                                   }
                               });
}

Tensor repeat_rows(const Tensor &a, std::size_t k) {
    const std::size_t n = rows_of(a);
    std::vector<std::size_t> idx(n * k);
    for (std::size_t i = 0; i < n * k; ++i) {
        idx[i] = i / k;
    }
    return gather_rows(a, idx);
}

Tensor tile_rows(const Tensor &a, std::size_t k) {
    const std::size_t n = rows_of(a);
    std::vector<std::size_t> idx(n * k);
    for (std::size_t i = 0; i < n * k; ++i) {
        idx[i] = i % n;
    }
    return gather_rows(a, idx);
}

// -- grouped ops ------------------------------------------------------------------------

Tensor group_logits(const Tensor &queries, const Tensor &keys, std::size_t groups) {
    const std::size_t nq = rows_of(queries), d = cols_of(queries);
    require(cols_of(keys) == d, "group_logits: feature widths differ");
    require(groups > 0 && nq % groups == 0 && keys.dim(0) % groups == 0,
            "group_logits: rows not divisible by group count");
    const std::size_t s = nq / groups;
    const std::size_t k = keys.dim(0) / groups;
    auto qv = queries.values();
    auto kv = keys.values();
    std::vector<double> out(nq * k);
    for (std::size_t g = 0; g < groups; ++g) {
        for (std::size_t i = 0; i < s; ++i) {
            const double *q = qv.data() + (g * s + i) * d;
            for (std::size_t j = 0; j < k; ++j) {
                const double *kr = kv.data() + (g * k + j) * d;
                double dot = 0.0;
                for (std::size_t c = 0; c < d; ++c) {
                    dot += q[c] * kr[c];
                }
                out[(g * s + i) * k + j] = dot;
            }
        }
    }
    auto qn = queries.node();
    auto kn = keys.node();
    return detail::make_result(
        "group_logits", Shape{nq, k}, std::move(out), {&queries, &keys},
        [qn, kn, groups, s, k, d](detail::Node &o) {
            for (std::size_t g = 0; g < groups; ++g) {
                for (std::size_t i = 0; i < s; ++i) {
                    const std::size_t qi = g * s + i;
                    for (std::size_t j = 0; j < k; ++j) {
                        const double go = o.grad[qi * k + j];
                        if (go == 0.0) {
                            continue;
                        }
                        const std::size_t kj = g * k + j;
                        if (qn->requires_grad) {
                            auto &gq = qn->ensure_grad();
                            for (std::size_t c = 0; c < d; ++c) {
                                gq[qi * d + c] += go * kn->value[kj * d + c];
                            }
                        }
                        if (kn->requires_grad) {
                            auto &gk = kn->ensure_grad();
                            for (std::size_t c = 0; c < d; ++c) {
                                gk[kj * d + c] += go * qn->value[qi * d + c];
                            }
                        }
                    }
                }
            }
        });
}

Tensor group_mix(const Tensor &weights, const Tensor &values, std::size_t groups) {
    const std::size_t nq = rows_of(weights), k = cols_of(weights);
    const std::size_t d = cols_of(values);
    require(groups > 0 && nq % groups == 0, "group_mix: rows not divisible by group count");
    require(values.dim(0) == groups * k, "group_mix: expected " + std::to_string(groups * k) +
                                             " value rows, got " + std::to_string(values.dim(0)));
    const std::size_t s = nq / groups;
    auto wv = weights.values();
    auto vv = values.values();
    std::vector<double> out(nq * d, 0.0);
    for (std::size_t g = 0; g < groups; ++g) {
        for (std::size_t i = 0; i < s; ++i) {
            double *o = out.data() + (g * s + i) * d;
            for (std::size_t j = 0; j < k; ++j) {
                const double w = wv[(g * s + i) * k + j];
                const double *v = vv.data() + (g * k + j) * d;
                for (std::size_t c = 0; c < d; ++c) {
                    o[c] += w * v[c];
                }
            }
        }
    }
    auto wn = weights.node();
    auto vn = values.node();
    return detail::make_result(
        "group_mix", Shape{nq, d}, std::move(out), {&weights, &values},
        [wn, vn, groups, s, k, d](detail::Node &o) {
            for (std::size_t g = 0; g < groups; ++g) {
                for (std::size_t i = 0; i < s; ++i) {
                    const std::size_t qi = g * s + i;
                    const double *go = o.grad.data() + qi * d;
                    for (std::size_t j = 0; j < k; ++j) {
                        const std::size_t vj = g * k + j;
                        if (wn->requires_grad) {
                            double dot = 0.0;
                            for (std::size_t c = 0; c < d; ++c) {
                                dot += go[c] * vn->value[vj * d + c];
                            }
                            wn->ensure_grad()[qi * k + j] += dot;
                        }
                        if (vn->requires_grad) {
                            auto &gv = vn->ensure_grad();
                            const double w = wn->value[qi * k + j];
                            for (std::size_t c = 0; c < d; ++c) {
                                gv[vj * d + c] += w * go[c];
                            }
                        }
                    }
                }
            }
        });
}

Tensor attention(const Tensor &q, const Tensor &k, const Tensor &v, std::size_t heads,
                 std::size_t groups) {
    const std::size_t d = cols_of(q);
    require(cols_of(k) == d && cols_of(v) == d, "attention: feature widths differ");
    require(rows_of(k) == rows_of(v), "attention: key/value row counts differ");
    require(heads > 0 && d % heads == 0, "attention: model width " + std::to_string(d) +
                                             " not divisible by " + std::to_string(heads) +
                                             " heads");
    require(groups > 0 && q.dim(0) % groups == 0 && k.dim(0) % groups == 0,
            "attention: rows not divisible by group count");
    const std::size_t nq = q.dim(0) / groups;
    const std::size_t nk = k.dim(0) / groups;
    require(nk > 0, "attention: empty key set");
    const std::size_t dh = d / heads;
    const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
    g_score_pairs.fetch_add(groups * nq * nk);

    auto qv = q.values();
    auto kv = k.values();
    auto vv = v.values();
    // probabilities laid out [group][head][nq][nk]
    auto probs = std::make_shared<std::vector<double>>(groups * heads * nq * nk);
    std::vector<double> out(q.numel(), 0.0);
    for (std::size_t g = 0; g < groups; ++g) {
        for (std::size_t h = 0; h < heads; ++h) {
            double *P = probs->data() + ((g * heads + h) * nq) * nk;
            for (std::size_t i = 0; i < nq; ++i) {
                const double *qi = qv.data() + (g * nq + i) * d + h * dh;
                double *row = P + i * nk;
                double mx = -std::numeric_limits<double>::infinity();
                for (std::size_t j = 0; j < nk; ++j) {
                    const double *kj = kv.data() + (g * nk + j) * d + h * dh;
                    double dot = 0.0;
                    for (std::size_t c = 0; c < dh; ++c) {
                        dot += qi[c] * kj[c];
                    }
                    row[j] = dot * sc;
                    mx = std::max(mx, row[j]);
                }
                double z = 0.0;
                for (std::size_t j = 0; j < nk; ++j) {
                    row[j] = std::exp(row[j] - mx);
                    z += row[j];
                }
                double *oi = out.data() + (g * nq + i) * d + h * dh;
                for (std::size_t j = 0; j < nk; ++j) {
                    row[j] /= z;
                    const double *vj = vv.data() + (g * nk + j) * d + h * dh;
                    for (std::size_t c = 0; c < dh; ++c) {
                        oi[c] += row[j] * vj[c];
                    }
                }
            }
        }
    }
    auto qn = q.node();
    auto kn = k.node();
    auto vn = v.node();
    return detail::make_result(
        "attention", q.shape(), std::move(out), {&q, &k, &v},
        [qn, kn, vn, probs, groups, heads, nq, nk, d, dh, sc](detail::Node &o) {
            std::vector<double> dp(nk);
            double *gq = qn->requires_grad ? qn->ensure_grad().data() : nullptr;
            double *gk = kn->requires_grad ? kn->ensure_grad().data() : nullptr;
            double *gv = vn->requires_grad ? vn->ensure_grad().data() : nullptr;
            for (std::size_t g = 0; g < groups; ++g) {
                for (std::size_t h = 0; h < heads; ++h) {
                    const double *P = probs->data() + ((g * heads + h) * nq) * nk;
                    for (std::size_t i = 0; i < nq; ++i) {
                        const double *go = o.grad.data() + (g * nq + i) * d + h * dh;
                        const double *row = P + i * nk;
                        double dot = 0.0;
                        for (std::size_t j = 0; j < nk; ++j) {
                            const double *vj = vn->value.data() + (g * nk + j) * d + h * dh;
                            double s = 0.0;
                            for (std::size_t c = 0; c < dh; ++c) {
                                s += go[c] * vj[c];
                            }
                            dp[j] = s;
                            dot += s * row[j];
                            if (gv) {
                                double *gvj = gv + (g * nk + j) * d + h * dh;
                                for (std::size_t c = 0; c < dh; ++c) {
                                    gvj[c] += row[j] * go[c];
                                }
                            }
                        }
                        const double *qi = qn->value.data() + (g * nq + i) * d + h * dh;
                        double *gqi = gq ? gq + (g * nq + i) * d + h * dh : nullptr;
                        for (std::size_t j = 0; j < nk; ++j) {
                            const double ds = row[j] * (dp[j] - dot) * sc;
                            if (ds == 0.0) {
                                continue;
                            }
                            const std::size_t kr = (g * nk + j) * d + h * dh;
                            if (gqi) {
                                for (std::size_t c = 0; c < dh; ++c) {
                                    gqi[c] += ds * kn->value[kr + c];
                                }
                            }
                            if (gk) {
                                for (std::size_t c = 0; c < dh; ++c) {
                                    gk[kr + c] += ds * qi[c];
                                }
                            }
                        }
                    }
                }
            }
        });
}

std::size_t attention_score_pairs() { return g_score_pairs.load(); }
void reset_attention_score_pairs() { g_score_pairs.store(0); }

} // namespace atlasgs
