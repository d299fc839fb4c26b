// Copyright Contributors to the atlasgs project
// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major real arrays with a tape-free reverse-mode differentiation
// graph. Every operation records its inputs and a backward closure when any
// input requires a gradient and gradient recording is enabled.

#pragma once

#include <cstddef>
#include <exception>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace atlasgs {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape &shape);
std::string shape_string(const Shape &shape);

/// Global arithmetic mode. In f32 mode every operation output is rounded to
/// the nearest single-precision value; storage stays double either way.
enum class Precision { f32, f64 };

void set_precision(Precision precision);
Precision precision();

class PrecisionGuard {
public:
    explicit PrecisionGuard(Precision p) : previous_(precision()) { set_precision(p); }
    ~PrecisionGuard() { set_precision(previous_); }
    PrecisionGuard(const PrecisionGuard &) = delete;
    PrecisionGuard &operator=(const PrecisionGuard &) = delete;

private:
    Precision previous_;
};

bool grad_enabled();

/// Disables graph recording in the current thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard &) = delete;
    NoGradGuard &operator=(const NoGradGuard &) = delete;

private:
    bool previous_;
};

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node &)> backward;

    std::vector<double> &ensure_grad();
};

} // namespace detail

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> values);

    static Tensor scalar(double value);
    /// Leaf tensor that accumulates gradients.
    static Tensor parameter(Shape shape, std::vector<double> values);

    bool defined() const { return node_ != nullptr; }
    const Shape &shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const;

    std::span<const double> values() const;
    /// Direct write access; only meaningful on leaves (parameters, inputs).
    std::span<double> mutable_values();
    double item() const;
    double operator[](std::size_t flat_index) const { return values()[flat_index]; }
    double at(std::size_t row, std::size_t col) const;

    bool requires_grad() const;
    void set_requires_grad(bool on);
    bool has_grad() const;
    std::span<const double> grad() const;
    std::span<double> mutable_grad();
    void zero_grad();

    /// Reverse-mode pass from a single-element tensor.
    void backward() const;
    /// Same values, no history.
    Tensor detach() const;

    const std::shared_ptr<detail::Node> &node() const { return node_; }
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

private:
    std::shared_ptr<detail::Node> node_;
};

/// Raised when an operation produces NaN or Inf.
class NonFiniteError : public std::exception {
public:
    explicit NonFiniteError(std::string what) : what_(std::move(what)) {}
    const char *what() const noexcept override { return what_.c_str(); }

private:
    std::string what_;
};

/// Raised on incompatible operand shapes.
class ShapeError : public std::exception {
public:
    explicit ShapeError(std::string what) : what_(std::move(what)) {}
    const char *what() const noexcept override { return what_.c_str(); }

private:
    std::string what_;
};

namespace detail {

using BackwardFn = std::function<void(Node &)>;

/// Wraps a freshly computed value as a graph node. Applies precision rounding
/// and the finiteness check, and records `fn` when any input needs a gradient.
Tensor make_result(const char *op, Shape shape, std::vector<double> value,
                   std::initializer_list<const Tensor *> inputs, BackwardFn fn);
Tensor make_result(const char *op, Shape shape, std::vector<double> value,
                   const std::vector<const Tensor *> &inputs, BackwardFn fn);

/// Null when the input does not take gradients.
inline Node *grad_target(const Tensor &t) {
    return t.requires_grad() ? t.node().get() : nullptr;
}

double round_to_precision(double v);

} // namespace detail

// -- elementwise and broadcasting arithmetic --------------------------------
// Binary operations accept equal shapes or a right operand whose shape is a
// trailing suffix of the left operand's shape (or a single element).

Tensor add(const Tensor &a, const Tensor &b);
Tensor sub(const Tensor &a, const Tensor &b);
Tensor mul(const Tensor &a, const Tensor &b);
Tensor scale(const Tensor &a, double factor);
Tensor add_scalar(const Tensor &a, double offset);
Tensor neg(const Tensor &a);

inline Tensor operator+(const Tensor &a, const Tensor &b) { return add(a, b); }
inline Tensor operator-(const Tensor &a, const Tensor &b) { return sub(a, b); }
inline Tensor operator*(const Tensor &a, const Tensor &b) { return mul(a, b); }
inline Tensor operator*(const Tensor &a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor &a) { return scale(a, s); }
inline Tensor operator-(const Tensor &a) { return neg(a); }

Tensor exp(const Tensor &a);
Tensor log(const Tensor &a);
Tensor tanh(const Tensor &a);
Tensor sigmoid(const Tensor &a);
Tensor gelu(const Tensor &a);
Tensor sin(const Tensor &a);
Tensor cos(const Tensor &a);
Tensor square(const Tensor &a);
Tensor sqrt(const Tensor &a);
/// Gradient passes only where lo <= a <= hi.
Tensor clamp(const Tensor &a, double lo, double hi);

// -- reductions ---------------------------------------------------------------

Tensor sum(const Tensor &a);
Tensor mean(const Tensor &a);
/// Mean of squared differences.
Tensor mse(const Tensor &a, const Tensor &b);

// -- 2-D linear algebra ---------------------------------------------------------

Tensor matmul(const Tensor &a, const Tensor &b);
/// x[n,p] * W[p,q] + bias[q]; bias may be undefined.
Tensor linear(const Tensor &x, const Tensor &weight, const Tensor &bias);
Tensor transpose(const Tensor &a);
/// Softmax over the last axis.
Tensor softmax(const Tensor &a);
Tensor layer_norm(const Tensor &x, const Tensor &gamma, const Tensor &beta, double eps = 1e-5);
/// Each row divided by its Euclidean norm.
Tensor normalize_rows(const Tensor &a);

// -- shape manipulation ---------------------------------------------------------

Tensor reshape(const Tensor &a, Shape shape);
Tensor slice_rows(const Tensor &a, std::size_t begin, std::size_t end);
Tensor slice_cols(const Tensor &a, std::size_t begin, std::size_t end);
Tensor concat_rows(const std::vector<Tensor> &parts);
Tensor concat_cols(const std::vector<Tensor> &parts);
Tensor gather_rows(const Tensor &a, std::span<const std::size_t> indices);
/// Row i of the input becomes rows [i*k, (i+1)*k) of the output.
Tensor repeat_rows(const Tensor &a, std::size_t k);
/// The whole input stacked k times.
Tensor tile_rows(const Tensor &a, std::size_t k);

// -- grouped operations -----------------------------------------------------------
// Row blocks are partitioned into `groups` equal groups; queries of group g only
// see keys/values of group g.

/// logits[g*s + i, j] = q[g*s + i] . keys[g*k + j]  for k keys per group.
Tensor group_logits(const Tensor &queries, const Tensor &keys, std::size_t groups);
/// out[g*s + i] = sum_j weights[g*s + i, j] * values[g*k + j].
Tensor group_mix(const Tensor &weights, const Tensor &values, std::size_t groups);

/// Multi-head scaled dot-product attention on already-projected Q, K, V.
/// Q: [groups*nq, d], K and V: [groups*nk, d]. Attention is restricted to
/// rows of the same group. Score pairs are counted per call, see
/// attention_score_pairs().
Tensor attention(const Tensor &q, const Tensor &k, const Tensor &v, std::size_t heads,
                 std::size_t groups = 1);

/// Running count of query-key score pairs computed by attention() (summed over
/// calls, not over heads).
std::size_t attention_score_pairs();
void reset_attention_score_pairs();

} // namespace atlasgs
