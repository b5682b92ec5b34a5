#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"

namespace exacfs::ad {

using Shape = std::vector<int>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tape;

struct TensorStorage {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first touched, then value.size() entries
  bool requires_grad = false;
  Tape* tape = nullptr;  // tape that produced this storage, if any

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

// Shared-data handle over an n-d row-major array of doubles. Copying a Tensor
// aliases the storage; detached_copy duplicates it.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double v, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return d_ != nullptr; }
  const Shape& shape() const { return d_->shape; }
  int rank() const { return static_cast<int>(d_->shape.size()); }
  std::size_t size() const { return d_->value.size(); }

  std::span<const double> data() const { return d_->value; }
  std::span<double> mutable_data() { return d_->value; }

  bool has_grad() const { return d_ != nullptr && !d_->grad.empty(); }
  std::span<const double> grad() const;
  bool requires_grad() const { return d_ != nullptr && d_->requires_grad; }
  void set_requires_grad(bool v) { d_->requires_grad = v; }
  void zero_grad();

  // Scalar access; tensor must hold exactly one value.
  double item() const;

  Tensor detached_copy(bool requires_grad = false) const;

  const std::shared_ptr<TensorStorage>& ptr() const { return d_; }

  static Tensor wrap(std::shared_ptr<TensorStorage> d) { return Tensor(std::move(d)); }

 private:
  explicit Tensor(std::shared_ptr<TensorStorage> d) : d_(std::move(d)) {}
  std::shared_ptr<TensorStorage> d_;
};

// Append-only record of one forward pass. Node insertion order is the
// topological order; backward walks it once in reverse.
class Tape {
 public:
  void record(std::shared_ptr<TensorStorage> output, std::function<void()> backward_fn);

  // Seeds d(loss)/d(loss) = 1 and propagates. Gradients of leaf tensors
  // (parameters) accumulate across calls until explicitly zeroed;
  // tape-produced intermediates are reset at the start of each call.
  void backward(const Tensor& loss);

  std::size_t size() const { return fns_.size(); }
  void clear();

 private:
  std::vector<std::shared_ptr<TensorStorage>> outputs_;
  std::vector<std::function<void()>> fns_;
};

// Operators. `tape` may be null for inference-only evaluation; a node is
// recorded only when the tape is present and some input requires gradients.

Tensor add(Tape* tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape* tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape* tape, const Tensor& x, double c);
Tensor square(Tape* tape, const Tensor& x);
Tensor relu(Tape* tape, const Tensor& x);

// [m,k] x [k,n] -> [m,n]
Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b);
// [m,k] x [k] -> [m]
Tensor matvec(Tape* tape, const Tensor& w, const Tensor& v);

// x: [c_in,h,w], kernels: [c_out,c_in,kh,kw]. Cross-correlation, no flip.
Tensor conv2d(Tape* tape, const Tensor& x, const Tensor& kernels, int stride, int padding);
// x: [d,h,w], bias: [d]
Tensor add_channel_bias(Tape* tape, const Tensor& x, const Tensor& bias);

// [d,h,w] -> [d], mean over the h*w grid per channel.
Tensor grid_mean(Tape* tape, const Tensor& x);
// [d,h,w] -> [d], sum of squares over the grid per channel.
Tensor channel_sqsum(Tape* tape, const Tensor& x);
// any rank -> [n]
Tensor flatten(Tape* tape, const Tensor& x);

// Rank 3: each channel map divided by max(its Frobenius norm, eps).
// Rank 1: the whole vector divided by max(its L2 norm, eps).
Tensor frobenius_normalize(Tape* tape, const Tensor& x, double eps);

// embed: [d], proxies: [r,d], eta: [1]. score_c = eta * cos(embed, proxy_c).
Tensor cosine_scores(Tape* tape, const Tensor& embed, const Tensor& proxies, const Tensor& eta);

// logits: [r]; -log softmax(logits)[label], computed via log-sum-exp.
Tensor cross_entropy(Tape* tape, const Tensor& logits, int label);

// Reductions sum left-to-right in index order so repeated runs are bit-identical.
Tensor sum(Tape* tape, const Tensor& x);
Tensor sum_scalars(Tape* tape, const std::vector<Tensor>& xs);
// x: [n], w: n constants. <w, x> -> [1]
Tensor dot_const(Tape* tape, const Tensor& x, const std::vector<double>& w);

// Central finite-difference check of d f / d x at x0.
// Returns max over components of |analytic - numeric| / max(1, |analytic|, |numeric|).
double grad_check(const std::function<Tensor(Tape*, const Tensor&)>& f,
                  const Tensor& x0, double eps);

namespace detail {

// Marks `out` as tape-produced and records its backward closure. Exposed so
// tests can assemble custom nodes (e.g. a deliberately wrong rule).
void attach_node(Tape* tape, Tensor& out, std::function<void()> backward_fn);
bool any_requires_grad(std::initializer_list<const Tensor*> inputs);

}  // namespace detail

}  // namespace exacfs::ad
