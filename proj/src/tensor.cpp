#include "tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <utility>

namespace exacfs::ad {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw DimensionError("shape has non-positive dimension " + shape_str(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) os << "x";
    os << shape[i];
  }
  os << ")";
  return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  auto d = std::make_shared<TensorStorage>();
  d->shape = std::move(shape);
  d->value.assign(n, 0.0);
  d->requires_grad = requires_grad;
  return Tensor(std::move(d));
}

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  std::fill(t.d_->value.begin(), t.d_->value.end(), v);
  return t;
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  if (values.size() != n) {
    throw DimensionError("tensor data length " + std::to_string(values.size()) +
                         " does not match shape " + shape_str(shape));
  }
  auto d = std::make_shared<TensorStorage>();
  d->shape = std::move(shape);
  d->value = std::move(values);
  d->requires_grad = requires_grad;
  return Tensor(std::move(d));
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return from({1}, {v}, requires_grad);
}

std::span<const double> Tensor::grad() const {
  if (!has_grad()) return {};
  return d_->grad;
}

void Tensor::zero_grad() {
  if (d_ != nullptr && !d_->grad.empty()) {
    std::fill(d_->grad.begin(), d_->grad.end(), 0.0);
  }
}

double Tensor::item() const {
  if (!defined() || size() != 1) {
    throw ContractError("item: tensor is not scalar" +
                        (defined() ? " " + shape_str(shape()) : std::string()));
  }
  return d_->value[0];
}

Tensor Tensor::detached_copy(bool requires_grad) const {
  auto d = std::make_shared<TensorStorage>();
  d->shape = d_->shape;
  d->value = d_->value;
  d->requires_grad = requires_grad;
  return Tensor(std::move(d));
}

void Tape::record(std::shared_ptr<TensorStorage> output, std::function<void()> backward_fn) {
  outputs_.push_back(std::move(output));
  fns_.push_back(std::move(backward_fn));
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ContractError("backward: loss must be a scalar tensor");
  }
  if (loss.ptr()->tape != this) {
    throw ContractError("backward: loss was not produced on this tape");
  }
  // Intermediates restart from zero; leaf gradients keep accumulating.
  for (auto& o : outputs_) {
    if (!o->grad.empty()) std::fill(o->grad.begin(), o->grad.end(), 0.0);
  }
  loss.ptr()->ensure_grad();
  loss.ptr()->grad[0] += 1.0;
  for (std::size_t i = fns_.size(); i > 0; --i) {
    fns_[i - 1]();
  }
}

void Tape::clear() {
  outputs_.clear();
  fns_.clear();
}

namespace detail {

bool any_requires_grad(std::initializer_list<const Tensor*> inputs) {
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

void attach_node(Tape* tape, Tensor& out, std::function<void()> backward_fn) {
  out.set_requires_grad(true);
  out.ptr()->tape = tape;
  tape->record(out.ptr(), std::move(backward_fn));
}

}  // namespace detail

namespace {

using detail::any_requires_grad;
using detail::attach_node;
using Storage = std::shared_ptr<TensorStorage>;

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes differ " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  }
}

void check_rank(const char* op, const Tensor& t, int rank) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got " + shape_str(t.shape()));
  }
}

}  // namespace

Tensor add(Tape* tape, const Tensor& a, const Tensor& b) {
  check_same_shape("add", a, b);
  std::vector<double> v(a.size());
  const auto av = a.data(), bv = b.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = av[i] + bv[i];
  Tensor out = Tensor::from(a.shape(), std::move(v));
  if (tape != nullptr && any_requires_grad({&a, &b})) {
    Storage os = out.ptr(), as = a.ptr(), bs = b.ptr();
    attach_node(tape, out, [os, as, bs]() {
      if (os->grad.empty()) return;
      const auto& g = os->grad;
      if (as->requires_grad) {
        as->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) as->grad[i] += g[i];
      }
      if (bs->requires_grad) {
        bs->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) bs->grad[i] += g[i];
      }
    });
  }
  return out;
}

Tensor sub(Tape* tape, const Tensor& a, const Tensor& b) {
  check_same_shape("sub", a, b);
  std::vector<double> v(a.size());
  const auto av = a.data(), bv = b.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = av[i] - bv[i];
  Tensor out = Tensor::from(a.shape(), std::move(v));
  if (tape != nullptr && any_requires_grad({&a, &b})) {
    Storage os = out.ptr(), as = a.ptr(), bs = b.ptr();
    attach_node(tape, out, [os, as, bs]() {
      if (os->grad.empty()) return;
      const auto& g = os->grad;
      if (as->requires_grad) {
        as->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) as->grad[i] += g[i];
      }
      if (bs->requires_grad) {
        bs->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) bs->grad[i] -= g[i];
      }
    });
  }
  return out;
}

Tensor scale(Tape* tape, const Tensor& x, double c) {
  std::vector<double> v(x.size());
  const auto xv = x.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = c * xv[i];
  Tensor out = Tensor::from(x.shape(), std::move(v));
  if (tape != nullptr && x.requires_grad()) {
    Storage os = out.ptr(), xs = x.ptr();
    attach_node(tape, out, [os, xs, c]() {
      if (os->grad.empty()) return;
      xs->ensure_grad();
      for (std::size_t i = 0; i < os->grad.size(); ++i) xs->grad[i] += c * os->grad[i];
    });
  }
  return out;
}

Tensor square(Tape* tape, const Tensor& x) {
  std::vector<double> v(x.size());
  const auto xv = x.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = xv[i] * xv[i];
  Tensor out = Tensor::from(x.shape(), std::move(v));
  if (tape != nullptr && x.requires_grad()) {
    Storage os = out.ptr(), xs = x.ptr();
    attach_node(tape, out, [os, xs]() {
      if (os->grad.empty()) return;
      xs->ensure_grad();
      for (std::size_t i = 0; i < os->grad.size(); ++i) {
        xs->grad[i] += 2.0 * xs->value[i] * os->grad[i];
      }
    });
  }
  return out;
}

Tensor relu(Tape* tape, const Tensor& x) {
  std::vector<double> v(x.size());
  const auto xv = x.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  Tensor out = Tensor::from(x.shape(), std::move(v));
  if (tape != nullptr && x.requires_grad()) {
    Storage os = out.ptr(), xs = x.ptr();
    attach_node(tape, out, [os, xs]() {
      if (os->grad.empty()) return;
      xs->ensure_grad();
      // Subgradient 0 at x == 0.
      for (std::size_t i = 0; i < os->grad.size(); ++i) {
        if (xs->value[i] > 0.0) xs->grad[i] += os->grad[i];
      }
    });
  }
  return out;
}

Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b) {
  check_rank("matmul", a, 2);
  check_rank("matmul", b, 2);
  const int m = a.shape()[0], k = a.shape()[1];
  const int k2 = b.shape()[0], n = b.shape()[1];
  if (k != k2) {
    throw DimensionError("matmul: inner dimensions differ " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  }
  std::vector<double> v(static_cast<std::size_t>(m) * n, 0.0);
  const auto av = a.data(), bv = b.data();
  for (int i = 0; i < m; ++i) {
    for (int l = 0; l < k; ++l) {
      const double ail = av[static_cast<std::size_t>(i) * k + l];
      for (int j = 0; j < n; ++j) {
        v[static_cast<std::size_t>(i) * n + j] += ail * bv[static_cast<std::size_t>(l) * n + j];
      }
    }
  }
  Tensor out = Tensor::from({m, n}, std::move(v));
  if (tape != nullptr && any_requires_grad({&a, &b})) {
    Storage os = out.ptr(), as = a.ptr(), bs = b.ptr();
    attach_node(tape, out, [os, as, bs, m, k, n]() {
      if (os->grad.empty()) return;
      const auto& g = os->grad;
      if (as->requires_grad) {
        as->ensure_grad();
        // dA = dC . B^T
        for (int i = 0; i < m; ++i) {
          for (int l = 0; l < k; ++l) {
            double acc = 0.0;
            for (int j = 0; j < n; ++j) {
              acc += g[static_cast<std::size_t>(i) * n + j] *
                     bs->value[static_cast<std::size_t>(l) * n + j];
            }
            as->grad[static_cast<std::size_t>(i) * k + l] += acc;
          }
        }
      }
      if (bs->requires_grad) {
        bs->ensure_grad();
        // dB = A^T . dC
        for (int l = 0; l < k; ++l) {
          for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int i = 0; i < m; ++i) {
              acc += as->value[static_cast<std::size_t>(i) * k + l] *
                     g[static_cast<std::size_t>(i) * n + j];
            }
            bs->grad[static_cast<std::size_t>(l) * n + j] += acc;
          }
        }
      }
    });
  }
  return out;
}

Tensor matvec(Tape* tape, const Tensor& w, const Tensor& v) {
  check_rank("matvec", w, 2);
  check_rank("matvec", v, 1);
  const int m = w.shape()[0], k = w.shape()[1];
  if (v.shape()[0] != k) {
    throw DimensionError("matvec: inner dimensions differ " + shape_str(w.shape()) +
                         " vs " + shape_str(v.shape()));
  }
  std::vector<double> out_v(static_cast<std::size_t>(m), 0.0);
  const auto wv = w.data(), vv = v.data();
  for (int i = 0; i < m; ++i) {
    double acc = 0.0;
    for (int l = 0; l < k; ++l) acc += wv[static_cast<std::size_t>(i) * k + l] * vv[l];
    out_v[i] = acc;
  }
  Tensor out = Tensor::from({m}, std::move(out_v));
  if (tape != nullptr && any_requires_grad({&w, &v})) {
    Storage os = out.ptr(), ws = w.ptr(), vs = v.ptr();
    attach_node(tape, out, [os, ws, vs, m, k]() {
      if (os->grad.empty()) return;
      const auto& g = os->grad;
      if (ws->requires_grad) {
        ws->ensure_grad();
        for (int i = 0; i < m; ++i) {
          for (int l = 0; l < k; ++l) {
            ws->grad[static_cast<std::size_t>(i) * k + l] += g[i] * vs->value[l];
          }
        }
      }
      if (vs->requires_grad) {
        vs->ensure_grad();
        for (int l = 0; l < k; ++l) {
          double acc = 0.0;
          for (int i = 0; i < m; ++i) acc += g[i] * ws->value[static_cast<std::size_t>(i) * k + l];
          vs->grad[l] += acc;
        }
      }
    });
  }
  return out;
}

Tensor conv2d(Tape* tape, const Tensor& x, const Tensor& kernels, int stride, int padding) {
  check_rank("conv2d", x, 3);
  check_rank("conv2d", kernels, 4);
  if (stride < 1) throw ContractError("conv2d: stride must be >= 1");
  if (padding < 0) throw ContractError("conv2d: padding must be >= 0");
  const int ci = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  const int co = kernels.shape()[0], kci = kernels.shape()[1];
  const int kh = kernels.shape()[2], kw = kernels.shape()[3];
  if (kci != ci) {
    throw DimensionError("conv2d: input channels differ, input " + shape_str(x.shape()) +
                         " vs kernels " + shape_str(kernels.shape()));
  }
  if (kh > h + 2 * padding || kw > w + 2 * padding) {
    throw DimensionError("conv2d: kernel " + shape_str(kernels.shape()) +
                         " larger than padded input " + shape_str(x.shape()) +
                         " with padding " + std::to_string(padding));
  }
  const int oh = (h + 2 * padding - kh) / stride + 1;
  const int ow = (w + 2 * padding - kw) / stride + 1;

  std::vector<double> v(static_cast<std::size_t>(co) * oh * ow, 0.0);
  const auto xv = x.data(), kv = kernels.data();
  for (int c = 0; c < co; ++c) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        double acc = 0.0;
        for (int ic = 0; ic < ci; ++ic) {
          for (int ky = 0; ky < kh; ++ky) {
            const int iy = oy * stride + ky - padding;
            if (iy < 0 || iy >= h) continue;
            const std::size_t xrow = (static_cast<std::size_t>(ic) * h + iy) * w;
            const std::size_t krow = ((static_cast<std::size_t>(c) * ci + ic) * kh + ky) * kw;
            for (int kx = 0; kx < kw; ++kx) {
              const int ix = ox * stride + kx - padding;
              if (ix < 0 || ix >= w) continue;
              acc += xv[xrow + ix] * kv[krow + kx];
            }
          }
        }
        v[(static_cast<std::size_t>(c) * oh + oy) * ow + ox] = acc;
      }
    }
  }
  Tensor out = Tensor::from({co, oh, ow}, std::move(v));
  if (tape != nullptr && any_requires_grad({&x, &kernels})) {
    Storage os = out.ptr(), xs = x.ptr(), ks = kernels.ptr();
    attach_node(tape, out, [os, xs, ks, stride, padding, ci, h, w, co, kh, kw, oh, ow]() {
      if (os->grad.empty()) return;
      const auto& g = os->grad;
      const bool need_x = xs->requires_grad;
      const bool need_k = ks->requires_grad;
      if (need_x) xs->ensure_grad();
      if (need_k) ks->ensure_grad();
      for (int c = 0; c < co; ++c) {
        for (int oy = 0; oy < oh; ++oy) {
          for (int ox = 0; ox < ow; ++ox) {
            const double go = g[(static_cast<std::size_t>(c) * oh + oy) * ow + ox];
            if (go == 0.0) continue;
            for (int ic = 0; ic < ci; ++ic) {
              for (int ky = 0; ky < kh; ++ky) {
                const int iy = oy * stride + ky - padding;
                if (iy < 0 || iy >= h) continue;
                const std::size_t xrow = (static_cast<std::size_t>(ic) * h + iy) * w;
                const std::size_t krow = ((static_cast<std::size_t>(c) * ci + ic) * kh + ky) * kw;
                for (int kx = 0; kx < kw; ++kx) {
                  const int ix = ox * stride + kx - padding;
                  if (ix < 0 || ix >= w) continue;
                  if (need_k) ks->grad[krow + kx] += go * xs->value[xrow + ix];
                  if (need_x) xs->grad[xrow + ix] += go * ks->value[krow + kx];
                }
              }
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor add_channel_bias(Tape* tape, const Tensor& x, const Tensor& bias) {
  check_rank("add_channel_bias", x, 3);
  check_rank("add_channel_bias", bias, 1);
  const int d = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  if (bias.shape()[0] != d) {
    throw DimensionError("add_channel_bias: bias " + shape_str(bias.shape()) +
                         " does not match channels of " + shape_str(x.shape()));
  }
  const std::size_t grid = static_cast<std::size_t>(h) * w;
  std::vector<double> v(x.size());
  const auto xv = x.data(), bv = bias.data();
  for (int c = 0; c < d; ++c) {
    const double b = bv[c];
    for (std::size_t i = 0; i < grid; ++i) v[c * grid + i] = xv[c * grid + i] + b;
  }
  Tensor out = Tensor::from(x.shape(), std::move(v));
  if (tape != nullptr && any_requires_grad({&x, &bias})) {
    Storage os = out.ptr(), xs = x.ptr(), bs = bias.ptr();
    attach_node(tape, out, [os, xs, bs, d, grid]() {
      if (os->grad.empty()) return;
      const auto& g = os->grad;
      if (xs->requires_grad) {
        xs->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) xs->grad[i] += g[i];
      }
      if (bs->requires_grad) {
        bs->ensure_grad();
        for (int c = 0; c < d; ++c) {
          double acc = 0.0;
          for (std::size_t i = 0; i < grid; ++i) acc += g[c * grid + i];
          bs->grad[c] += acc;
        }
      }
    });
  }
  return out;
}

Tensor grid_mean(Tape* tape, const Tensor& x) {
  check_rank("grid_mean", x, 3);
  const int d = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  const std::size_t grid = static_cast<std::size_t>(h) * w;
  const double inv = 1.0 / static_cast<double>(grid);
  std::vector<double> v(static_cast<std::size_t>(d), 0.0);
  const auto xv = x.data();
  for (int c = 0; c < d; ++c) {
    double acc = 0.0;
    for (std::size_t i = 0; i < grid; ++i) acc += xv[c * grid + i];
    v[c] = acc * inv;
  }
  Tensor out = Tensor::from({d}, std::move(v));
  if (tape != nullptr && x.requires_grad()) {
    Storage os = out.ptr(), xs = x.ptr();
    attach_node(tape, out, [os, xs, d, grid, inv]() {
      if (os->grad.empty()) return;
      xs->ensure_grad();
      for (int c = 0; c < d; ++c) {
        const double gc = os->grad[c] * inv;
        for (std::size_t i = 0; i < grid; ++i) xs->grad[c * grid + i] += gc;
      }
    });
  }
  return out;
}

Tensor channel_sqsum(Tape* tape, const Tensor& x) {
  check_rank("channel_sqsum", x, 3);
  const int d = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  const std::size_t grid = static_cast<std::size_t>(h) * w;
  std::vector<double> v(static_cast<std::size_t>(d), 0.0);
  const auto xv = x.data();
  for (int c = 0; c < d; ++c) {
    double acc = 0.0;
    for (std::size_t i = 0; i < grid; ++i) {
      const double e = xv[c * grid + i];
      acc += e * e;
    }
    v[c] = acc;
  }
  Tensor out = Tensor::from({d}, std::move(v));
  if (tape != nullptr && x.requires_grad()) {
    Storage os = out.ptr(), xs = x.ptr();
    attach_node(tape, out, [os, xs, d, grid]() {
      if (os->grad.empty()) return;
      xs->ensure_grad();
      for (int c = 0; c < d; ++c) {
        const double gc = os->grad[c];
        for (std::size_t i = 0; i < grid; ++i) {
          xs->grad[c * grid + i] += 2.0 * xs->value[c * grid + i] * gc;
        }
      }
    });
  }
  return out;
}

Tensor flatten(Tape* tape, const Tensor& x) {
  std::vector<double> v(x.data().begin(), x.data().end());
  Tensor out = Tensor::from({static_cast<int>(x.size())}, std::move(v));
  if (tape != nullptr && x.requires_grad()) {
    Storage os = out.ptr(), xs = x.ptr();
    attach_node(tape, out, [os, xs]() {
      if (os->grad.empty()) return;
      xs->ensure_grad();
      for (std::size_t i = 0; i < os->grad.size(); ++i) xs->grad[i] += os->grad[i];
    });
  }
  return out;
}

Tensor frobenius_normalize(Tape* tape, const Tensor& x, double eps) {
  if (eps <= 0.0) throw ContractError("frobenius_normalize: eps must be > 0");
  std::size_t map_count = 0, map_size = 0;
  if (x.rank() == 3) {
    map_count = static_cast<std::size_t>(x.shape()[0]);
    map_size = static_cast<std::size_t>(x.shape()[1]) * x.shape()[2];
  } else if (x.rank() == 1) {
    map_count = 1;
    map_size = x.size();
  } else {
    throw DimensionError("frobenius_normalize: expected rank 1 or 3, got " + shape_str(x.shape()));
  }
  const auto xv = x.data();
  std::vector<double> norms(map_count, 0.0);
  std::vector<double> v(x.size());
  for (std::size_t m = 0; m < map_count; ++m) {
    double acc = 0.0;
    for (std::size_t i = 0; i < map_size; ++i) {
      const double e = xv[m * map_size + i];
      acc += e * e;
    }
    norms[m] = std::sqrt(acc);
    const double n = std::max(norms[m], eps);
    const double inv = 1.0 / n;
    for (std::size_t i = 0; i < map_size; ++i) v[m * map_size + i] = xv[m * map_size + i] * inv;
  }
  Tensor out = Tensor::from(x.shape(), std::move(v));
  if (tape != nullptr && x.requires_grad()) {
    Storage os = out.ptr(), xs = x.ptr();
    attach_node(tape, out, [os, xs, eps, map_count, map_size, norms = std::move(norms)]() {
      if (os->grad.empty()) return;
      xs->ensure_grad();
      const auto& g = os->grad;
      for (std::size_t m = 0; m < map_count; ++m) {
        const double raw = norms[m];
        if (raw > eps) {
          const double n = raw;
          double gm = 0.0;  // <g, map>
          for (std::size_t i = 0; i < map_size; ++i) {
            gm += g[m * map_size + i] * xs->value[m * map_size + i];
          }
          const double inv = 1.0 / n;
          const double inv3 = inv * inv * inv;
          for (std::size_t i = 0; i < map_size; ++i) {
            xs->grad[m * map_size + i] += g[m * map_size + i] * inv - xs->value[m * map_size + i] * gm * inv3;
          }
        } else {
          // Norm under the guard: denominator is the constant eps.
          const double inv = 1.0 / eps;
          for (std::size_t i = 0; i < map_size; ++i) {
            xs->grad[m * map_size + i] += g[m * map_size + i] * inv;
          }
        }
      }
    });
  }
  return out;
}

Tensor cosine_scores(Tape* tape, const Tensor& embed, const Tensor& proxies, const Tensor& eta) {
  check_rank("cosine_scores", embed, 1);
  check_rank("cosine_scores", proxies, 2);
  if (eta.size() != 1) throw DimensionError("cosine_scores: eta must be a scalar tensor");
  const int d = embed.shape()[0];
  const int r = proxies.shape()[0];
  if (proxies.shape()[1] != d) {
    throw DimensionError("cosine_scores: proxies " + shape_str(proxies.shape()) +
                         " do not match embedding " + shape_str(embed.shape()));
  }
  constexpr double kEmbedNormGuard = 1e-12;
  const auto ev = embed.data(), pv = proxies.data();
  const double eta_v = eta.data()[0];

  double e_sq = 0.0;
  for (int i = 0; i < d; ++i) e_sq += ev[i] * ev[i];
  const double e_norm = std::sqrt(e_sq);
  const double ne = std::max(e_norm, kEmbedNormGuard);

  std::vector<double> p_norms(r), cosines(r), v(r);
  for (int c = 0; c < r; ++c) {
    double p_sq = 0.0, dot = 0.0;
    const std::size_t row = static_cast<std::size_t>(c) * d;
    for (int i = 0; i < d; ++i) {
      p_sq += pv[row + i] * pv[row + i];
      dot += ev[i] * pv[row + i];
    }
    const double p_norm = std::sqrt(p_sq);
    if (!(p_norm > kEmbedNormGuard)) {
      throw ContractError("cosine_scores: proxy " + std::to_string(c) + " has zero norm");
    }
    p_norms[c] = p_norm;
    cosines[c] = dot / (ne * p_norm);
    v[c] = eta_v * cosines[c];
  }
  Tensor out = Tensor::from({r}, std::move(v));
  if (tape != nullptr && any_requires_grad({&embed, &proxies, &eta})) {
    Storage os = out.ptr(), es = embed.ptr(), ps = proxies.ptr(), ts = eta.ptr();
    const bool e_above_guard = e_norm > kEmbedNormGuard;
    attach_node(tape, out,
                [os, es, ps, ts, d, r, ne, eta_v, e_above_guard,
                 p_norms = std::move(p_norms), cosines = std::move(cosines)]() {
      if (os->grad.empty()) return;
      const auto& g = os->grad;
      const bool need_e = es->requires_grad;
      const bool need_p = ps->requires_grad;
      const bool need_t = ts->requires_grad;
      if (need_e) es->ensure_grad();
      if (need_p) ps->ensure_grad();
      if (need_t) ts->ensure_grad();
      for (int c = 0; c < r; ++c) {
        const double gc = g[c];
        if (gc == 0.0) continue;
        if (need_t) ts->grad[0] += gc * cosines[c];
        const double coef = gc * eta_v;
        const std::size_t row = static_cast<std::size_t>(c) * d;
        const double inv_ep = 1.0 / (ne * p_norms[c]);
        for (int i = 0; i < d; ++i) {
          if (need_e) {
            double de = ps->value[row + i] * inv_ep;
            if (e_above_guard) de -= cosines[c] * es->value[i] / (ne * ne);
            es->grad[i] += coef * de;
          }
          if (need_p) {
            const double dp = es->value[i] * inv_ep -
                              cosines[c] * ps->value[row + i] / (p_norms[c] * p_norms[c]);
            ps->grad[row + i] += coef * dp;
          }
        }
      }
    });
  }
  return out;
}

Tensor cross_entropy(Tape* tape, const Tensor& logits, int label) {
  check_rank("cross_entropy", logits, 1);
  const int r = logits.shape()[0];
  if (label < 0 || label >= r) {
    throw ContractError("cross_entropy: label " + std::to_string(label) +
                        " out of range [0, " + std::to_string(r) + ")");
  }
  const auto lv = logits.data();
  double m = lv[0];
  for (int i = 1; i < r; ++i) m = std::max(m, lv[i]);
  double z = 0.0;
  for (int i = 0; i < r; ++i) z += std::exp(lv[i] - m);
  const double lse = m + std::log(z);
  const double loss = lse - lv[label];

  std::vector<double> probs(r);
  for (int i = 0; i < r; ++i) probs[i] = std::exp(lv[i] - lse);

  Tensor out = Tensor::scalar(loss);
  if (tape != nullptr && logits.requires_grad()) {
    Storage os = out.ptr(), ls = logits.ptr();
    attach_node(tape, out, [os, ls, label, r, probs = std::move(probs)]() {
      if (os->grad.empty()) return;
      const double g = os->grad[0];
      if (g == 0.0) return;
      ls->ensure_grad();
      for (int i = 0; i < r; ++i) {
        ls->grad[i] += g * (probs[i] - (i == label ? 1.0 : 0.0));
      }
    });
  }
  return out;
}

Tensor sum(Tape* tape, const Tensor& x) {
  const auto xv = x.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) acc += xv[i];
  Tensor out = Tensor::scalar(acc);
  if (tape != nullptr && x.requires_grad()) {
    Storage os = out.ptr(), xs = x.ptr();
    attach_node(tape, out, [os, xs]() {
      if (os->grad.empty()) return;
      const double g = os->grad[0];
      if (g == 0.0) return;
      xs->ensure_grad();
      for (std::size_t i = 0; i < xs->grad.size(); ++i) xs->grad[i] += g;
    });
  }
  return out;
}

Tensor sum_scalars(Tape* tape, const std::vector<Tensor>& xs) {
  if (xs.empty()) throw ContractError("sum_scalars: empty input");
  double acc = 0.0;
  bool needs = false;
  for (const Tensor& t : xs) {
    if (t.size() != 1) throw DimensionError("sum_scalars: input is not scalar " + shape_str(t.shape()));
    acc += t.data()[0];
    needs = needs || t.requires_grad();
  }
  Tensor out = Tensor::scalar(acc);
  if (tape != nullptr && needs) {
    Storage os = out.ptr();
    std::vector<Storage> ins;
    ins.reserve(xs.size());
    for (const Tensor& t : xs) ins.push_back(t.ptr());
    attach_node(tape, out, [os, ins = std::move(ins)]() {
      if (os->grad.empty()) return;
      const double g = os->grad[0];
      if (g == 0.0) return;
      for (const Storage& in : ins) {
        if (!in->requires_grad) continue;
        in->ensure_grad();
        in->grad[0] += g;
      }
    });
  }
  return out;
}

Tensor dot_const(Tape* tape, const Tensor& x, const std::vector<double>& w) {
  check_rank("dot_const", x, 1);
  if (x.size() != w.size()) {
    throw DimensionError("dot_const: weight length " + std::to_string(w.size()) +
                         " does not match " + shape_str(x.shape()));
  }
  const auto xv = x.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) acc += w[i] * xv[i];
  Tensor out = Tensor::scalar(acc);
  if (tape != nullptr && x.requires_grad()) {
    Storage os = out.ptr(), xs = x.ptr();
    attach_node(tape, out, [os, xs, w]() {
      if (os->grad.empty()) return;
      const double g = os->grad[0];
      if (g == 0.0) return;
      xs->ensure_grad();
      for (std::size_t i = 0; i < w.size(); ++i) xs->grad[i] += g * w[i];
    });
  }
  return out;
}

double grad_check(const std::function<Tensor(Tape*, const Tensor&)>& f,
                  const Tensor& x0, double eps) {
  if (eps <= 0.0) throw ContractError("grad_check: eps must be > 0");
  Tape tape;
  Tensor x = x0.detached_copy(true);
  Tensor loss = f(&tape, x);
  if (!loss.defined() || loss.size() != 1) {
    throw ContractError("grad_check: f must return a scalar tensor");
  }
  std::vector<double> analytic(x.size(), 0.0);
  if (loss.ptr()->tape == &tape) {
    tape.backward(loss);
    if (x.has_grad()) {
      const auto g = x.grad();
      analytic.assign(g.begin(), g.end());
    }
  }
  double max_err = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    Tensor xp = x0.detached_copy(false);
    Tensor xm = x0.detached_copy(false);
    xp.mutable_data()[i] += eps;
    xm.mutable_data()[i] -= eps;
    const double fp = f(nullptr, xp).item();
    const double fm = f(nullptr, xm).item();
    const double numeric = (fp - fm) / (2.0 * eps);
    const double denom = std::max({1.0, std::abs(analytic[i]), std::abs(numeric)});
    max_err = std::max(max_err, std::abs(analytic[i] - numeric) / denom);
  }
  return max_err;
}

}  // namespace exacfs::ad
