#include "significance.hpp"

#include <cmath>

#include "dataset.hpp"
#include "logging.hpp"

namespace exacfs {

using ad::Tape;
using ad::Tensor;

std::vector<double> SignificanceTable::row(int stage, int cls) const {
  const int d = dims[stage];
  const auto& v = values[stage];
  return {v.begin() + static_cast<std::size_t>(cls) * d,
          v.begin() + static_cast<std::size_t>(cls + 1) * d};
}

SignificanceTable SignificanceTable::zeros(std::vector<int> dims, int num_classes) {
  SignificanceTable t;
  t.dims = std::move(dims);
  t.num_classes = num_classes;
  for (int d : t.dims) {
    t.values.emplace_back(static_cast<std::size_t>(num_classes) * d, 0.0);
  }
  return t;
}

SignificanceTable uniform_table(const SignificanceTable& like) {
  SignificanceTable t = SignificanceTable::zeros(like.dims, like.num_classes);
  t.beta = like.beta;
  t.task_id = like.task_id;
  const double v = 1.0 / static_cast<double>(like.num_classes);
  for (auto& stage : t.values) {
    std::fill(stage.begin(), stage.end(), v);
  }
  return t;
}

SignificanceAccumulator::SignificanceAccumulator(std::vector<int> dims, int num_classes)
    : dims_(std::move(dims)), num_classes_(num_classes), counts_(num_classes, 0) {
  if (num_classes_ <= 0) throw ContractError("significance: num_classes must be positive");
  for (int d : dims_) {
    sums_.emplace_back(static_cast<std::size_t>(num_classes_) * d, 0.0);
  }
}

void SignificanceAccumulator::accumulate(const std::vector<Tensor>& grads, int label) {
  if (label < 0 || label >= num_classes_) {
    throw ContractError("significance accumulate: label " + std::to_string(label) +
                        " out of range [0, " + std::to_string(num_classes_) + ")");
  }
  if (grads.size() != dims_.size()) {
    throw DimensionError("significance accumulate: expected " + std::to_string(dims_.size()) +
                         " gradient tensors, got " + std::to_string(grads.size()));
  }
  for (std::size_t j = 0; j < grads.size(); ++j) {
    const Tensor& g = grads[j];
    const int d = dims_[j];
    double* row = sums_[j].data() + static_cast<std::size_t>(label) * d;
    if (g.rank() == 3) {
      if (g.shape()[0] != d) {
        throw DimensionError("significance accumulate: stage " + std::to_string(j + 1) +
                             " gradient " + ad::shape_str(g.shape()) + " has " +
                             std::to_string(g.shape()[0]) + " channels, expected " +
                             std::to_string(d));
      }
      const std::size_t grid = static_cast<std::size_t>(g.shape()[1]) * g.shape()[2];
      const auto gv = g.data();
      for (int q = 0; q < d; ++q) {
        double acc = 0.0;
        for (std::size_t i = 0; i < grid; ++i) acc += gv[q * grid + i];
        const double collapsed = acc / static_cast<double>(grid);
        row[q] += collapsed * collapsed;
      }
    } else if (g.rank() == 1) {
      if (g.shape()[0] != d) {
        throw DimensionError("significance accumulate: stage " + std::to_string(j + 1) +
                             " gradient " + ad::shape_str(g.shape()) + ", expected (" +
                             std::to_string(d) + ")");
      }
      const auto gv = g.data();
      for (int q = 0; q < d; ++q) row[q] += gv[q] * gv[q];
    } else {
      throw DimensionError("significance accumulate: gradient must be rank 1 or 3, got " +
                           ad::shape_str(g.shape()));
    }
  }
  counts_[label] += 1;
}

SignificanceTable SignificanceAccumulator::finalize() const {
  for (int c = 0; c < num_classes_; ++c) {
    if (counts_[c] == 0) {
      throw ContractError("significance finalize: class " + std::to_string(c) +
                          " has no accumulated samples");
    }
  }
  SignificanceTable t = SignificanceTable::zeros(dims_, num_classes_);
  for (std::size_t j = 0; j < dims_.size(); ++j) {
    const int d = dims_[j];
    for (int c = 0; c < num_classes_; ++c) {
      const double inv = 1.0 / static_cast<double>(counts_[c]);
      for (int q = 0; q < d; ++q) {
        t.values[j][static_cast<std::size_t>(c) * d + q] =
            sums_[j][static_cast<std::size_t>(c) * d + q] * inv;
      }
    }
  }
  return t;
}

SignificanceTable normalize(const SignificanceTable& raw) {
  SignificanceTable t = raw;
  const int r = raw.num_classes;
  for (std::size_t j = 0; j < raw.dims.size(); ++j) {
    const int d = raw.dims[j];
    for (int q = 0; q < d; ++q) {
      double col = 0.0;
      for (int c = 0; c < r; ++c) col += raw.values[j][static_cast<std::size_t>(c) * d + q];
      if (col > 0.0) {
        for (int c = 0; c < r; ++c) {
          t.values[j][static_cast<std::size_t>(c) * d + q] =
              raw.values[j][static_cast<std::size_t>(c) * d + q] / col;
        }
      } else {
        logging::warn("significance: degenerate component, stage " + std::to_string(j + 1) +
                      " component " + std::to_string(q) + " has zero gradient mass");
        for (int c = 0; c < r; ++c) {
          t.values[j][static_cast<std::size_t>(c) * d + q] = 1.0 / static_cast<double>(r);
        }
      }
    }
  }
  return t;
}

SignificanceTable ema_update(const SignificanceTable& table, const SignificanceTable& fresh,
                             double beta) {
  if (beta < 0.0 || beta > 1.0) {
    throw ContractError("ema_update: beta must lie in [0,1], got " + std::to_string(beta));
  }
  if (table.dims != fresh.dims) {
    throw DimensionError("ema_update: stage dimensions differ between tables");
  }
  if (fresh.num_classes < table.num_classes) {
    throw ContractError("ema_update: fresh table covers fewer classes than history");
  }
  SignificanceTable out = fresh;
  out.beta = beta;
  out.task_id = table.task_id + 1;
  for (std::size_t j = 0; j < fresh.dims.size(); ++j) {
    const int d = fresh.dims[j];
    for (int c = 0; c < table.num_classes; ++c) {
      for (int q = 0; q < d; ++q) {
        out.values[j][static_cast<std::size_t>(c) * d + q] =
            beta * table.values[j][static_cast<std::size_t>(c) * d + q] +
            (1.0 - beta) * fresh.values[j][static_cast<std::size_t>(c) * d + q];
      }
    }
  }
  return out;
}

SignificanceTable estimate_task_significance(const Model& model,
                                             const std::vector<Sample>& data,
                                             const SignificanceTable* prev, double beta,
                                             int task_id) {
  if (beta < 0.0 || beta > 1.0) {
    throw ContractError("estimate_task_significance: beta must lie in [0,1]");
  }
  SignificanceAccumulator acc(model.feature_dims(), model.num_classes());
  for (const Sample& s : data) {
    Tape tape;
    // Watching the input guarantees feature gradients exist even when some
    // parameters are frozen.
    Tensor x = s.x.detached_copy(true);
    Model::Forward fwd = model.forward_sample(&tape, x);
    Tensor loss = ad::cross_entropy(&tape, fwd.logits, s.label);
    tape.backward(loss);
    std::vector<Tensor> grads;
    grads.reserve(fwd.features.size());
    for (const Tensor& f : fwd.features) {
      if (f.has_grad()) {
        const auto g = f.grad();
        grads.push_back(Tensor::from(f.shape(), std::vector<double>(g.begin(), g.end())));
      } else {
        grads.push_back(Tensor::zeros(f.shape()));
      }
    }
    acc.accumulate(grads, s.label);
  }
  SignificanceTable fresh = normalize(acc.finalize());
  fresh.beta = beta;
  fresh.task_id = task_id;
  if (prev == nullptr) return fresh;
  SignificanceTable out = ema_update(*prev, fresh, beta);
  out.task_id = task_id;
  return out;
}

}  // namespace exacfs
