#pragma once

#include <vector>

#include "network.hpp"
#include "tensor.hpp"

namespace exacfs {

struct Sample;  // dataset.hpp

// Per-stage, per-class, per-component feature significances. Stage j holds a
// (num_classes x dims[j]) row-major matrix; after normalization each component
// column sums to 1 across classes.
struct SignificanceTable {
  std::vector<int> dims;  // d_j for stages 1..L
  int num_classes = 0;
  double beta = 0.0;
  int task_id = -1;
  std::vector<std::vector<double>> values;  // per stage, size num_classes * dims[j]

  double at(int stage, int cls, int comp) const {
    return values[stage][static_cast<std::size_t>(cls) * dims[stage] + comp];
  }
  double& at(int stage, int cls, int comp) {
    return values[stage][static_cast<std::size_t>(cls) * dims[stage] + comp];
  }
  // Row of stage `stage` for class `cls`.
  std::vector<double> row(int stage, int cls) const;

  static SignificanceTable zeros(std::vector<int> dims, int num_classes);
};

// Same shape as `like`, every entry 1/num_classes.
SignificanceTable uniform_table(const SignificanceTable& like);

// Running sums of squared collapsed per-sample gradients plus class counts.
class SignificanceAccumulator {
 public:
  SignificanceAccumulator(std::vector<int> dims, int num_classes);

  // grads[j]: gradient of the per-sample loss w.r.t. feature j. Rank-3 grads
  // are collapsed over the grid by averaging before squaring; rank-1 grads
  // are squared component-wise.
  void accumulate(const std::vector<ad::Tensor>& grads, int label);

  // Divides each class row by its sample count. Every class must have been seen.
  SignificanceTable finalize() const;

  long long count(int cls) const { return counts_[cls]; }

 private:
  std::vector<int> dims_;
  int num_classes_;
  std::vector<std::vector<double>> sums_;
  std::vector<long long> counts_;
};

// Per stage and component, divides each class entry by the sum over all
// classes. An all-zero column becomes uniform 1/num_classes with a warning.
SignificanceTable normalize(const SignificanceTable& raw);

// Blend: old classes beta*old + (1-beta)*fresh; classes new in `fresh` copy
// the fresh value. task_id advances to fresh's.
SignificanceTable ema_update(const SignificanceTable& table, const SignificanceTable& fresh,
                             double beta);

// Full estimation pass at task `task_id`: per-sample forward/backward over
// `data`, then accumulate -> finalize -> normalize -> ema against `prev`
// (pass nullptr at task 0).
SignificanceTable estimate_task_significance(const Model& model,
                                             const std::vector<Sample>& data,
                                             const SignificanceTable* prev, double beta,
                                             int task_id);

}  // namespace exacfs
