#pragma once

#include <vector>

#include "dataset.hpp"
#include "network.hpp"
#include "significance.hpp"
#include "tensor.hpp"

namespace exacfs {

struct DistillConfig {
  double alpha = 4.0;
  std::vector<int> stages_enabled;  // 1-based stage indices in {1..L}
  bool include_new_class_samples = true;
  double new_class_significance = 1.0;
  bool frobenius_normalize = true;
  double eps_norm = 1e-8;
};

// Component q of the result: squared Frobenius norm of the channel-q
// difference for conv features, squared difference for dense features.
// With frobenius_normalize, each map is divided by max(norm, eps) first.
// Gradients flow through f_new only when f_old carries no grad linkage.
ad::Tensor delta_features(ad::Tape* tape, const ad::Tensor& f_new, const ad::Tensor& f_old,
                          const DistillConfig& cfg);

// Same, but f_old_ready has already been normalized (feature-cache path).
ad::Tensor delta_features_prenormalized(ad::Tape* tape, const ad::Tensor& f_new,
                                        const ad::Tensor& f_old_ready, const DistillConfig& cfg);

// Weight vector for one sample at one stage: the table row for old classes,
// a constant new_class_significance vector for new classes (empty when the
// sample does not contribute). `dim` is d_j of the stage.
std::vector<double> significance_weights(const SignificanceTable& table, int stage_index0,
                                         int label, int old_classes, int dim,
                                         const DistillConfig& cfg);

// Mean over contributing samples of <w(label), delta_f_stage>. Stage is
// 1-based. Returns a constant zero scalar when nothing contributes.
ad::Tensor distill_loss_stage(ad::Tape* tape, int stage, const std::vector<Sample>& batch,
                              const SignificanceTable& table, const ModelSnapshot& old_model,
                              const Model& new_model, const DistillConfig& cfg);

// tau = sqrt(r_t / c_t)
double temperature(int r_t, int c_t);

// Eq: CL + alpha * tau * sum of enabled stage losses.
ad::Tensor total_loss(ad::Tape* tape, const ad::Tensor& cl,
                      const std::vector<ad::Tensor>& stage_losses, double alpha, double tau);

}  // namespace exacfs
