#include "distill.hpp"

#include <cmath>

namespace exacfs {

using ad::Tape;
using ad::Tensor;

Tensor delta_features_prenormalized(Tape* tape, const Tensor& f_new, const Tensor& f_old_ready,
                                    const DistillConfig& cfg) {
  if (f_new.shape() != f_old_ready.shape()) {
    throw DimensionError("delta_features: shapes differ " + ad::shape_str(f_new.shape()) +
                         " vs " + ad::shape_str(f_old_ready.shape()));
  }
  Tensor fn = cfg.frobenius_normalize ? ad::frobenius_normalize(tape, f_new, cfg.eps_norm) : f_new;
  Tensor diff = ad::sub(tape, fn, f_old_ready);
  if (diff.rank() == 3) return ad::channel_sqsum(tape, diff);
  if (diff.rank() == 1) return ad::square(tape, diff);
  throw DimensionError("delta_features: expected rank 1 or 3, got " + ad::shape_str(diff.shape()));
}

Tensor delta_features(Tape* tape, const Tensor& f_new, const Tensor& f_old,
                      const DistillConfig& cfg) {
  // Old features are constants; normalize them off-tape.
  Tensor old_ready = cfg.frobenius_normalize
                         ? ad::frobenius_normalize(nullptr, f_old, cfg.eps_norm)
                         : f_old;
  return delta_features_prenormalized(tape, f_new, old_ready, cfg);
}

std::vector<double> significance_weights(const SignificanceTable& table, int stage_index0,
                                         int label, int old_classes, int dim,
                                         const DistillConfig& cfg) {
  if (label < 0) throw ContractError("significance_weights: negative label");
  if (label < old_classes) {
    if (label >= table.num_classes) {
      throw ContractError("significance_weights: old class " + std::to_string(label) +
                          " missing from significance table (" +
                          std::to_string(table.num_classes) + " classes)");
    }
    return table.row(stage_index0, label);
  }
  if (cfg.include_new_class_samples) {
    return std::vector<double>(static_cast<std::size_t>(dim), cfg.new_class_significance);
  }
  return {};
}

Tensor distill_loss_stage(Tape* tape, int stage, const std::vector<Sample>& batch,
                          const SignificanceTable& table, const ModelSnapshot& old_model,
                          const Model& new_model, const DistillConfig& cfg) {
  const int L = new_model.num_stages();
  if (stage < 1 || stage > L) {
    throw ContractError("distill_loss_stage: stage " + std::to_string(stage) +
                        " outside {1.." + std::to_string(L) + "}");
  }
  const int old_classes = old_model.model->num_classes();
  if (table.num_classes < old_classes) {
    throw ContractError("distill_loss_stage: table covers " + std::to_string(table.num_classes) +
                        " classes but the old model has " + std::to_string(old_classes));
  }
  const int j = stage - 1;
  const int dim = new_model.feature_dims()[j];
  std::vector<Tensor> terms;
  for (const Sample& s : batch) {
    const std::vector<double> w = significance_weights(table, j, s.label, old_classes, dim, cfg);
    if (w.empty()) continue;
    Model::Forward fresh = new_model.forward_sample(tape, s.x);
    Model::Forward old = old_model.model->forward_sample(nullptr, s.x);
    Tensor delta = delta_features(tape, fresh.features[j], old.features[j], cfg);
    terms.push_back(ad::dot_const(tape, delta, w));
  }
  if (terms.empty()) return Tensor::scalar(0.0);
  return ad::scale(tape, ad::sum_scalars(tape, terms), 1.0 / static_cast<double>(terms.size()));
}

double temperature(int r_t, int c_t) {
  if (c_t <= 0) throw ContractError("temperature: c_t must be positive, got " + std::to_string(c_t));
  if (c_t > r_t) {
    throw ContractError("temperature: c_t (" + std::to_string(c_t) + ") exceeds r_t (" +
                        std::to_string(r_t) + ")");
  }
  return std::sqrt(static_cast<double>(r_t) / static_cast<double>(c_t));
}

Tensor total_loss(Tape* tape, const Tensor& cl, const std::vector<Tensor>& stage_losses,
                  double alpha, double tau) {
  if (stage_losses.empty() || alpha == 0.0) return cl;
  Tensor dl = ad::scale(tape, ad::sum_scalars(tape, stage_losses), alpha * tau);
  return ad::add(tape, cl, dl);
}

}  // namespace exacfs
