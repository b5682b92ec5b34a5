#pragma once

#include <array>
#include <vector>

#include "rng.hpp"
#include "tensor.hpp"

namespace exacfs {

struct StageSpec {
  int channels = 0;
  int kernel = 0;
  int stride = 1;
};

struct NetworkConfig {
  std::vector<StageSpec> stages;  // the L-1 conv stages
  int embed_dim = 16;             // d_L
  std::array<int, 3> input_shape{1, 8, 8};  // channels, h, w
  double eta_init = 10.0;
  bool eta_learnable = true;
};

class Model;

// Deep-copied, frozen parameters at the end of a task. Forward through the
// snapshot never mutates it and never records tape nodes.
struct ModelSnapshot {
  std::shared_ptr<const Model> model;
  int task_id = -1;
};

// The incremental model g(P(F(x))): conv stages F, dense embedder P and a
// growing cosine classifier g.
class Model {
 public:
  Model(NetworkConfig cfg, Rng& rng);

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  struct Forward {
    std::vector<ad::Tensor> features;  // f_1 .. f_L: conv stage outputs, then embedding
    ad::Tensor logits;                 // [num_classes]
  };

  // x: [c,h,w] single sample. tape may be null for inference.
  Forward forward_sample(ad::Tape* tape, const ad::Tensor& x) const;

  // Embedding f_L only; inference path for exemplar selection.
  std::vector<double> embed(const ad::Tensor& x) const;

  int predict(const ad::Tensor& x) const;  // argmax class, lowest index on ties

  void grow_classifier(int c_new, Rng& rng);

  int num_classes() const { return num_classes_; }
  int num_stages() const { return static_cast<int>(cfg_.stages.size()) + 1; }  // L
  std::vector<int> feature_dims() const;  // d_j for stages 1..L

  std::vector<ad::Tensor> parameters() const;  // trainable tensors only
  void zero_grad();

  Model clone_detached() const;
  ModelSnapshot snapshot(int task_id) const;

  const NetworkConfig& config() const { return cfg_; }

  // Parameter handles (shared storage). Mutating data or requires_grad via
  // these is intentional white-box access for tests and serialization.
  ad::Tensor stage_kernel(int i) const { return kernels_[i]; }
  ad::Tensor stage_bias(int i) const { return conv_bias_[i]; }
  ad::Tensor embed_weight() const { return embed_w_; }
  ad::Tensor embed_bias() const { return embed_b_; }
  ad::Tensor proxies() const { return proxies_; }
  ad::Tensor eta() const { return eta_; }
  void set_proxies(ad::Tensor p);

  // Fixed serialization order: per stage kernel+bias, embed W, embed b, eta, proxies.
  std::vector<ad::Tensor> all_tensors() const;
  void load_tensors(const std::vector<ad::Tensor>& ts);

  // Swaps in a new handle at `slot` of the all_tensors() order (shape-checked).
  // Lets a gradient check differentiate the forward pass w.r.t. one parameter.
  void replace_parameter(std::size_t slot, ad::Tensor t);

 private:
  NetworkConfig cfg_;
  std::vector<ad::Tensor> kernels_;    // per stage [co,ci,k,k]
  std::vector<ad::Tensor> conv_bias_;  // per stage [co]
  ad::Tensor embed_w_;                 // [embed_dim, flat]
  ad::Tensor embed_b_;                 // [embed_dim]
  ad::Tensor proxies_;                 // [r, embed_dim]; undefined while r == 0
  ad::Tensor eta_;                     // [1]
  int num_classes_ = 0;
  int flat_dim_ = 0;
};

// Mean over the batch of per-sample cross-entropy losses.
ad::Tensor classification_loss(ad::Tape* tape, const std::vector<ad::Tensor>& logits,
                               const std::vector<int>& labels);

}  // namespace exacfs
