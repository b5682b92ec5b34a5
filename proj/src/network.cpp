#include "network.hpp"

#include <algorithm>
#include <cmath>

namespace exacfs {

using ad::Tape;
using ad::Tensor;

namespace {

void validate_config(const NetworkConfig& cfg) {
  if (cfg.stages.empty()) throw ContractError("network: at least one conv stage required");
  if (cfg.embed_dim < 2) throw ContractError("network: embed_dim must be >= 2");
  for (const StageSpec& s : cfg.stages) {
    if (s.channels <= 0 || s.kernel <= 0 || s.stride <= 0) {
      throw ContractError("network: stage dimensions must be positive");
    }
  }
  for (int d : cfg.input_shape) {
    if (d <= 0) throw ContractError("network: input_shape must be positive");
  }
}

Tensor he_init(ad::Shape shape, int fan_in, Rng& rng) {
  const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
  Tensor t = Tensor::zeros(shape, true);
  auto v = t.mutable_data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = sd * rng.normal();
  return t;
}

}  // namespace

Model::Model(NetworkConfig cfg, Rng& rng) : cfg_(std::move(cfg)) {
  validate_config(cfg_);
  int c = cfg_.input_shape[0], h = cfg_.input_shape[1], w = cfg_.input_shape[2];
  for (const StageSpec& s : cfg_.stages) {
    const int pad = s.kernel / 2;
    kernels_.push_back(he_init({s.channels, c, s.kernel, s.kernel}, c * s.kernel * s.kernel, rng));
    conv_bias_.push_back(Tensor::zeros({s.channels}, true));
    h = (h + 2 * pad - s.kernel) / s.stride + 1;
    w = (w + 2 * pad - s.kernel) / s.stride + 1;
    if (h <= 0 || w <= 0) throw ContractError("network: stage output collapses to zero size");
    c = s.channels;
  }
  flat_dim_ = c * h * w;
  embed_w_ = he_init({cfg_.embed_dim, flat_dim_}, flat_dim_, rng);
  embed_b_ = Tensor::zeros({cfg_.embed_dim}, true);
  eta_ = Tensor::scalar(cfg_.eta_init, cfg_.eta_learnable);
}

Model::Forward Model::forward_sample(Tape* tape, const Tensor& x) const {
  if (x.rank() != 3 || x.shape()[0] != cfg_.input_shape[0] ||
      x.shape()[1] != cfg_.input_shape[1] || x.shape()[2] != cfg_.input_shape[2]) {
    throw DimensionError("forward: input " + ad::shape_str(x.shape()) + " does not match (" +
                         std::to_string(cfg_.input_shape[0]) + "x" +
                         std::to_string(cfg_.input_shape[1]) + "x" +
                         std::to_string(cfg_.input_shape[2]) + ")");
  }
  if (num_classes_ == 0) throw ContractError("forward: classifier has no classes yet");

  Forward out;
  Tensor t = x;
  for (std::size_t i = 0; i < kernels_.size(); ++i) {
    const StageSpec& s = cfg_.stages[i];
    t = ad::conv2d(tape, t, kernels_[i], s.stride, s.kernel / 2);
    t = ad::add_channel_bias(tape, t, conv_bias_[i]);
    t = ad::relu(tape, t);
    out.features.push_back(t);
  }
  Tensor flat = ad::flatten(tape, t);
  Tensor embed = ad::add(tape, ad::matvec(tape, embed_w_, flat), embed_b_);
  out.features.push_back(embed);
  out.logits = ad::cosine_scores(tape, embed, proxies_, eta_);
  return out;
}

std::vector<double> Model::embed(const Tensor& x) const {
  if (num_classes_ == 0) {
    // Embedding does not involve the classifier; allow it before any grow.
    Tensor t = x;
    Tape* tape = nullptr;
    for (std::size_t i = 0; i < kernels_.size(); ++i) {
      const StageSpec& s = cfg_.stages[i];
      t = ad::relu(tape, ad::add_channel_bias(tape, ad::conv2d(tape, t, kernels_[i], s.stride, s.kernel / 2), conv_bias_[i]));
    }
    Tensor e = ad::add(tape, ad::matvec(tape, embed_w_, ad::flatten(tape, t)), embed_b_);
    return {e.data().begin(), e.data().end()};
  }
  Forward f = forward_sample(nullptr, x);
  const Tensor& e = f.features.back();
  return {e.data().begin(), e.data().end()};
}

int Model::predict(const Tensor& x) const {
  Forward f = forward_sample(nullptr, x);
  const auto s = f.logits.data();
  int best = 0;
  for (int c = 1; c < static_cast<int>(s.size()); ++c) {
    if (s[c] > s[best]) best = c;
  }
  return best;
}

void Model::grow_classifier(int c_new, Rng& rng) {
  if (c_new <= 0) throw ContractError("grow: c_new must be >= 1, got " + std::to_string(c_new));
  const int d = cfg_.embed_dim;
  const int r_old = num_classes_;
  Tensor grown = Tensor::zeros({r_old + c_new, d}, true);
  auto gv = grown.mutable_data();
  if (r_old > 0) {
    const auto old = proxies_.data();
    std::copy(old.begin(), old.end(), gv.begin());
  }
  for (int c = r_old; c < r_old + c_new; ++c) {
    double norm = 0.0;
    do {
      norm = 0.0;
      for (int i = 0; i < d; ++i) {
        const double g = rng.normal();
        gv[static_cast<std::size_t>(c) * d + i] = g;
        norm += g * g;
      }
      norm = std::sqrt(norm);
    } while (norm < 1e-9);
    for (int i = 0; i < d; ++i) gv[static_cast<std::size_t>(c) * d + i] /= norm;
  }
  proxies_ = grown;
  num_classes_ = r_old + c_new;
}

std::vector<int> Model::feature_dims() const {
  std::vector<int> dims;
  for (const StageSpec& s : cfg_.stages) dims.push_back(s.channels);
  dims.push_back(cfg_.embed_dim);
  return dims;
}

std::vector<Tensor> Model::parameters() const {
  std::vector<Tensor> ps;
  for (const Tensor& t : all_tensors()) {
    if (t.defined() && t.requires_grad()) ps.push_back(t);
  }
  return ps;
}

void Model::zero_grad() {
  for (Tensor& t : parameters()) t.zero_grad();
}

std::vector<Tensor> Model::all_tensors() const {
  std::vector<Tensor> ts;
  for (std::size_t i = 0; i < kernels_.size(); ++i) {
    ts.push_back(kernels_[i]);
    ts.push_back(conv_bias_[i]);
  }
  ts.push_back(embed_w_);
  ts.push_back(embed_b_);
  ts.push_back(eta_);
  if (num_classes_ > 0) ts.push_back(proxies_);
  return ts;
}

void Model::load_tensors(const std::vector<Tensor>& ts) {
  const std::size_t base = 2 * kernels_.size() + 3;
  if (ts.size() != base && ts.size() != base + 1) {
    throw DimensionError("load_tensors: expected " + std::to_string(base) + " or " +
                         std::to_string(base + 1) + " tensors, got " + std::to_string(ts.size()));
  }
  auto assign = [](Tensor& dst, const Tensor& src, const char* what) {
    if (dst.shape() != src.shape()) {
      throw DimensionError(std::string("load_tensors: shape mismatch for ") + what + " " +
                           ad::shape_str(dst.shape()) + " vs " + ad::shape_str(src.shape()));
    }
    std::copy(src.data().begin(), src.data().end(), dst.mutable_data().begin());
  };
  std::size_t idx = 0;
  for (std::size_t i = 0; i < kernels_.size(); ++i) {
    assign(kernels_[i], ts[idx++], "stage kernel");
    assign(conv_bias_[i], ts[idx++], "stage bias");
  }
  assign(embed_w_, ts[idx++], "embed weight");
  assign(embed_b_, ts[idx++], "embed bias");
  assign(eta_, ts[idx++], "eta");
  if (ts.size() == base + 1) {
    const Tensor& p = ts[idx];
    if (p.rank() != 2 || p.shape()[1] != cfg_.embed_dim) {
      throw DimensionError("load_tensors: proxies " + ad::shape_str(p.shape()) +
                           " incompatible with embed_dim " + std::to_string(cfg_.embed_dim));
    }
    proxies_ = p.detached_copy(true);
    num_classes_ = p.shape()[0];
  }
}

void Model::replace_parameter(std::size_t slot, Tensor t) {
  std::vector<Tensor*> refs;
  for (std::size_t i = 0; i < kernels_.size(); ++i) {
    refs.push_back(&kernels_[i]);
    refs.push_back(&conv_bias_[i]);
  }
  refs.push_back(&embed_w_);
  refs.push_back(&embed_b_);
  refs.push_back(&eta_);
  if (num_classes_ > 0) refs.push_back(&proxies_);
  if (slot >= refs.size()) {
    throw ContractError("replace_parameter: slot " + std::to_string(slot) + " out of range");
  }
  if (refs[slot]->shape() != t.shape()) {
    throw DimensionError("replace_parameter: shape mismatch " +
                         ad::shape_str(refs[slot]->shape()) + " vs " + ad::shape_str(t.shape()));
  }
  *refs[slot] = std::move(t);
}

void Model::set_proxies(Tensor p) {
  if (p.rank() != 2 || p.shape()[1] != cfg_.embed_dim) {
    throw DimensionError("set_proxies: bad shape " + ad::shape_str(p.shape()));
  }
  num_classes_ = p.shape()[0];
  proxies_ = std::move(p);
}

Model Model::clone_detached() const {
  // Bypass the initializing constructor by copying tensor-by-tensor.
  Rng dummy(0);
  Model m(cfg_, dummy);
  for (std::size_t i = 0; i < kernels_.size(); ++i) {
    m.kernels_[i] = kernels_[i].detached_copy(false);
    m.conv_bias_[i] = conv_bias_[i].detached_copy(false);
  }
  m.embed_w_ = embed_w_.detached_copy(false);
  m.embed_b_ = embed_b_.detached_copy(false);
  m.eta_ = eta_.detached_copy(false);
  if (num_classes_ > 0) m.proxies_ = proxies_.detached_copy(false);
  m.num_classes_ = num_classes_;
  return m;
}

ModelSnapshot Model::snapshot(int task_id) const {
  ModelSnapshot snap;
  snap.model = std::make_shared<const Model>(clone_detached());
  snap.task_id = task_id;
  return snap;
}

ad::Tensor classification_loss(Tape* tape, const std::vector<Tensor>& logits,
                               const std::vector<int>& labels) {
  if (logits.empty() || logits.size() != labels.size()) {
    throw ContractError("classification_loss: logits/labels size mismatch");
  }
  std::vector<Tensor> losses;
  losses.reserve(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    losses.push_back(ad::cross_entropy(tape, logits[i], labels[i]));
  }
  return ad::scale(tape, ad::sum_scalars(tape, losses), 1.0 / static_cast<double>(losses.size()));
}

}  // namespace exacfs
