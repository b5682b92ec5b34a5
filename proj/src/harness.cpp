#include "harness.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <thread>

#include "logging.hpp"
#include "optimizer.hpp"
#include "rng.hpp"
#include "serialize.hpp"

namespace exacfs {

using ad::Tape;
using ad::Tensor;

Method parse_method(const std::string& name) {
  if (name == "exacfs") return Method::kExacfs;
  if (name == "uniform_significance") return Method::kUniformSignificance;
  if (name == "finetune_only") return Method::kFinetuneOnly;
  if (name == "last_stage_only") return Method::kLastStageOnly;
  throw ContractError("unknown method '" + name + "'");
}

std::string method_name(Method m) {
  switch (m) {
    case Method::kExacfs: return "exacfs";
    case Method::kUniformSignificance: return "uniform_significance";
    case Method::kFinetuneOnly: return "finetune_only";
    case Method::kLastStageOnly: return "last_stage_only";
  }
  return "?";
}

Dataset build_dataset(const DatasetSpec& spec, std::uint64_t seed) {
  if (spec.kind == "blobs") {
    return generate_blobs(spec.classes, spec.dims, spec.samples_per_class, spec.separation,
                          spec.noise, seed);
  }
  if (spec.kind == "patches") {
    return generate_patches(spec.classes, spec.shape, spec.samples_per_class, spec.separation,
                            spec.noise, seed);
  }
  if (spec.kind == "csv") return split_80_20(load_csv_samples(spec.path), seed);
  if (spec.kind == "exds") return split_80_20(load_exds(spec.path), seed);
  throw ContractError("unknown dataset kind '" + spec.kind + "'");
}

namespace {

// Snapshot features per train index and enabled stage, normalized once when
// Frobenius normalization is on.
class OldFeatureCache {
 public:
  OldFeatureCache(const ModelSnapshot& snap, const std::vector<int>& stages0,
                  const DistillConfig& cfg, std::size_t train_size)
      : snap_(snap), stages0_(stages0), cfg_(cfg), cache_(train_size) {}

  const std::vector<Tensor>& get(int train_index, const Sample& s) {
    std::vector<Tensor>& slot = cache_[train_index];
    if (slot.empty()) {
      Model::Forward old = snap_.model->forward_sample(nullptr, s.x);
      slot.reserve(stages0_.size());
      for (int j0 : stages0_) {
        Tensor f = old.features[j0];
        slot.push_back(cfg_.frobenius_normalize
                           ? ad::frobenius_normalize(nullptr, f, cfg_.eps_norm)
                           : f);
      }
    }
    return slot;
  }

 private:
  const ModelSnapshot& snap_;
  const std::vector<int>& stages0_;
  const DistillConfig& cfg_;
  std::vector<std::vector<Tensor>> cache_;
};

std::vector<int> resolve_stages0(const DistillConfig& cfg, const Model& model) {
  const int L = model.num_stages();
  std::vector<int> out;
  for (int s : cfg.stages_enabled) {
    if (s < 1 || s > L) {
      throw ContractError("distill stage " + std::to_string(s) + " outside {1.." +
                          std::to_string(L) + "}");
    }
    out.push_back(s - 1);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

}  // namespace

void train_phase(Model& model, const TaskStream& stream, const std::vector<int>& ids,
                 const OptimConfig& opt, int epochs, double lr_scale, bool schedule,
                 const DistillPhase* distill, std::uint64_t seed, int task,
                 const char* phase_tag) {
  if (epochs <= 0 || ids.empty()) return;
  const double base_lr = opt.lr * lr_scale;
  SgdMomentum sgd(model.parameters(), base_lr, opt.momentum, opt.weight_decay);

  std::vector<int> stages0;
  std::optional<OldFeatureCache> cache;
  if (distill != nullptr) {
    stages0 = resolve_stages0(distill->cfg, model);
    cache.emplace(*distill->old_model, stages0, distill->cfg, stream.train.size());
  }
  const std::vector<int> dims = model.feature_dims();

  std::vector<int> order = ids;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    double lr = base_lr;
    if (schedule) {
      if (epoch >= (epochs * 85) / 100) {
        lr = base_lr * 0.01;
      } else if (epoch >= (epochs * 60) / 100) {
        lr = base_lr * 0.1;
      }
    }
    sgd.set_lr(lr);

    Rng shuffle_rng(mix_seed(seed, phase_tag, static_cast<std::uint64_t>(task),
                             static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);

    for (std::size_t start = 0; start < order.size(); start += opt.batch_size) {
      const std::size_t end = std::min(order.size(), start + opt.batch_size);
      Tape tape;
      std::vector<Tensor> logits;
      std::vector<int> labels;
      std::vector<std::vector<Tensor>> stage_terms(stages0.size());
      int contributors = 0;

      for (std::size_t i = start; i < end; ++i) {
        const int id = order[i];
        const Sample& s = stream.train[id];
        Model::Forward fwd = model.forward_sample(&tape, s.x);
        logits.push_back(fwd.logits);
        labels.push_back(s.label);

        if (distill != nullptr) {
          bool contributes = false;
          const std::vector<Tensor>& old_feats = cache->get(id, s);
          for (std::size_t k = 0; k < stages0.size(); ++k) {
            const int j0 = stages0[k];
            const std::vector<double> w =
                significance_weights(*distill->weights, j0, s.label, distill->old_classes,
                                     dims[j0], distill->cfg);
            if (w.empty()) continue;
            contributes = true;
            Tensor delta = delta_features_prenormalized(&tape, fwd.features[j0], old_feats[k],
                                                        distill->cfg);
            stage_terms[k].push_back(ad::dot_const(&tape, delta, w));
          }
          if (contributes) ++contributors;
        }
      }

      Tensor cl = classification_loss(&tape, logits, labels);
      Tensor total = cl;
      if (distill != nullptr && contributors > 0) {
        std::vector<Tensor> stage_losses;
        for (std::size_t k = 0; k < stages0.size(); ++k) {
          if (stage_terms[k].empty()) continue;
          stage_losses.push_back(ad::scale(&tape, ad::sum_scalars(&tape, stage_terms[k]),
                                           1.0 / static_cast<double>(contributors)));
        }
        total = total_loss(&tape, cl, stage_losses, distill->cfg.alpha, distill->tau);
      }

      sgd.zero_grad();
      tape.backward(total);
      sgd.step();
    }
  }
}

std::vector<int> balanced_sample_ids(const TaskStream& stream, const ExemplarStore& store,
                                     int task, int budget, std::uint64_t seed) {
  std::vector<int> ids;
  const int old_classes = static_cast<int>(store.per_class.size());
  for (int c = 0; c < old_classes; ++c) {
    if (store.per_class[c].empty()) {
      throw ContractError("balanced_finetune: class " + std::to_string(c) + " has no exemplars");
    }
    ids.insert(ids.end(), store.per_class[c].begin(), store.per_class[c].end());
  }
  for (int c : stream.tasks[task].class_ids) {
    const std::vector<int>& pool = stream.class_to_train_indices[c];
    if (pool.empty()) {
      throw ContractError("balanced_finetune: class " + std::to_string(c) + " has no samples");
    }
    if (static_cast<int>(pool.size()) <= budget) {
      ids.insert(ids.end(), pool.begin(), pool.end());
    } else {
      std::vector<int> shuffled = pool;
      Rng rng(mix_seed(seed, "ft-pick", static_cast<std::uint64_t>(task),
                       static_cast<std::uint64_t>(c)));
      rng.shuffle(shuffled);
      ids.insert(ids.end(), shuffled.begin(), shuffled.begin() + budget);
    }
  }
  return ids;
}

void balanced_finetune(Model& model, const TaskStream& stream, const ExemplarStore& store,
                       int task, const OptimConfig& opt, int epochs,
                       const DistillPhase* distill, std::uint64_t seed) {
  if (epochs <= 0) return;
  const std::vector<int> ids =
      balanced_sample_ids(stream, store, task, store.budget_per_class, seed);
  train_phase(model, stream, ids, opt, epochs, 0.01, false, distill, seed, task, "shuffle-ft");
}

void train_task(int t, TrainState& state, const TaskStream& stream, const RunConfig& cfg) {
  const TaskStream::Task& task = stream.tasks[t];
  if (t > 0 && (!state.snapshot.has_value() || !state.table.has_value())) {
    throw ContractError("train_task " + std::to_string(t) +
                        ": snapshot and significance table from the previous task are required");
  }

  Rng grow_rng(mix_seed(cfg.seed, "grow", static_cast<std::uint64_t>(t)));
  state.model.grow_classifier(static_cast<int>(task.class_ids.size()), grow_rng);
  const int r_t = state.model.num_classes();
  const int c_t = static_cast<int>(task.class_ids.size());
  const int old_classes = r_t - c_t;

  std::vector<int> ids = task.train_indices;
  {
    const std::vector<int> ex = state.store.all_indices();
    ids.insert(ids.end(), ex.begin(), ex.end());
  }

  DistillConfig dcfg = cfg.distill;
  if (cfg.method == Method::kLastStageOnly) {
    // The restricted-distillation arm keeps only the deepest conv stage.
    dcfg.stages_enabled = {state.model.num_stages() - 1};
  }
  const bool distill_on = t > 0 && cfg.method != Method::kFinetuneOnly && dcfg.alpha > 0.0 &&
                          !dcfg.stages_enabled.empty();

  SignificanceTable weight_table;
  DistillPhase phase;
  const DistillPhase* phase_ptr = nullptr;
  if (distill_on) {
    weight_table = cfg.method == Method::kUniformSignificance ? uniform_table(*state.table)
                                                              : *state.table;
    phase.old_model = &*state.snapshot;
    phase.weights = &weight_table;
    phase.cfg = dcfg;
    phase.old_classes = old_classes;
    phase.tau = temperature(r_t, c_t);
    phase_ptr = &phase;
  }

  train_phase(state.model, stream, ids, cfg.optimizer, cfg.optimizer.epochs, 1.0, true,
              phase_ptr, cfg.seed, t, "shuffle-train");

  if (t > 0 && cfg.finetune_epochs > 0) {
    balanced_finetune(state.model, stream, state.store, t, cfg.optimizer, cfg.finetune_epochs,
                      phase_ptr, cfg.seed);
  }

  std::vector<Sample> estimation_set;
  estimation_set.reserve(ids.size());
  for (int id : ids) estimation_set.push_back(stream.train[id]);
  state.table = estimate_task_significance(state.model, estimation_set,
                                           t > 0 ? &*state.table : nullptr, cfg.beta, t);

  rebuild_store(state.store, state.model, stream.train, stream.class_to_train_indices,
                task.class_ids);
  state.snapshot = state.model.snapshot(t);
}

EvalResult evaluate(const Model& model, const TaskStream& stream, int up_to_task) {
  EvalResult res;
  long long correct_total = 0, count_total = 0;
  for (int t = 0; t <= up_to_task; ++t) {
    long long correct = 0;
    const auto& idx = stream.tasks[t].test_indices;
    for (int i : idx) {
      if (model.predict(stream.test[i].x) == stream.test[i].label) ++correct;
    }
    res.per_task.push_back(idx.empty() ? 0.0
                                       : static_cast<double>(correct) /
                                             static_cast<double>(idx.size()));
    correct_total += correct;
    count_total += static_cast<long long>(idx.size());
  }
  res.overall = count_total == 0 ? 0.0
                                 : static_cast<double>(correct_total) /
                                       static_cast<double>(count_total);
  return res;
}

RunResult run_experiment(const RunConfig& cfg, const std::string& out_dir) {
  namespace fs = std::filesystem;
  const bool writing = !out_dir.empty();
  if (writing) fs::create_directories(out_dir);

  const Dataset ds = build_dataset(cfg.dataset, mix_seed(cfg.seed, "dataset"));
  const TaskStream stream =
      build_task_stream(ds, cfg.stream.base_classes, cfg.stream.increment,
                        cfg.stream.ordering_seed);

  NetworkConfig netcfg = cfg.network;
  netcfg.input_shape = ds.shape;
  Rng init_rng(mix_seed(cfg.seed, "model-init"));
  TrainState state{Model(netcfg, init_rng), std::nullopt, std::nullopt, ExemplarStore{}};
  state.store.budget_per_class = cfg.exemplar_budget;
  state.store.strategy = cfg.exemplar_strategy;
  state.store.seed = cfg.seed;

  RunResult result;
  for (int t = 0; t < static_cast<int>(stream.tasks.size()); ++t) {
    const auto t0 = std::chrono::steady_clock::now();
    train_task(t, state, stream, cfg);
    const EvalResult ev = evaluate(state.model, stream, t);
    const auto t1 = std::chrono::steady_clock::now();

    MetricsRow row;
    row.task = t;
    row.classes_seen = state.model.num_classes();
    row.overall_acc = ev.overall;
    row.per_task_accs = ev.per_task;
    row.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(t1 - t0).count();
    logging::info("task " + std::to_string(t) + ": overall_acc=" +
                  std::to_string(ev.overall) + " wall_ms=" + std::to_string(row.wall_ms));
    result.metrics.rows.push_back(std::move(row));

    if (writing) {
      const std::string suffix = "_task" + std::to_string(t);
      save_model(out_dir + "/model" + suffix + ".exfs", state.model);
      save_significance_csv(out_dir + "/significance" + suffix + ".csv", *state.table);
      save_significance_binary(out_dir + "/significance" + suffix + ".exfs", *state.table);
    }
  }

  if (writing) {
    save_metrics(out_dir + "/metrics.csv", result.metrics);
    save_store_manifest(out_dir + "/exemplars.csv", state.store);
  }
  return result;
}

std::vector<AblationArm> ablation_arms(const std::string& study, const RunConfig& base) {
  std::vector<AblationArm> arms;
  if (study == "significance") {
    RunConfig a = base;
    a.method = Method::kExacfs;
    RunConfig b = base;
    b.method = Method::kUniformSignificance;
    arms.push_back({"exacfs", a});
    arms.push_back({"uniform_significance", b});
  } else if (study == "stages") {
    RunConfig a = base;
    a.method = Method::kExacfs;
    RunConfig b = base;
    b.method = Method::kLastStageOnly;
    arms.push_back({"all_stages", a});
    arms.push_back({"last_stage_only", b});
  } else if (study == "sampling") {
    for (SelectionStrategy s : {SelectionStrategy::kHerding, SelectionStrategy::kRandom,
                                SelectionStrategy::kClosestToMean}) {
      RunConfig c = base;
      c.exemplar_strategy = s;
      arms.push_back({strategy_name(s), c});
    }
  } else if (study == "budget") {
    for (int b : {5, 10, 20, 50, 100}) {
      RunConfig c = base;
      c.exemplar_budget = b;
      arms.push_back({"budget_" + std::to_string(b), c});
    }
  } else {
    throw ConfigError("unknown ablation study '" + study + "'");
  }
  return arms;
}

void run_ablation(const std::string& study, const RunConfig& base, const std::string& out_dir,
                  int jobs) {
  namespace fs = std::filesystem;
  std::vector<AblationArm> arms = ablation_arms(study, base);
  fs::create_directories(out_dir);

  std::vector<double> avg(arms.size(), 0.0);
  std::vector<std::exception_ptr> errors(arms.size());
  const int workers = std::max(1, jobs);

  for (std::size_t wave = 0; wave < arms.size(); wave += workers) {
    const std::size_t wave_end = std::min(arms.size(), wave + workers);
    std::vector<std::thread> pool;
    for (std::size_t i = wave; i < wave_end; ++i) {
      pool.emplace_back([&, i]() {
        try {
          const RunResult r = run_experiment(arms[i].cfg, out_dir + "/" + arms[i].name);
          avg[i] = r.metrics.average_incremental_accuracy();
        } catch (...) {
          errors[i] = std::current_exception();
        }
      });
    }
    for (std::thread& th : pool) th.join();
  }
  for (const std::exception_ptr& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  std::ofstream os(out_dir + "/comparison.csv", std::ios::binary);
  if (!os) throw IoError("cannot open " + out_dir + "/comparison.csv for writing");
  os << "arm,avg_incremental_accuracy\n";
  char buf[32];
  for (std::size_t i = 0; i < arms.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.6f", avg[i]);
    os << arms[i].name << "," << buf << "\n";
  }
}

}  // namespace exacfs
