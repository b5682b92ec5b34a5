#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dataset.hpp"
#include "distill.hpp"
#include "exemplars.hpp"
#include "metrics.hpp"
#include "network.hpp"
#include "significance.hpp"
#include "stream.hpp"

namespace exacfs {

enum class Method { kExacfs, kUniformSignificance, kFinetuneOnly, kLastStageOnly };

Method parse_method(const std::string& name);
std::string method_name(Method m);

struct DatasetSpec {
  std::string kind;  // blobs | patches | csv | exds
  int classes = 0;
  int dims = 0;                      // blobs
  std::array<int, 3> shape{1, 8, 8};  // patches
  int samples_per_class = 0;
  double separation = 1.0;
  double noise = 0.1;
  std::string path;  // csv | exds
};

struct OptimConfig {
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  int epochs = 30;
  int batch_size = 16;
};

struct StreamConfig {
  int base_classes = 5;
  int increment = 1;
  std::uint64_t ordering_seed = 0;
};

struct RunConfig {
  DatasetSpec dataset;
  NetworkConfig network;  // input_shape overwritten from the dataset
  OptimConfig optimizer;
  DistillConfig distill;
  double beta = 0.4;
  SelectionStrategy exemplar_strategy = SelectionStrategy::kHerding;
  int exemplar_budget = 20;
  StreamConfig stream;
  int finetune_epochs = 20;
  Method method = Method::kExacfs;
  std::uint64_t seed = 1;
};

Dataset build_dataset(const DatasetSpec& spec, std::uint64_t seed);

// Live training state threaded through the task loop.
struct TrainState {
  Model model;
  std::optional<ModelSnapshot> snapshot;
  std::optional<SignificanceTable> table;
  ExemplarStore store;
};

// Distillation context for a training phase; null pointer disables it.
struct DistillPhase {
  const ModelSnapshot* old_model = nullptr;
  const SignificanceTable* weights = nullptr;
  DistillConfig cfg;  // stages already resolved to the effective set
  int old_classes = 0;
  double tau = 1.0;
};

// One SGD phase over `ids`. The step schedule (x0.1 at 60% and 85% of the
// epochs) applies only when `schedule` is set; lr_scale multiplies the base lr.
void train_phase(Model& model, const TaskStream& stream, const std::vector<int>& ids,
                 const OptimConfig& opt, int epochs, double lr_scale, bool schedule,
                 const DistillPhase* distill, std::uint64_t seed, int task,
                 const char* phase_tag);

// Exemplars of old classes plus a seeded budget-capped subset of task t's
// classes; every seen class contributes min(budget, class size) samples.
std::vector<int> balanced_sample_ids(const TaskStream& stream, const ExemplarStore& store,
                                     int task, int budget, std::uint64_t seed);

void balanced_finetune(Model& model, const TaskStream& stream, const ExemplarStore& store,
                       int task, const OptimConfig& opt, int epochs,
                       const DistillPhase* distill, std::uint64_t seed);

// Algorithm-2 step for task t: grow, train on D_t plus exemplars, balanced
// fine-tune, re-estimate significances, rebuild exemplars, snapshot.
void train_task(int t, TrainState& state, const TaskStream& stream, const RunConfig& cfg);

struct EvalResult {
  double overall = 0.0;
  std::vector<double> per_task;
};
EvalResult evaluate(const Model& model, const TaskStream& stream, int up_to_task);

struct RunResult {
  MetricsLog metrics;
};

// Runs the full protocol. When out_dir is non-empty, writes metrics.csv,
// per-task significance CSV/binary, per-task model binaries and the exemplar
// manifest into it.
RunResult run_experiment(const RunConfig& cfg, const std::string& out_dir = "");

struct AblationArm {
  std::string name;
  RunConfig cfg;
};
std::vector<AblationArm> ablation_arms(const std::string& study, const RunConfig& base);

// Runs every arm (optionally `jobs` in parallel), writing each into
// out_dir/<arm> plus a comparison.csv with one row per arm.
void run_ablation(const std::string& study, const RunConfig& base, const std::string& out_dir,
                  int jobs = 1);

}  // namespace exacfs
