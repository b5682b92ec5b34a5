#include "stream.hpp"

#include <numeric>

#include "errors.hpp"
#include "rng.hpp"

namespace exacfs {

TaskStream build_task_stream(const Dataset& ds, int base_classes, int increment,
                             std::uint64_t ordering_seed) {
  const int total = ds.classes;
  if (base_classes < 1 || base_classes > total) {
    throw ContractError("task stream: base_classes must lie in [1, " + std::to_string(total) + "]");
  }
  if (increment < 1) throw ContractError("task stream: increment must be >= 1");
  if ((total - base_classes) % increment != 0) {
    throw ContractError("task stream: " + std::to_string(total - base_classes) +
                        " remaining classes not divisible by increment " +
                        std::to_string(increment));
  }

  TaskStream s;
  s.total_classes = total;
  s.base_classes = base_classes;
  s.increment = increment;
  s.arrival_to_original.resize(total);
  std::iota(s.arrival_to_original.begin(), s.arrival_to_original.end(), 0);
  Rng rng(mix_seed(ordering_seed, "class-ordering"));
  rng.shuffle(s.arrival_to_original);

  std::vector<int> original_to_arrival(total);
  for (int a = 0; a < total; ++a) original_to_arrival[s.arrival_to_original[a]] = a;

  s.train.reserve(ds.train.size());
  for (const Sample& smp : ds.train) {
    s.train.push_back({smp.x, original_to_arrival[smp.label]});
  }
  s.test.reserve(ds.test.size());
  for (const Sample& smp : ds.test) {
    s.test.push_back({smp.x, original_to_arrival[smp.label]});
  }

  s.class_to_train_indices.resize(total);
  for (int i = 0; i < static_cast<int>(s.train.size()); ++i) {
    s.class_to_train_indices[s.train[i].label].push_back(i);
  }

  const int n_tasks = 1 + (total - base_classes) / increment;
  s.tasks.resize(n_tasks);
  for (int t = 0; t < n_tasks; ++t) {
    const int lo = t == 0 ? 0 : base_classes + (t - 1) * increment;
    const int hi = t == 0 ? base_classes : lo + increment;
    for (int c = lo; c < hi; ++c) s.tasks[t].class_ids.push_back(c);
  }
  for (int i = 0; i < static_cast<int>(s.train.size()); ++i) {
    s.tasks[s.task_of_class(s.train[i].label)].train_indices.push_back(i);
  }
  for (int i = 0; i < static_cast<int>(s.test.size()); ++i) {
    s.tasks[s.task_of_class(s.test[i].label)].test_indices.push_back(i);
  }
  return s;
}

}  // namespace exacfs
