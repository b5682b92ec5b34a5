#pragma once

#include <cstdint>
#include <vector>

#include "dataset.hpp"

namespace exacfs {

// Task sequence over a dataset under a seeded class ordering. Labels are
// remapped to arrival order: task 0 holds arrival classes 0..base-1, each
// later task the next `increment`.
struct TaskStream {
  struct Task {
    std::vector<int> class_ids;      // arrival ids, contiguous
    std::vector<int> train_indices;  // into train
    std::vector<int> test_indices;   // into test
  };

  std::vector<Task> tasks;
  std::vector<Sample> train;  // arrival-labeled
  std::vector<Sample> test;
  std::vector<std::vector<int>> class_to_train_indices;
  std::vector<int> arrival_to_original;
  int total_classes = 0;
  int base_classes = 0;
  int increment = 0;

  int task_of_class(int arrival_class) const {
    if (arrival_class < base_classes) return 0;
    return 1 + (arrival_class - base_classes) / increment;
  }
};

TaskStream build_task_stream(const Dataset& ds, int base_classes, int increment,
                             std::uint64_t ordering_seed);

}  // namespace exacfs
