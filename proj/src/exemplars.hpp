#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dataset.hpp"
#include "network.hpp"

namespace exacfs {

enum class SelectionStrategy { kHerding, kRandom, kClosestToMean };

SelectionStrategy parse_strategy(const std::string& name);
std::string strategy_name(SelectionStrategy s);

// Fixed per-class exemplar memory. per_class[c] holds train-set indices in
// selection order; classes already present are never reselected.
struct ExemplarStore {
  int budget_per_class = 20;
  SelectionStrategy strategy = SelectionStrategy::kHerding;
  std::uint64_t seed = 0;
  std::vector<std::vector<int>> per_class;

  std::size_t total() const;
  std::vector<int> all_indices() const;
};

// Greedy herding over one class: at step k pick the candidate whose inclusion
// keeps the mean of the selected set closest to the class prototype.
// Ties break toward the lowest candidate index. Returns local indices in
// selection order.
std::vector<int> select_herding(const std::vector<std::vector<double>>& embeddings, int budget);

// Uniform without replacement; the draw stream is (seed, class_id).
std::vector<int> select_random(int class_size, int budget, std::uint64_t seed, int class_id);

// The `budget` candidates nearest the class prototype, index tie-break.
std::vector<int> select_closest_to_mean(const std::vector<std::vector<double>>& embeddings,
                                        int budget);

// Selects exemplars for each class in `new_classes` from its candidates in
// `class_to_train_indices`, embedding candidates with the given model.
void rebuild_store(ExemplarStore& store, const Model& model, const std::vector<Sample>& train,
                   const std::vector<std::vector<int>>& class_to_train_indices,
                   const std::vector<int>& new_classes);

// Manifest CSV: class,rank,sample_index.
void save_store_manifest(const std::string& path, const ExemplarStore& store);

}  // namespace exacfs
