#include "exemplars.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "rng.hpp"

namespace exacfs {

SelectionStrategy parse_strategy(const std::string& name) {
  if (name == "herding") return SelectionStrategy::kHerding;
  if (name == "random") return SelectionStrategy::kRandom;
  if (name == "closest_to_mean") return SelectionStrategy::kClosestToMean;
  throw ContractError("unknown exemplar strategy '" + name + "'");
}

std::string strategy_name(SelectionStrategy s) {
  switch (s) {
    case SelectionStrategy::kHerding: return "herding";
    case SelectionStrategy::kRandom: return "random";
    case SelectionStrategy::kClosestToMean: return "closest_to_mean";
  }
  return "?";
}

std::size_t ExemplarStore::total() const {
  std::size_t n = 0;
  for (const auto& c : per_class) n += c.size();
  return n;
}

std::vector<int> ExemplarStore::all_indices() const {
  std::vector<int> out;
  for (const auto& c : per_class) out.insert(out.end(), c.begin(), c.end());
  return out;
}

namespace {

std::vector<double> prototype(const std::vector<std::vector<double>>& embeddings) {
  const std::size_t d = embeddings[0].size();
  std::vector<double> mu(d, 0.0);
  for (const auto& e : embeddings) {
    for (std::size_t i = 0; i < d; ++i) mu[i] += e[i];
  }
  for (double& v : mu) v /= static_cast<double>(embeddings.size());
  return mu;
}

}  // namespace

std::vector<int> select_herding(const std::vector<std::vector<double>>& embeddings, int budget) {
  if (embeddings.empty()) throw ContractError("select_herding: empty class");
  if (budget < 1) throw ContractError("select_herding: budget must be >= 1");
  const int n = static_cast<int>(embeddings.size());
  const std::size_t d = embeddings[0].size();
  const std::vector<double> mu = prototype(embeddings);
  const int take = std::min(budget, n);

  std::vector<bool> used(n, false);
  std::vector<double> running_sum(d, 0.0);
  std::vector<int> picked;
  picked.reserve(take);
  for (int k = 1; k <= take; ++k) {
    int best = -1;
    double best_dist = std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i) {
      if (used[i]) continue;
      double dist = 0.0;
      for (std::size_t q = 0; q < d; ++q) {
        const double mean_q = (running_sum[q] + embeddings[i][q]) / static_cast<double>(k);
        const double diff = mu[q] - mean_q;
        dist += diff * diff;
      }
      if (dist < best_dist) {
        best_dist = dist;
        best = i;
      }
    }
    used[best] = true;
    for (std::size_t q = 0; q < d; ++q) running_sum[q] += embeddings[best][q];
    picked.push_back(best);
  }
  return picked;
}

std::vector<int> select_random(int class_size, int budget, std::uint64_t seed, int class_id) {
  if (class_size <= 0) throw ContractError("select_random: empty class");
  if (budget < 1) throw ContractError("select_random: budget must be >= 1");
  std::vector<int> idx(class_size);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(mix_seed(seed, "exemplar-random", static_cast<std::uint64_t>(class_id)));
  rng.shuffle(idx);
  idx.resize(std::min(budget, class_size));
  return idx;
}

std::vector<int> select_closest_to_mean(const std::vector<std::vector<double>>& embeddings,
                                        int budget) {
  if (embeddings.empty()) throw ContractError("select_closest_to_mean: empty class");
  if (budget < 1) throw ContractError("select_closest_to_mean: budget must be >= 1");
  const int n = static_cast<int>(embeddings.size());
  const std::size_t d = embeddings[0].size();
  const std::vector<double> mu = prototype(embeddings);
  std::vector<std::pair<double, int>> by_dist;
  by_dist.reserve(n);
  for (int i = 0; i < n; ++i) {
    double dist = 0.0;
    for (std::size_t q = 0; q < d; ++q) {
      const double diff = embeddings[i][q] - mu[q];
      dist += diff * diff;
    }
    by_dist.emplace_back(dist, i);
  }
  std::stable_sort(by_dist.begin(), by_dist.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<int> picked;
  for (int i = 0; i < std::min(budget, n); ++i) picked.push_back(by_dist[i].second);
  return picked;
}

void rebuild_store(ExemplarStore& store, const Model& model, const std::vector<Sample>& train,
                   const std::vector<std::vector<int>>& class_to_train_indices,
                   const std::vector<int>& new_classes) {
  int max_class = static_cast<int>(store.per_class.size()) - 1;
  for (int c : new_classes) max_class = std::max(max_class, c);
  store.per_class.resize(static_cast<std::size_t>(max_class) + 1);

  for (int c : new_classes) {
    if (!store.per_class[c].empty()) continue;  // classes keep their original picks
    const std::vector<int>& candidates = class_to_train_indices[c];
    if (candidates.empty()) {
      throw ContractError("rebuild_store: class " + std::to_string(c) + " has no samples");
    }
    std::vector<int> local;
    if (store.strategy == SelectionStrategy::kRandom) {
      local = select_random(static_cast<int>(candidates.size()), store.budget_per_class,
                            store.seed, c);
    } else {
      std::vector<std::vector<double>> embeddings;
      embeddings.reserve(candidates.size());
      for (int idx : candidates) embeddings.push_back(model.embed(train[idx].x));
      local = store.strategy == SelectionStrategy::kHerding
                  ? select_herding(embeddings, store.budget_per_class)
                  : select_closest_to_mean(embeddings, store.budget_per_class);
    }
    std::vector<int>& out = store.per_class[c];
    out.reserve(local.size());
    for (int i : local) out.push_back(candidates[i]);
  }
}

void save_store_manifest(const std::string& path, const ExemplarStore& store) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os << "class,rank,sample_index\n";
  for (std::size_t c = 0; c < store.per_class.size(); ++c) {
    for (std::size_t r = 0; r < store.per_class[c].size(); ++r) {
      os << c << "," << r << "," << store.per_class[c][r] << "\n";
    }
  }
}

}  // namespace exacfs
