#include <spdlog/spdlog.h>
#include <unordered_set>

#include "nvhcf/data.hpp"
#include "nvhcf/errors.hpp"

namespace nvhcf::data {

Interaction sample_negative(const InteractionMatrix& train, Rng& rng) {
  if (train.users() == 0 || train.items() == 0 || train.nnz() >= train.users() * train.items())
    throw ContractError("no unobserved (user, item) pair to sample");
  while (true) {
    const auto u = static_cast<UserId>(rng.below(train.users()));
    const auto j = static_cast<ItemId>(rng.below(train.items()));
    if (!train.contains(u, j)) return {u, j, 0};
  }
}

std::vector<TrainingPair> with_negatives(const InteractionMatrix& train, std::span<const Interaction> positives,
                                         std::size_t neg_ratio, Rng& rng) {
  std::vector<TrainingPair> pairs;
  pairs.reserve(positives.size() * (1 + neg_ratio));
  for (const Interaction& p : positives) pairs.push_back({p.user, p.item, 1});
  const std::size_t negatives = positives.size() * neg_ratio;
  for (std::size_t k = 0; k < negatives; ++k) {
    const Interaction n = sample_negative(train, rng);
    pairs.push_back({n.user, n.item, 0});
  }
  return pairs;
}

std::vector<TrainingPair> sample_minibatch(const InteractionMatrix& train, std::size_t batch_positives,
                                           std::size_t neg_ratio, Rng& rng) {
  if (train.nnz() == 0) throw ContractError("training matrix has no positives");
  std::vector<Interaction> positives;
  positives.reserve(batch_positives);
  if (batch_positives > train.nnz()) {
    spdlog::warn("batch asks for {} positives but only {} exist; sampling with replacement", batch_positives,
                 train.nnz());
    for (std::size_t k = 0; k < batch_positives; ++k) positives.push_back(train.positive(rng.below(train.nnz())));
  } else {
    // Floyd's algorithm: distinct indices without materialising a permutation.
    std::unordered_set<std::size_t> chosen;
    const std::size_t n = train.nnz();
    for (std::size_t k = n - batch_positives; k < n; ++k) {
      std::size_t t = rng.below(k + 1);
      if (!chosen.insert(t).second) {
        chosen.insert(k);
        t = k;
      }
      positives.push_back(train.positive(t));
    }
  }
  return with_negatives(train, positives, neg_ratio, rng);
}

}  // namespace nvhcf::data
