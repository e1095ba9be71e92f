#include <algorithm>
#include <cmath>
#include <numeric>
#include <spdlog/spdlog.h>
#include <unordered_set>

#include "nvhcf/data.hpp"
#include "nvhcf/errors.hpp"

namespace nvhcf::data {

namespace {

constexpr std::uint64_t kNegativesTag = 0x6e6567;  // "neg"
constexpr std::uint64_t kSplitTag = 0x73706c;      // "spl"
constexpr std::uint64_t kColdTag = 0x636f6c;       // "col"

// Up to `count` distinct items the user never interacted with in `exclusion`,
// sampled without replacement and returned in ascending order.
std::vector<ItemId> sample_unobserved(const InteractionMatrix& exclusion, UserId user, std::size_t count, Rng& rng,
                                      bool& short_list) {
  std::vector<ItemId> candidates;
  candidates.reserve(exclusion.items());
  auto seen = exclusion.items_of(user);
  auto it = seen.begin();
  for (ItemId j = 0; j < exclusion.items(); ++j) {
    while (it != seen.end() && *it < j) ++it;
    if (it != seen.end() && *it == j) continue;
    candidates.push_back(j);
  }
  short_list = candidates.size() < count;
  const std::size_t take = std::min(count, candidates.size());
  for (std::size_t k = 0; k < take; ++k) {
    const std::size_t pick = k + rng.below(candidates.size() - k);
    std::swap(candidates[k], candidates[pick]);
  }
  candidates.resize(take);
  std::sort(candidates.begin(), candidates.end());
  return candidates;
}

EvalCase make_case(const InteractionMatrix& exclusion, const Interaction& held, std::uint64_t seed,
                   std::uint64_t stream, std::size_t negatives) {
  Rng rng = Rng::derive(seed, {kNegativesTag, stream});
  EvalCase c;
  c.user = held.user;
  c.held_out_item = held.item;
  c.negatives = sample_unobserved(exclusion, held.user, negatives, rng, c.short_negatives);
  if (c.short_negatives)
    spdlog::warn("user {} has only {} non-interacted items; evaluation case is short", held.user, c.negatives.size());
  return c;
}

}  // namespace

LeaveOneOut leave_one_out_split(const InteractionMatrix& r, std::uint64_t seed, const InteractionMatrix* exclusion,
                                std::size_t negatives) {
  const InteractionMatrix& excl = exclusion != nullptr ? *exclusion : r;
  LeaveOneOut out;
  std::vector<Interaction> held;
  for (UserId u = 0; u < r.users(); ++u) {
    auto items = r.items_of(u);
    auto times = r.timestamps_of(u);
    if (items.size() < 2) continue;
    std::size_t best = 0;
    for (std::size_t k = 1; k < items.size(); ++k)
      if (times[k] > times[best] || (times[k] == times[best] && items[k] > items[best])) best = k;
    const Interaction h{u, items[best], times[best]};
    held.push_back(h);
    out.cases.push_back(make_case(excl, h, seed, u, negatives));
  }
  out.train = r.without(held);
  return out;
}

std::string_view to_string(ColdMode mode) {
  switch (mode) {
    case ColdMode::User:
      return "user";
    case ColdMode::Item:
      return "item";
    case ColdMode::None:
      break;
  }
  return "none";
}

ColdMode parse_cold_mode(std::string_view text) {
  if (text == "user") return ColdMode::User;
  if (text == "item") return ColdMode::Item;
  if (text == "none") return ColdMode::None;
  throw ContractError("unknown cold mode '" + std::string(text) + "' (expected user|item)");
}

ColdSplit split_train_val_test(const InteractionMatrix& r, std::uint64_t seed, double train_fraction,
                               double validation_fraction) {
  if (train_fraction <= 0.0 || validation_fraction < 0.0 || train_fraction + validation_fraction >= 1.0)
    throw ContractError("split fractions must satisfy 0 < train, 0 <= validation, train + validation < 1");
  std::vector<Interaction> all = r.interactions();
  Rng rng = Rng::derive(seed, {kSplitTag});
  std::shuffle(all.begin(), all.end(), rng.engine());
  const auto n = static_cast<double>(all.size());
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * n));
  const auto n_val = static_cast<std::size_t>(std::llround(validation_fraction * n));

  ColdSplit split;
  split.seed = seed;
  split.base_users = r.users();
  split.base_items = r.items();
  split.validation.assign(all.begin() + static_cast<std::ptrdiff_t>(n_train),
                          all.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  split.test.assign(all.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), all.end());
  all.resize(n_train);
  split.train = InteractionMatrix(r.users(), r.items(), std::move(all));

  std::uint64_t stream = 0;
  for (const auto& s : split.validation) split.validation_cases.push_back(make_case(r, s, seed, (1ULL << 40) + stream++, kEvalNegatives));
  for (const auto& s : split.test) split.test_cases.push_back(make_case(r, s, seed, (2ULL << 40) + stream++, kEvalNegatives));
  return split;
}

ColdSplit make_cold_split(const ColdSplit& base, const InteractionMatrix& full, const SideInfo& side, double fraction,
                          ColdMode mode, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw ContractError("cold fraction must lie in (0, 1)");
  if (mode == ColdMode::None) throw ContractError("cold split needs mode user or item");
  if (base.mode != ColdMode::None) throw ContractError("base split already has cold samples");
  if (static_cast<std::size_t>(side.user_features.rows()) != full.users() ||
      static_cast<std::size_t>(side.item_features.rows()) != full.items())
    throw DimensionError("side information rows do not match the interaction matrix");

  ColdSplit split = base;
  split.mode = mode;
  split.fraction = fraction;
  const auto n_val = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(base.validation.size())));
  const auto n_test = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(base.test.size())));
  if (n_val + n_test == 0) throw ContractError("cold fraction yields zero cold samples");

  Rng rng = Rng::derive(seed, {kColdTag, static_cast<std::uint64_t>(mode)});
  const Matrix& features = mode == ColdMode::User ? side.user_features : side.item_features;
  std::vector<Eigen::Index> rows;

  auto convert = [&](std::vector<Interaction>& samples, std::vector<EvalCase>& cases, std::size_t count) {
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng.engine());
    order.resize(count);
    std::sort(order.begin(), order.end());
    for (std::size_t idx : order) {
      const auto fresh = static_cast<std::uint32_t>(split.cold_source.size());
      if (mode == ColdMode::User) {
        split.cold_source.push_back(samples[idx].user);
        rows.push_back(samples[idx].user);
        samples[idx].user = static_cast<UserId>(base.base_users + fresh);
        cases[idx].user = samples[idx].user;
      } else {
        split.cold_source.push_back(samples[idx].item);
        rows.push_back(samples[idx].item);
        samples[idx].item = static_cast<ItemId>(base.base_items + fresh);
        cases[idx].held_out_item = samples[idx].item;
      }
    }
  };
  convert(split.validation, split.validation_cases, n_val);
  convert(split.test, split.test_cases, n_test);

  split.cold_features.resize(static_cast<Eigen::Index>(rows.size()), features.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) split.cold_features.row(static_cast<Eigen::Index>(k)) = features.row(rows[k]);
  return split;
}

ColdSplit make_cold_split(const InteractionMatrix& r, const SideInfo& side, double fraction, ColdMode mode,
                          std::uint64_t seed) {
  return make_cold_split(split_train_val_test(r, seed), r, side, fraction, mode, seed);
}

PreparedDataset prepare_dataset(std::string name, const RatingsFile& ratings, SideInfo side,
                                const PrepareOptions& options) {
  PreparedDataset ds;
  ds.name = std::move(name);
  ds.seed = options.seed;
  ds.raw_ratings = ratings.raw_ratings;
  ds.full = ratings.matrix;
  ds.side = std::move(side);
  if (ds.side.user_dim() == 0 || ds.side.item_dim() == 0)
    throw ContractError("side information must have at least one feature per side");

  LeaveOneOut test = leave_one_out_split(ds.full, options.seed);
  LeaveOneOut val = leave_one_out_split(test.train, options.seed ^ 0x76616cULL, &ds.full);
  ds.train = std::move(val.train);
  ds.test = std::move(test.cases);
  ds.validation = std::move(val.cases);

  const ColdSplit base = split_train_val_test(ds.full, options.seed);
  ds.cold_user = make_cold_split(base, ds.full, ds.side, options.cold_fraction, ColdMode::User, options.seed);
  ds.cold_item = make_cold_split(base, ds.full, ds.side, options.cold_fraction, ColdMode::Item, options.seed);
  return ds;
}

}  // namespace nvhcf::data
