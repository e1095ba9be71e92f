#pragma once

// Monte Carlo predictive scoring. A score is the average of the interaction
// network's output over S paired latent draws (u^s, v^s). Trained ids draw
// from their approximate posterior; cold ids draw from the side-information
// prior (or N(0, I) when that prior is disabled).

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "nvhcf/data.hpp"
#include "nvhcf/model.hpp"

namespace nvhcf::predict {

using data::ItemId;
using data::UserId;
using model::Matrix;

inline constexpr std::size_t kDefaultSamples = 128;

// What the inference networks see. Ids at or beyond the trained id space are
// cold and index rows of `cold_features` (row k is id base + k).
struct ScoringContext {
  const data::InteractionMatrix* train = nullptr;
  const data::SideInfo* side = nullptr;
  data::ColdMode cold_mode = data::ColdMode::None;
  const Matrix* cold_features = nullptr;
};

ScoringContext warm_context(const data::InteractionMatrix& train, const data::SideInfo& side);
ScoringContext cold_context(const data::ColdSplit& split, const data::SideInfo& side);

struct Ranked {
  ItemId item = 0;
  double score = 0.0;
  std::size_t rank = 0;  // 1-based
};

// Descending score, ties by ascending item id.
std::vector<Ranked> rank_scores(std::span<const ItemId> items, std::span<const double> scores);

// Caches every posterior/prior once; all const members are safe to call from
// several threads. Draws for an id depend only on (seed, id), so a score never
// depends on which other candidates are scored alongside it.
class Scorer {
 public:
  Scorer(const model::ModelParams& params, ScoringContext context, std::size_t samples = kDefaultSamples,
         std::uint64_t seed = 0);

  std::size_t samples() const { return samples_; }
  std::size_t users() const;
  std::size_t items() const;

  // S x D latent draws.
  Matrix user_samples(UserId user) const;
  Matrix item_samples(ItemId item) const;

  double score(UserId user, ItemId item) const;
  std::vector<double> score(UserId user, std::span<const ItemId> items) const;
  std::vector<Ranked> rank(UserId user, std::span<const ItemId> candidates) const;

 private:
  const model::ModelParams* params_;
  ScoringContext context_;
  std::size_t samples_;
  std::uint64_t seed_;
  // One distribution per row: trained ids first, then cold ids.
  Matrix user_mean_, user_log_var_;
  Matrix item_mean_, item_log_var_;
};

// Mean interaction probability over paired rows of u and v (each S x D).
double mc_score(const model::InteractionNet& net, const Matrix& u, const Matrix& v);
// Same for one user draw set against many item draw sets stacked vertically
// (candidate c occupies rows [c*S, (c+1)*S) of v).
std::vector<double> mc_scores(const model::InteractionNet& net, const Matrix& u, const Matrix& v);

double score_warm(const model::ModelParams& params, const ScoringContext& context, UserId user, ItemId item,
                  std::size_t samples = kDefaultSamples, std::uint64_t seed = 0);
// u^s from the user prior evaluated on f_new; the item keeps its posterior.
double score_cold_user(const model::ModelParams& params, const ScoringContext& context,
                       std::span<const double> user_features, ItemId item, std::size_t samples = kDefaultSamples,
                       std::uint64_t seed = 0);
double score_cold_item(const model::ModelParams& params, const ScoringContext& context, UserId user,
                       std::span<const double> item_features, std::size_t samples = kDefaultSamples,
                       std::uint64_t seed = 0);
// Row r of item_features is one cold item; equals calling score_cold_item per row.
std::vector<double> score_cold_items(const model::ModelParams& params, const ScoringContext& context, UserId user,
                                     const Matrix& item_features, std::size_t samples = kDefaultSamples,
                                     std::uint64_t seed = 0);

std::vector<Ranked> rank(const model::ModelParams& params, const ScoringContext& context, UserId user,
                         std::span<const ItemId> candidates, std::size_t samples = kDefaultSamples,
                         std::uint64_t seed = 0);

struct PredictionRow {
  UserId user = 0;
  Ranked ranked;
};

// CSV with header `user,item,score,rank`.
void write_predictions_csv(std::ostream& out, std::span<const PredictionRow> rows);

}  // namespace nvhcf::predict
