#include "nvhcf/predict.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include <fmt/format.h>

#include "nvhcf/errors.hpp"

namespace nvhcf::predict {

using model::Vector;

namespace {

constexpr std::uint64_t kUserTag = 0x75736572;      // "user"
constexpr std::uint64_t kItemTag = 0x6974656d;      // "item"
constexpr std::uint64_t kColdUserTag = 0x63757372;  // "cusr"
constexpr std::uint64_t kColdItemTag = 0x6369746d;  // "citm"
constexpr Eigen::Index kEncodeChunk = 256;

struct Encoded {
  Matrix mean;
  Matrix log_var;
};

Encoded posteriors(const model::InferenceNet& net, const Matrix& features, const data::InteractionMatrix& train,
                   bool user_side) {
  const auto count = features.rows();
  const auto collab = static_cast<Eigen::Index>(user_side ? train.items() : train.users());
  Encoded out;
  for (Eigen::Index start = 0; start < count; start += kEncodeChunk) {
    const Eigen::Index n = std::min(kEncodeChunk, count - start);
    Matrix rows = Matrix::Zero(n, collab);
    for (Eigen::Index r = 0; r < n; ++r) {
      const auto id = static_cast<std::uint32_t>(start + r);
      if (user_side)
        for (ItemId j : train.items_of(id)) rows(r, j) = 1.0;
      else
        for (UserId u : train.users_of(id)) rows(r, u) = 1.0;
    }
    autodiff::Tape tape;
    auto g = model::inference_forward(net, tape, model::sparse_inputs(features.middleRows(start, n), rows));
    if (start == 0) {
      out.mean.resize(count, g.mean.cols());
      out.log_var.resize(count, g.mean.cols());
    }
    out.mean.middleRows(start, n) = g.mean.value();
    out.log_var.middleRows(start, n) = g.log_var.value();
  }
  return out;
}

Encoded priors(const model::ModelParams& params, model::Side side, const Matrix& features) {
  autodiff::Tape tape;
  auto g = model::side_prior(params, side, tape.constant(features));
  return {g.mean.value(), g.log_var.value()};
}

Matrix draws(const Eigen::Ref<const Eigen::RowVectorXd>& mean, const Eigen::Ref<const Eigen::RowVectorXd>& log_var,
             std::size_t samples, Rng rng) {
  Matrix eps = rng.normal_matrix(static_cast<Eigen::Index>(samples), mean.size());
  const Eigen::RowVectorXd sd = (0.5 * log_var.array().cwiseMax(-model::kLogVarClamp).cwiseMin(model::kLogVarClamp)).exp();
  eps.array().rowwise() *= sd.array();
  eps.rowwise() += mean;
  return eps;
}

Matrix relu_affine(const Matrix& x, const autodiff::LayerParams& layer) {
  Matrix h(x.rows(), layer.out_dim());
  h.noalias() = x * layer.weight.transpose();
  h.rowwise() += layer.bias.transpose();
  return h.cwiseMax(0.0);
}

double sigmoid(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

void check_samples(std::size_t samples) {
  if (samples == 0) throw ContractError("sample count S must be at least 1");
}

void check_context(const ScoringContext& c) {
  if (c.train == nullptr || c.side == nullptr) throw ContractError("scoring context needs training data and side info");
  if (c.cold_mode != data::ColdMode::None && c.cold_features == nullptr)
    throw ContractError("cold scoring context needs cold features");
}

}  // namespace

ScoringContext warm_context(const data::InteractionMatrix& train, const data::SideInfo& side) {
  return {&train, &side, data::ColdMode::None, nullptr};
}

ScoringContext cold_context(const data::ColdSplit& split, const data::SideInfo& side) {
  return {&split.train, &side, split.mode, &split.cold_features};
}

std::vector<Ranked> rank_scores(std::span<const ItemId> items, std::span<const double> scores) {
  if (items.size() != scores.size()) throw DimensionError("rank: items and scores differ in length");
  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return items[a] < items[b];
  });
  std::vector<Ranked> out;
  out.reserve(order.size());
  for (std::size_t k = 0; k < order.size(); ++k) out.push_back({items[order[k]], scores[order[k]], k + 1});
  return out;
}

std::vector<double> mc_scores(const model::InteractionNet& net, const Matrix& u, const Matrix& v) {
  const Eigen::Index S = u.rows();
  const Eigen::Index D = u.cols();
  if (S == 0 || v.rows() % S != 0 || v.cols() != D || net.hidden1.in_dim() != 2 * D)
    throw DimensionError(fmt::format("mc_scores: user draws {}x{}, item draws {}x{}, network input {}", S, D, v.rows(),
                                     v.cols(), net.hidden1.in_dim()));
  const Eigen::Index candidates = v.rows() / S;
  // [u v] W^T = u W_u^T + v W_v^T; the user half is shared by every candidate.
  const auto& w1 = net.hidden1.weight;
  Matrix user_part(S, w1.rows());
  user_part.noalias() = u * w1.leftCols(D).transpose();
  user_part.rowwise() += net.hidden1.bias.transpose();
  Matrix h1(v.rows(), w1.rows());
  h1.noalias() = v * w1.rightCols(D).transpose();
  for (Eigen::Index c = 0; c < candidates; ++c) h1.middleRows(c * S, S) += user_part;
  h1 = h1.cwiseMax(0.0);
  const Matrix h2 = relu_affine(h1, net.hidden2);
  Matrix logits(h2.rows(), 1);
  logits.noalias() = h2 * net.output.weight.transpose();
  const double b = net.output.bias[0];
  std::vector<double> out(static_cast<std::size_t>(candidates), 0.0);
  for (Eigen::Index c = 0; c < candidates; ++c) {
    double sum = 0.0;
    for (Eigen::Index s = 0; s < S; ++s) sum += sigmoid(logits(c * S + s, 0) + b);
    out[static_cast<std::size_t>(c)] = sum / static_cast<double>(S);
  }
  return out;
}

double mc_score(const model::InteractionNet& net, const Matrix& u, const Matrix& v) {
  if (u.rows() != v.rows()) throw DimensionError("mc_score: user and item draw counts differ");
  return mc_scores(net, u, v)[0];
}

Scorer::Scorer(const model::ModelParams& params, ScoringContext context, std::size_t samples, std::uint64_t seed)
    : params_(&params), context_(context), samples_(samples), seed_(seed) {
  check_samples(samples);
  check_context(context);
  const auto& train = *context.train;
  const auto& side = *context.side;
  if (train.users() != params.dims.users || train.items() != params.dims.items)
    throw DimensionError(fmt::format("scorer: training matrix {}x{} vs model {}x{}", train.users(), train.items(),
                                     params.dims.users, params.dims.items));
  if (static_cast<std::size_t>(side.user_dim()) != params.dims.user_features ||
      static_cast<std::size_t>(side.item_dim()) != params.dims.item_features)
    throw DimensionError("scorer: side information widths do not match the model");

  const auto M = static_cast<Eigen::Index>(train.users());
  const auto N = static_cast<Eigen::Index>(train.items());
  Encoded users = posteriors(params.inf_user, side.user_features.topRows(M), train, true);
  Encoded items = posteriors(params.inf_item, side.item_features.topRows(N), train, false);

  if (context.cold_mode != data::ColdMode::None && context.cold_features->rows() > 0) {
    const bool user_mode = context.cold_mode == data::ColdMode::User;
    Encoded cold = priors(params, user_mode ? model::Side::User : model::Side::Item, *context.cold_features);
    Encoded& target = user_mode ? users : items;
    const auto base = target.mean.rows();
    target.mean.conservativeResize(base + cold.mean.rows(), Eigen::NoChange);
    target.log_var.conservativeResize(base + cold.mean.rows(), Eigen::NoChange);
    target.mean.bottomRows(cold.mean.rows()) = cold.mean;
    target.log_var.bottomRows(cold.mean.rows()) = cold.log_var;
  }
  user_mean_ = std::move(users.mean);
  user_log_var_ = std::move(users.log_var);
  item_mean_ = std::move(items.mean);
  item_log_var_ = std::move(items.log_var);
}

std::size_t Scorer::users() const { return static_cast<std::size_t>(user_mean_.rows()); }
std::size_t Scorer::items() const { return static_cast<std::size_t>(item_mean_.rows()); }

Matrix Scorer::user_samples(UserId user) const {
  if (user >= users()) throw ContractError(fmt::format("user id {} out of range [0, {})", user, users()));
  return draws(user_mean_.row(user), user_log_var_.row(user), samples_, Rng::derive(seed_, {kUserTag, user}));
}

Matrix Scorer::item_samples(ItemId item) const {
  if (item >= items()) throw ContractError(fmt::format("item id {} out of range [0, {})", item, items()));
  return draws(item_mean_.row(item), item_log_var_.row(item), samples_, Rng::derive(seed_, {kItemTag, item}));
}

std::vector<double> Scorer::score(UserId user, std::span<const ItemId> items) const {
  const Matrix u = user_samples(user);
  const auto S = static_cast<Eigen::Index>(samples_);
  Matrix v(S * static_cast<Eigen::Index>(items.size()), u.cols());
  for (std::size_t c = 0; c < items.size(); ++c) v.middleRows(static_cast<Eigen::Index>(c) * S, S) = item_samples(items[c]);
  if (items.empty()) return {};
  return mc_scores(params_->interact, u, v);
}

double Scorer::score(UserId user, ItemId item) const { return score(user, std::span<const ItemId>(&item, 1))[0]; }

std::vector<Ranked> Scorer::rank(UserId user, std::span<const ItemId> candidates) const {
  if (candidates.empty()) throw ContractError("rank needs at least one candidate");
  const auto scores = score(user, candidates);
  return rank_scores(candidates, scores);
}

namespace {

Matrix prior_draws(const model::ModelParams& params, model::Side side, std::span<const double> features,
                   std::size_t samples, std::uint64_t seed) {
  const auto g = model::prior(params, side, features);
  return draws(g.mean.transpose(), g.log_var.transpose(), samples,
               Rng::derive(seed, {side == model::Side::User ? kColdUserTag : kColdItemTag}));
}

Matrix posterior_draws(const model::ModelParams& params, const ScoringContext& context, model::Side side,
                       std::uint32_t id, std::size_t samples, std::uint64_t seed) {
  const bool user = side == model::Side::User;
  const auto& train = *context.train;
  const auto& side_info = *context.side;
  if (id >= (user ? train.users() : train.items()))
    throw ContractError(fmt::format("{} id {} is not a trained id", user ? "user" : "item", id));
  const Matrix& features = user ? side_info.user_features : side_info.item_features;
  const Vector feat = features.row(id).transpose();
  const Vector collab = user ? train.row(id) : train.column(id);
  const auto g = model::infer(params, side, {feat.data(), static_cast<std::size_t>(feat.size())},
                              {collab.data(), static_cast<std::size_t>(collab.size())});
  return draws(g.mean.transpose(), g.log_var.transpose(), samples,
               Rng::derive(seed, {user ? kUserTag : kItemTag, id}));
}

}  // namespace

double score_warm(const model::ModelParams& params, const ScoringContext& context, UserId user, ItemId item,
                  std::size_t samples, std::uint64_t seed) {
  check_samples(samples);
  check_context(context);
  const Matrix u = posterior_draws(params, context, model::Side::User, user, samples, seed);
  const Matrix v = posterior_draws(params, context, model::Side::Item, item, samples, seed);
  return mc_score(params.interact, u, v);
}

double score_cold_user(const model::ModelParams& params, const ScoringContext& context,
                       std::span<const double> user_features, ItemId item, std::size_t samples, std::uint64_t seed) {
  check_samples(samples);
  check_context(context);
  const Matrix u = prior_draws(params, model::Side::User, user_features, samples, seed);
  const Matrix v = posterior_draws(params, context, model::Side::Item, item, samples, seed);
  return mc_score(params.interact, u, v);
}

double score_cold_item(const model::ModelParams& params, const ScoringContext& context, UserId user,
                       std::span<const double> item_features, std::size_t samples, std::uint64_t seed) {
  check_samples(samples);
  check_context(context);
  const Matrix u = posterior_draws(params, context, model::Side::User, user, samples, seed);
  const Matrix v = prior_draws(params, model::Side::Item, item_features, samples, seed);
  return mc_score(params.interact, u, v);
}

std::vector<double> score_cold_items(const model::ModelParams& params, const ScoringContext& context, UserId user,
                                     const Matrix& item_features, std::size_t samples, std::uint64_t seed) {
  check_samples(samples);
  check_context(context);
  if (static_cast<std::size_t>(item_features.cols()) != params.dims.item_features)
    throw DimensionError(fmt::format("cold item features have {} columns, model expects {}", item_features.cols(),
                                     params.dims.item_features));
  const Matrix u = posterior_draws(params, context, model::Side::User, user, samples, seed);
  const auto S = static_cast<Eigen::Index>(samples);
  Matrix v(S * item_features.rows(), u.cols());
  for (Eigen::Index r = 0; r < item_features.rows(); ++r) {
    const Vector g = item_features.row(r).transpose();
    v.middleRows(r * S, S) =
        prior_draws(params, model::Side::Item, {g.data(), static_cast<std::size_t>(g.size())}, samples, seed);
  }
  if (item_features.rows() == 0) return {};
  return mc_scores(params.interact, u, v);
}

std::vector<Ranked> rank(const model::ModelParams& params, const ScoringContext& context, UserId user,
                         std::span<const ItemId> candidates, std::size_t samples, std::uint64_t seed) {
  return Scorer(params, context, samples, seed).rank(user, candidates);
}

void write_predictions_csv(std::ostream& out, std::span<const PredictionRow> rows) {
  out << "user,item,score,rank\n";
  for (const auto& r : rows) out << fmt::format("{},{},{:.17g},{}\n", r.user, r.ranked.item, r.ranked.score, r.ranked.rank);
}

}  // namespace nvhcf::predict
