#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "nvhcf/errors.hpp"
#include "nvhcf/predict.hpp"
#include "nvhcf/train.hpp"
#include "support.hpp"

using namespace nvhcf;
using namespace nvhcf::train;
namespace ad = nvhcf::autodiff;
using model::LayerParams;
using model::Matrix;
using nvhcf::testing::block_data;
using nvhcf::testing::small_widths;

namespace {

std::vector<double> vec(const model::Vector& v) { return {v.data(), v.data() + v.size()}; }

std::span<const double> row_span(const Matrix& m, Eigen::Index r) {
  return {m.data() + r * m.cols(), static_cast<std::size_t>(m.cols())};
}

TrainConfig block_config(std::size_t epochs, std::size_t neg_ratio = 5) {
  TrainConfig c;
  c.latent_dim = 8;
  c.widths = small_widths();
  c.max_epochs = epochs;
  c.patience = 0;
  c.neg_ratio = neg_ratio;
  c.learning_rate = 3e-3;
  c.seed = 5;
  return c;
}

// Reports a strictly increasing score so the latest epoch is always the best.
FitHooks no_validation() {
  FitHooks h;
  h.validate = [calls = 0.0](const model::ModelParams&) mutable {
    calls += 1.0;
    return std::pair{calls, 0.0};
  };
  return h;
}

model::ModelParams block_params(const nvhcf::testing::BlockData& b, std::uint64_t seed = 1) {
  return model::init_model(dims_for(b.train, b.side, 8), small_widths(), {}, seed);
}

double loss_of(const model::ModelParams& p, const nvhcf::testing::BlockData& b, std::span<const data::TrainingPair> pairs,
               const model::Noise& noise) {
  return minibatch_loss(p, b.train, b.side, pairs, noise);
}

}  // namespace

TEST(Config, DefaultsMatchDocumentedValues) {
  const TrainConfig c;
  EXPECT_EQ(c.positives_per_batch(), 21u);
  EXPECT_EQ(c.steps_for(53491), 2548u);
  EXPECT_EQ(c.learning_rate, 1e-3);
  EXPECT_EQ(c.clip_norm, 5.0);
  EXPECT_EQ(c.patience, 10u);
  EXPECT_EQ(c.max_epochs, 300u);
  EXPECT_EQ(c.latent_dim, 128u);
}

TEST(Config, JsonRoundTripAndDefaults) {
  std::vector<std::string> defaulted;
  const TrainConfig c = config_from_json(R"({"neg_ratio": 2, "variant": "nvh-n", "widths": {"prior_hidden": 50}})",
                                         &defaulted);
  EXPECT_EQ(c.neg_ratio, 2u);
  EXPECT_EQ(c.variant, model::parse_variant("nvh-n"));
  EXPECT_EQ(c.widths.prior_hidden, 50u);
  EXPECT_NE(std::find(defaulted.begin(), defaulted.end(), "learning_rate"), defaulted.end());
  EXPECT_NE(std::find(defaulted.begin(), defaulted.end(), "widths.decoder_hidden2"), defaulted.end());
  EXPECT_EQ(std::find(defaulted.begin(), defaulted.end(), "neg_ratio"), defaulted.end());
  const TrainConfig again = config_from_json(config_to_json(c));
  EXPECT_EQ(config_to_json(again), config_to_json(c));
  EXPECT_EQ(fingerprint(again), fingerprint(c));
  EXPECT_NE(fingerprint(c), fingerprint(TrainConfig{}));
}

TEST(Config, RejectsBadInput) {
  EXPECT_THROW(config_from_json(R"({"learning_rat": 0.1})"), ContractError);
  EXPECT_THROW(config_from_json(R"({"widths": {"hidden": 3}})"), ContractError);
  EXPECT_THROW(config_from_json(R"({"neg_ratio": "five"})"), ContractError);
  EXPECT_THROW(config_from_json(R"({"learning_rate": 0})"), ContractError);
  EXPECT_THROW(config_from_json(R"({"weight_decay": -1})"), ContractError);
  EXPECT_THROW(config_from_json(R"({"batch_size": 4, "neg_ratio": 5})"), ContractError);
  EXPECT_THROW(config_from_json("[1, 2]"), ContractError);
  EXPECT_THROW(config_from_json("{"), ContractError);
  EXPECT_THROW(load_config("/nonexistent/config.json"), IoError);
}

TEST(MinibatchLoss, SinglePairEqualsElboPair) {
  const auto b = block_data();
  const auto p = block_params(b);
  std::vector<data::TrainingPair> pair{{3, 4, 1}};
  Rng rng(2);
  const auto noise = model::draw_noise(1, 2, 8, rng);
  const double direct = model::elbo_pair(p, vec(b.train.row(3)), vec(b.train.column(4)), row_span(b.side.user_features, 3),
                                         row_span(b.side.item_features, 4), 1.0, noise.user, noise.item);
  EXPECT_NEAR(loss_of(p, b, pair, noise), direct, 1e-10);
}

TEST(MinibatchLoss, DuplicatedBatchHasSameLoss) {
  const auto b = block_data();
  const auto p = block_params(b);
  std::vector<data::TrainingPair> pairs{{0, 1, 1}, {15, 2, 0}, {12, 20, 1}};
  Rng rng(3);
  const auto noise = model::draw_noise(3, 1, 8, rng);
  std::vector<data::TrainingPair> doubled = pairs;
  doubled.insert(doubled.end(), pairs.begin(), pairs.end());
  model::Noise noise2{Matrix(6, 8), Matrix(6, 8), 1};
  noise2.user << noise.user, noise.user;
  noise2.item << noise.item, noise.item;
  EXPECT_NEAR(loss_of(p, b, doubled, noise2), loss_of(p, b, pairs, noise), 1e-10);
}

TEST(MinibatchLoss, InvariantToPairOrder) {
  const auto b = block_data();
  const auto p = block_params(b);
  std::vector<data::TrainingPair> pairs{{0, 1, 1}, {15, 2, 0}, {12, 20, 1}};
  Rng rng(4);
  const auto noise = model::draw_noise(3, 1, 8, rng);
  std::vector<data::TrainingPair> reversed(pairs.rbegin(), pairs.rend());
  model::Noise rnoise{noise.user.colwise().reverse(), noise.item.colwise().reverse(), 1};
  EXPECT_NEAR(loss_of(p, b, reversed, rnoise), loss_of(p, b, pairs, noise), 1e-10);
}

TEST(MinibatchLoss, EmptyBatchIsError) {
  const auto b = block_data();
  const auto p = block_params(b);
  Rng rng(5);
  const auto noise = model::draw_noise(0, 1, 8, rng);
  EXPECT_THROW(loss_of(p, b, {}, noise), ContractError);
}

TEST(MinibatchLoss, GradientMatchesFiniteDifference) {
  const auto b = block_data();
  auto p = block_params(b);
  Rng rng(6);
  const auto pairs = data::sample_minibatch(b.train, 4, 2, rng);
  const auto noise = model::draw_noise(pairs.size(), 1, 8, rng);
  auto f = [&](ad::Tape& t) { return minibatch_loss(t, p, b.train, b.side, pairs, noise).loss; };
  ad::FiniteDiffOptions opts;
  opts.max_per_tensor = 5;
  EXPECT_LT(ad::finite_diff_check(f, p.layers(), opts).max_rel_error, 1e-4);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  LayerParams w(3, 2);
  w.weight.setConstant(0.5);
  std::vector<LayerParams*> params{&w};
  AdamState s = init_adam(params);
  ad::Gradients g;
  g.emplace(&w, LayerParams::zeros_like(w));
  adam_step(params, g, s, 1e-3);
  EXPECT_TRUE((w.weight.array() == 0.5).all());
  adam_step(params, {}, s, 1e-3);
  EXPECT_TRUE((w.weight.array() == 0.5).all());
}

TEST(Adam, FirstStepMovesByLearningRate) {
  LayerParams w(4, 1);
  std::vector<LayerParams*> params{&w};
  AdamState s = init_adam(params);
  ad::Gradients g;
  LayerParams grad = LayerParams::zeros_like(w);
  grad.weight << 0.3, -2.0, 1e-3, 50.0;
  grad.bias << 7.0;
  g.emplace(&w, grad);
  adam_step(params, g, s, 0.01);
  for (Eigen::Index k = 0; k < 4; ++k) EXPECT_NEAR(w.weight(0, k), grad.weight(0, k) > 0 ? -0.01 : 0.01, 1e-6);
  EXPECT_NEAR(w.bias[0], -0.01, 1e-8);
}

TEST(Adam, QuadraticBowlConverges) {
  LayerParams w(3, 2);
  Matrix target(2, 3);
  target << 1, -0.8, 0.5, 0.3, 0, -1;
  std::vector<LayerParams*> params{&w};
  AdamState s = init_adam(params);
  for (int step = 0; step < 500; ++step) {
    ad::Gradients g;
    LayerParams grad = LayerParams::zeros_like(w);
    grad.weight = 2.0 * (w.weight - target);
    grad.bias = 2.0 * w.bias;
    g.emplace(&w, grad);
    adam_step(params, g, s, 0.01);
  }
  EXPECT_LT((w.weight - target).cwiseAbs().maxCoeff(), 0.05);
}

TEST(Adam, ShapeMismatch) {
  LayerParams w(3, 2);
  std::vector<LayerParams*> params{&w};
  AdamState s = init_adam(params);
  ad::Gradients g;
  g.emplace(&w, LayerParams(2, 2));
  EXPECT_THROW(adam_step(params, g, s, 0.01), DimensionError);
}

TEST(Clip, RescalesToMaxNorm) {
  LayerParams a(2, 1), b(1, 1);
  ad::Gradients g;
  LayerParams ga = LayerParams::zeros_like(a), gb = LayerParams::zeros_like(b);
  ga.weight << 3, 0;
  gb.bias << 4;
  g.emplace(&a, ga);
  g.emplace(&b, gb);
  EXPECT_DOUBLE_EQ(gradient_norm(g), 5.0);
  EXPECT_DOUBLE_EQ(clip_gradients(g, 1.0), 5.0);
  EXPECT_NEAR(gradient_norm(g), 1.0, 1e-12);
  EXPECT_NEAR(g.at(&a).weight(0, 0), 0.6, 1e-12);
  EXPECT_DOUBLE_EQ(clip_gradients(g, 10.0), gradient_norm(g));
}

TEST(History, CsvFormat) {
  std::vector<EpochRecord> h{{1, 2.5, 0.25, 0.125}, {2, 2.0, 0.5, 0.25}};
  std::ostringstream out;
  write_history_csv(out, h, 42, "nvh");
  const std::string text = out.str();
  EXPECT_EQ(text.rfind("# seed=42", 0), 0u);
  EXPECT_NE(text.find("epoch,loss,val_hr5,val_ndcg5\n1,"), std::string::npos);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 4);
}

class BlockFit : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    const auto b = block_data();
    result_ = new FitResult(fit(b.train, b.side, block_config(200), no_validation()));
  }
  static void TearDownTestSuite() { delete result_; }
  static FitResult* result_;
};

FitResult* BlockFit::result_ = nullptr;

TEST_F(BlockFit, LossHalvesWithin200Epochs) {
  const auto& h = result_->history;
  ASSERT_EQ(h.size(), 200u);
  const double best = std::min_element(h.begin(), h.end(), [](auto& a, auto& c) { return a.loss < c.loss; })->loss;
  EXPECT_LE(best, 0.5 * h.front().loss) << "first " << h.front().loss << " best " << best;
}

TEST_F(BlockFit, SmoothedLossIsNonIncreasing) {
  const auto& h = result_->history;
  std::vector<double> windows;
  for (std::size_t start = 0; start + 10 <= h.size(); start += 10) {
    double s = 0.0;
    for (std::size_t k = start; k < start + 10; ++k) s += h[k].loss;
    windows.push_back(s / 10.0);
  }
  for (std::size_t k = 1; k < windows.size(); ++k) EXPECT_LE(windows[k], windows[k - 1] * 1.01) << "window " << k;
}

TEST_F(BlockFit, FeedbackBitChangesPosterior) {
  const auto b = block_data();
  const auto& p = result_->best;
  std::vector<double> row = vec(b.train.row(0));
  const auto before = model::infer(p, model::Side::User, row_span(b.side.user_features, 0), row);
  row[3] = 1.0 - row[3];
  const auto after = model::infer(p, model::Side::User, row_span(b.side.user_features, 0), row);
  EXPECT_GT((before.mean - after.mean).norm(), 1e-6);
}

TEST(Fit, FixedSeedIsDeterministic) {
  const auto b = block_data();
  const auto c = block_config(3);
  const auto x = fit(b.train, b.side, c, no_validation());
  const auto y = fit(b.train, b.side, c, no_validation());
  ASSERT_EQ(x.history.size(), y.history.size());
  for (std::size_t k = 0; k < x.history.size(); ++k) EXPECT_EQ(x.history[k].loss, y.history[k].loss);
  auto c2 = c;
  c2.seed = 6;
  EXPECT_NE(fit(b.train, b.side, c2, no_validation()).history.back().loss, x.history.back().loss);
}

TEST(Fit, WeightDecayShrinksWeights) {
  const auto b = block_data();
  auto plain = block_config(3);
  auto decayed = plain;
  decayed.weight_decay = 50.0;
  const auto x = fit(b.train, b.side, plain, no_validation()).best;
  const auto y = fit(b.train, b.side, decayed, no_validation()).best;
  double wx = 0.0, wy = 0.0;
  for (const auto* l : x.layers()) wx += l->weight.squaredNorm();
  for (const auto* l : y.layers()) wy += l->weight.squaredNorm();
  EXPECT_LT(wy, 0.9 * wx);
}

TEST(Fit, NegRatioZeroPredictsPositiveEverywhere) {
  const auto b = block_data();
  const auto result = fit(b.train, b.side, block_config(200, 0), no_validation());
  const predict::Scorer scorer(result.best, predict::warm_context(b.train, b.side), 32, 1);
  double sum = 0.0;
  for (const auto& p : b.train.interactions()) sum += scorer.score(p.user, p.item);
  EXPECT_GT(sum / static_cast<double>(b.train.nnz()), 0.9);
}

TEST(Fit, EarlyStoppingKeepsBestEpoch) {
  const auto b = block_data();
  auto c = block_config(20);
  c.patience = 2;
  const std::vector<double> script{0.1, 0.5, 0.3, 0.2, 0.9};
  std::size_t calls = 0;
  FitHooks hooks;
  hooks.validate = [&](const model::ModelParams&) {
    const double v = script[calls++];
    return std::pair{v, v / 2};
  };
  std::vector<Matrix> snapshots;
  hooks.on_epoch = [&](const EpochRecord&, const model::ModelParams& p) { snapshots.push_back(p.interact.output.weight); };
  const auto r = fit(b.train, b.side, c, hooks);
  EXPECT_TRUE(r.early_stopped);
  EXPECT_EQ(r.history.size(), 4u);
  EXPECT_EQ(r.best_epoch, 2u);
  EXPECT_EQ(r.best_val_hr5, 0.5);
  EXPECT_EQ(r.best.interact.output.weight, snapshots[1]);
}

TEST(Fit, DivergenceNamesStep) {
  const auto b = block_data();
  auto c = block_config(5);
  c.learning_rate = 1e200;
  c.clip_norm = 0.0;
  try {
    fit(b.train, b.side, c, no_validation());
    FAIL() << "expected DivergenceError";
  } catch (const DivergenceError& e) {
    EXPECT_NE(std::string(e.what()).find("step"), std::string::npos);
    ASSERT_NE(e.partial(), nullptr);
    EXPECT_GE(e.step(), 1u);
  }
}

TEST(Fit, RequiresValidationHook) {
  const auto b = block_data();
  EXPECT_THROW(fit(b.train, b.side, block_config(1), FitHooks{}), ContractError);
}
