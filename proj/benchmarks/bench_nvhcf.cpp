#include <benchmark/benchmark.h>

#include <vector>

#include "nvhcf/data.hpp"
#include "nvhcf/model.hpp"
#include "nvhcf/predict.hpp"
#include "nvhcf/train.hpp"

using namespace nvhcf;

namespace {

// Random implicit-feedback matrix and dense side information with ML-100K shapes.
struct Fixture {
  data::InteractionMatrix train;
  data::SideInfo side;

  Fixture() {
    constexpr std::size_t users = 943, items = 1682, per_user = 57;
    Rng rng(1);
    std::vector<data::Interaction> pos;
    for (data::UserId u = 0; u < users; ++u)
      for (std::size_t k = 0; k < per_user; ++k)
        pos.push_back({u, static_cast<data::ItemId>(rng.below(items)), static_cast<std::int64_t>(k)});
    train = data::InteractionMatrix(users, items, pos);
    side.user_features = data::Matrix::Zero(users, 40);
    side.item_features = data::Matrix::Zero(items, 537);
    for (Eigen::Index u = 0; u < side.user_features.rows(); ++u) side.user_features(u, u % 40) = 1.0;
    for (Eigen::Index j = 0; j < side.item_features.rows(); ++j) side.item_features(j, j % 537) = 1.0;
  }
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

model::ModelParams params_for(std::size_t latent) {
  const auto& f = fixture();
  return model::init_model(train::dims_for(f.train, f.side, latent), model::Widths{}, model::Variant{}, 3);
}

void BM_MinibatchLossAndGradient(benchmark::State& state) {
  const auto& f = fixture();
  const auto latent = static_cast<std::size_t>(state.range(0));
  const auto params = params_for(latent);
  Rng rng(5);
  const auto pairs = data::sample_minibatch(f.train, 21, 5, rng);
  const auto noise = model::draw_noise(pairs.size(), 1, latent, rng);
  autodiff::Gradients grads;
  for (auto _ : state) {
    autodiff::Tape tape;
    const auto terms = train::minibatch_loss(tape, params, f.train, f.side, pairs, noise);
    benchmark::DoNotOptimize(tape.backward(terms.loss, grads));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(pairs.size()));
}
BENCHMARK(BM_MinibatchLossAndGradient)->Arg(32)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_SampleMinibatch(benchmark::State& state) {
  const auto& f = fixture();
  Rng rng(7);
  for (auto _ : state) benchmark::DoNotOptimize(data::sample_minibatch(f.train, 21, 5, rng));
}
BENCHMARK(BM_SampleMinibatch);

void BM_ScorerConstruction(benchmark::State& state) {
  const auto& f = fixture();
  const auto params = params_for(128);
  for (auto _ : state) {
    predict::Scorer scorer(params, predict::warm_context(f.train, f.side));
    benchmark::DoNotOptimize(scorer.users());
  }
}
BENCHMARK(BM_ScorerConstruction)->Unit(benchmark::kMillisecond);

// One leave-one-out case: 100 candidates at S samples each.
void BM_ScoreCase(benchmark::State& state) {
  const auto& f = fixture();
  const auto params = params_for(128);
  const predict::Scorer scorer(params, predict::warm_context(f.train, f.side),
                               static_cast<std::size_t>(state.range(0)));
  std::vector<data::ItemId> candidates(100);
  for (data::ItemId j = 0; j < 100; ++j) candidates[j] = j * 13;
  data::UserId u = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(scorer.score(u, candidates));
    u = (u + 1) % 943;
  }
}
BENCHMARK(BM_ScoreCase)->Arg(32)->Arg(128)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
