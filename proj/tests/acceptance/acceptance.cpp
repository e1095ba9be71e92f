// Acceptance suite: one line per criterion, exit status 0 iff every selected
// criterion passes.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "nvhcf/eval.hpp"
#include "nvhcf/experiments.hpp"
#include "nvhcf/model.hpp"
#include "nvhcf/predict.hpp"
#include "nvhcf/train.hpp"
#include "support.hpp"

using namespace nvhcf;

namespace {

// Tolerances.
constexpr double kGradRelTol = 1e-4;
constexpr double kKlSeMultiple = 3.0;
constexpr double kOverfitPositiveMin = 0.9;
constexpr double kOverfitNegativeMax = 0.5;
constexpr double kCalibrationSeMultiple = 3.0;
constexpr double kWarmHr5Min = 0.46;
constexpr double kWarmNdcg5Min = 0.30;
constexpr double kColdRandomMultiple = 2.0;

// Sizes and budgets.
constexpr std::size_t kGradUsers = 20, kGradItems = 30, kGradLatent = 8;
constexpr std::size_t kKlPairs = 100, kKlDim = 16, kKlSamples = 1'000'000;
constexpr std::size_t kOverfitMaxEpochs = 500, kOverfitCheckEvery = 10;
// ~2 hours of training at the default configuration on one core.
constexpr std::size_t kWarmMaxEpochs = 30;
// Directional comparisons (criteria 6-8) use shorter runs.
constexpr std::size_t kShortStepsPerEpoch = 500, kShortMaxEpochs = 10, kShortPatience = 3;
constexpr std::uint64_t kSeeds[] = {1, 2, 3};

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string name;
  std::function<Outcome()> run;
};

const data::PreparedDataset& ml100k() { return nvhcf::testing::ml100k(); }

void require_ml100k() {
  if (!nvhcf::testing::have_ml100k())
    throw std::runtime_error("ML-100K not found at " + nvhcf::testing::ml100k_dir().string() +
                             " (set NVHCF_ML100K_DIR)");
}

// ------------------------------------------------------------------ 1

Outcome gradient_check() {
  Rng rng(101);
  std::vector<data::Interaction> pos;
  for (data::UserId u = 0; u < kGradUsers; ++u)
    for (data::ItemId j = 0; j < kGradItems; ++j)
      if (rng.uniform() < 0.3) pos.push_back({u, j, 0});
  const data::InteractionMatrix r(kGradUsers, kGradItems, pos);
  data::SideInfo side;
  side.user_features = rng.normal_matrix(kGradUsers, 5);
  side.item_features = rng.normal_matrix(kGradItems, 6);
  auto params = model::init_model(train::dims_for(r, side, kGradLatent), model::Widths{}, model::Variant{}, 102);
  const auto pairs = data::sample_minibatch(r, 8, 3, rng);
  const auto noise = model::draw_noise(pairs.size(), 1, kGradLatent, rng);
  auto f = [&](autodiff::Tape& t) { return train::minibatch_loss(t, params, r, side, pairs, noise).loss; };
  autodiff::FiniteDiffOptions opts;
  opts.max_per_tensor = 8;
  opts.seed = 103;
  const auto rep = autodiff::finite_diff_check(f, params.layers(), opts);
  return {rep.max_rel_error < kGradRelTol,
          fmt::format("max relative error {:.2e} over {} coordinates (tolerance {:.0e})", rep.max_rel_error,
                      rep.coordinates, kGradRelTol)};
}

// ------------------------------------------------------------------ 2

Outcome kl_oracle() {
  Rng rng(201);
  std::size_t outside = 0, negative = 0;
  double worst_z = 0.0;
  for (std::size_t pair = 0; pair < kKlPairs; ++pair) {
    model::DiagGaussian q{model::Vector(kKlDim), model::Vector(kKlDim)};
    model::DiagGaussian p{model::Vector(kKlDim), model::Vector(kKlDim)};
    for (Eigen::Index d = 0; d < static_cast<Eigen::Index>(kKlDim); ++d) {
      q.mean[d] = rng.normal();
      p.mean[d] = rng.normal();
      q.log_var[d] = 2.0 * rng.uniform() - 1.0;
      p.log_var[d] = 2.0 * rng.uniform() - 1.0;
    }
    const double kl = model::kl_diag(q, p);
    if (kl < 0.0) ++negative;
    const model::Vector q_sd = (0.5 * q.log_var.array()).exp();
    const model::Vector p_var = p.log_var.array().exp();
    // log q(z) - log p(z) for z ~ q, accumulated in Welford form.
    double mean = 0.0, m2 = 0.0;
    for (std::size_t s = 0; s < kKlSamples; ++s) {
      double diff = 0.0;
      for (Eigen::Index d = 0; d < static_cast<Eigen::Index>(kKlDim); ++d) {
        const double eps = rng.normal();
        const double z = q.mean[d] + q_sd[d] * eps;
        const double dp = z - p.mean[d];
        diff += -0.5 * (q.log_var[d] + eps * eps) + 0.5 * (p.log_var[d] + dp * dp / p_var[d]);
      }
      const double delta = diff - mean;
      mean += delta / static_cast<double>(s + 1);
      m2 += delta * (diff - mean);
    }
    const double se = std::sqrt(m2 / static_cast<double>(kKlSamples - 1) / static_cast<double>(kKlSamples));
    const double z = std::abs(kl - mean) / se;
    worst_z = std::max(worst_z, z);
    if (z > kKlSeMultiple) ++outside;
  }
  return {outside == 0 && negative == 0,
          fmt::format("{} of {} pairs outside {} SE (worst {:.2f} SE), {} negative", outside, kKlPairs, kKlSeMultiple,
                      worst_z, negative)};
}

// ------------------------------------------------------------------ 3

struct OverfitDone {
  std::size_t epoch;
  double positive, negative;
};

std::pair<double, double> block_means(const model::ModelParams& p, const nvhcf::testing::BlockData& b) {
  const predict::Scorer scorer(p, predict::warm_context(b.train, b.side));
  double pos = 0.0, neg = 0.0;
  for (const auto& x : b.train.interactions()) pos += scorer.score(x.user, x.item);
  for (const auto& x : b.cross_block) neg += scorer.score(x.user, x.item);
  return {pos / static_cast<double>(b.train.nnz()), neg / static_cast<double>(b.cross_block.size())};
}

Outcome overfit() {
  const auto b = nvhcf::testing::block_data(kGradUsers, kGradItems);
  train::TrainConfig c;
  c.latent_dim = kGradLatent;
  c.max_epochs = kOverfitMaxEpochs;
  c.patience = 0;
  train::FitHooks hooks;
  hooks.validate = [calls = 0.0](const model::ModelParams&) mutable { return std::pair{calls += 1.0, 0.0}; };
  double last_pos = 0.0, last_neg = 1.0;
  hooks.on_epoch = [&](const train::EpochRecord& rec, const model::ModelParams& p) {
    if (rec.epoch % kOverfitCheckEvery != 0) return;
    std::tie(last_pos, last_neg) = block_means(p, b);
    if (last_pos > kOverfitPositiveMin && last_neg < kOverfitNegativeMax)
      throw OverfitDone{rec.epoch, last_pos, last_neg};
  };
  try {
    train::fit(b.train, b.side, c, hooks);
  } catch (const OverfitDone& done) {
    return {true, fmt::format("epoch {}: mean p(positive) {:.3f} > {}, mean p(cross-block) {:.3f} < {}", done.epoch,
                              done.positive, kOverfitPositiveMin, done.negative, kOverfitNegativeMax)};
  }
  return {false, fmt::format("after {} epochs: mean p(positive) {:.3f}, mean p(cross-block) {:.3f}",
                             kOverfitMaxEpochs, last_pos, last_neg)};
}

// ------------------------------------------------------------------ 4

Outcome calibration() {
  require_ml100k();
  const auto& cases = ml100k().test;
  const auto random = eval::evaluate_with(cases, eval::random_scorer(401), {});
  const auto oracle = eval::evaluate_with(cases, eval::oracle_scorer(), {});
  const double n = static_cast<double>(cases.size());
  bool pass = oracle.hr_at(5) == 1.0 && oracle.hr_at(10) == 1.0 && oracle.ndcg_at(5) == 1.0 && oracle.ndcg_at(10) == 1.0;
  std::string detail;
  for (std::size_t k : {5u, 10u}) {
    const double p = static_cast<double>(k) / 100.0;
    const double se = std::sqrt(p * (1.0 - p) / n);
    const double z = (random.hr_at(k) - p) / se;
    pass = pass && std::abs(z) <= kCalibrationSeMultiple;
    detail += fmt::format("random HR@{} {:.4f} ({:+.2f} SE); ", k, random.hr_at(k), z);
  }
  detail += fmt::format("oracle HR@5/10 {}/{} NDCG@5/10 {}/{} over {} cases", oracle.hr_at(5), oracle.hr_at(10),
                        oracle.ndcg_at(5), oracle.ndcg_at(10), cases.size());
  return {pass, detail};
}

// ------------------------------------------------------------------ 5

Outcome warm_reproduction() {
  require_ml100k();
  train::TrainConfig c;
  c.max_epochs = kWarmMaxEpochs;
  const auto run = eval::train_and_evaluate(ml100k(), c, {});
  const double hr = run.test.hr_at(5), ndcg = run.test.ndcg_at(5);
  return {hr >= kWarmHr5Min && ndcg >= kWarmNdcg5Min,
          fmt::format("HR@5 {:.4f} (min {}), NDCG@5 {:.4f} (min {}); {} epochs, best epoch {}", hr, kWarmHr5Min, ndcg,
                      kWarmNdcg5Min, run.fit.history.size(), run.fit.best_epoch)};
}

// ------------------------------------------------------------------ 6-8

train::TrainConfig short_config(std::uint64_t seed) {
  train::TrainConfig c;
  c.seed = seed;
  c.steps_per_epoch = kShortStepsPerEpoch;
  c.max_epochs = kShortMaxEpochs;
  c.patience = kShortPatience;
  return c;
}

eval::EvalOptions seeded(std::uint64_t seed) {
  eval::EvalOptions o;
  o.seed = seed;
  return o;
}

Outcome ablation_ordering() {
  require_ml100k();
  std::size_t wins = 0;
  std::string detail;
  for (std::uint64_t seed : kSeeds) {
    auto full = short_config(seed);
    auto none = short_config(seed);
    none.variant = model::parse_variant("nvh-n");
    const double hr_full = eval::train_and_evaluate(ml100k(), full, seeded(seed)).test.hr_at(10);
    const double hr_none = eval::train_and_evaluate(ml100k(), none, seeded(seed)).test.hr_at(10);
    wins += hr_full > hr_none ? 1 : 0;
    detail += fmt::format("seed {}: NVH {:.4f} vs NVH-n {:.4f}; ", seed, hr_full, hr_none);
  }
  detail += fmt::format("HR@10 wins {}/{}", wins, std::size(kSeeds));
  return {2 * wins > std::size(kSeeds), detail};
}

// Expected NDCG@k of a uniformly random ranking, averaged over cases.
double random_ndcg(std::span<const data::EvalCase> cases, std::size_t k) {
  double total = 0.0;
  for (const auto& c : cases) {
    const std::size_t n = c.negatives.size() + 1;
    double sum = 0.0;
    for (std::size_t r = 1; r <= std::min(k, n); ++r) sum += eval::ndcg_at_k(r, k);
    total += sum / static_cast<double>(n);
  }
  return total / static_cast<double>(cases.size());
}

Outcome cold_start() {
  require_ml100k();
  const auto& ds = ml100k();
  const std::uint64_t seed = kSeeds[0];
  auto full = short_config(seed);
  auto none = short_config(seed);
  none.variant = model::parse_variant("nvh-n");
  const auto run_full = eval::train_and_evaluate_cold(ds, data::ColdMode::User, full, seeded(seed));
  const auto run_none = eval::train_and_evaluate_cold(ds, data::ColdMode::User, none, seeded(seed));
  std::vector<data::EvalCase> cold_cases;
  for (const auto& c : ds.cold_user.test_cases)
    if (ds.cold_user.is_cold_user(c.user)) cold_cases.push_back(c);
  const double random = random_ndcg(cold_cases, 5);
  const double nvh = run_full.test.cold.ndcg_at(5), nvh_n = run_none.test.cold.ndcg_at(5);
  return {nvh > nvh_n && nvh >= kColdRandomMultiple * random,
          fmt::format("cold-user NDCG@5: NVH {:.4f}, NVH-n {:.4f}, random {:.4f} (need NVH > NVH-n and >= {:.4f}); {} "
                      "cold cases",
                      nvh, nvh_n, random, kColdRandomMultiple * random, run_full.test.cold.cases)};
}

Outcome negative_ratio_shape() {
  require_ml100k();
  std::size_t wins = 0;
  std::string detail;
  for (std::uint64_t seed : kSeeds) {
    const auto six = train::TrainConfig(eval::with_param(short_config(seed), eval::SweepParam::NegRatio, 6));
    const auto two = train::TrainConfig(eval::with_param(short_config(seed), eval::SweepParam::NegRatio, 2));
    const double hr6 = eval::train_and_evaluate(ml100k(), six, seeded(seed)).test.hr_at(5);
    const double hr2 = eval::train_and_evaluate(ml100k(), two, seeded(seed)).test.hr_at(5);
    wins += hr6 >= hr2 ? 1 : 0;
    detail += fmt::format("seed {}: ratio 6 {:.4f} vs ratio 2 {:.4f}; ", seed, hr6, hr2);
  }
  detail += fmt::format("HR@5 wins {}/{}", wins, std::size(kSeeds));
  return {2 * wins > std::size(kSeeds), detail};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria{
      {1, "gradient check", gradient_check},
      {2, "KL oracle", kl_oracle},
      {3, "overfit oracle", overfit},
      {4, "metric calibration", calibration},
      {5, "ML-100K warm HR@5/NDCG@5", warm_reproduction},
      {6, "ablation ordering", ablation_ordering},
      {7, "cold-user sanity", cold_start},
      {8, "negative-ratio sweep shape", negative_ratio_shape},
  };

  CLI::App app{"Acceptance criteria"};
  std::vector<int> only;
  app.add_option("--only", only, "Criterion ids to run (default: all)")->delimiter(',')->check(CLI::Range(1, 8));
  std::string log_level = "warn";
  app.add_option("--log-level", log_level, "Library log verbosity")->capture_default_str();
  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(spdlog::level::from_str(log_level));
  const std::set<int> selected(only.begin(), only.end());

  std::size_t failed = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.contains(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failed += o.pass ? 0 : 1;
    std::cout << fmt::format("[{}] {} {}: {} ({:.1f} s)", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail, secs)
              << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
