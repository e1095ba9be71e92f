#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "nvhcf/errors.hpp"
#include "nvhcf/eval.hpp"
#include "nvhcf/experiments.hpp"
#include "support.hpp"

using namespace nvhcf;
using namespace nvhcf::eval;
using nvhcf::testing::block_data;
using nvhcf::testing::small_widths;

namespace {

data::EvalCase make_case(data::UserId u, data::ItemId target, std::vector<data::ItemId> negatives) {
  data::EvalCase c;
  c.user = u;
  c.held_out_item = target;
  c.negatives = std::move(negatives);
  return c;
}

// Case scorer giving the target a fixed rank: candidate k scores -k, the target
// is moved to position rank-1.
CaseScorer fixed_rank(std::size_t rank) {
  return [rank](const data::EvalCase&, std::span<const data::ItemId> items) {
    std::vector<double> s(items.size());
    for (std::size_t k = 1; k < items.size(); ++k) s[k] = -static_cast<double>(k < rank ? k : k + 1);
    s[0] = -static_cast<double>(rank);
    return s;
  };
}

std::vector<data::EvalCase> synthetic_cases(std::size_t n) {
  std::vector<data::EvalCase> cases;
  for (std::size_t u = 0; u < n; ++u) {
    std::vector<data::ItemId> neg;
    for (data::ItemId j = 1; j <= 99; ++j) neg.push_back(j);
    cases.push_back(make_case(static_cast<data::UserId>(u), 0, neg));
  }
  return cases;
}

data::PreparedDataset block_dataset() {
  auto b = block_data(20, 30);
  data::PreparedDataset ds;
  ds.name = "blocks";
  ds.full = b.train;
  ds.side = b.side;
  auto loo = data::leave_one_out_split(b.train, 1);
  auto inner = data::leave_one_out_split(loo.train, 2, &b.train);
  ds.train = inner.train;
  ds.validation = inner.cases;
  ds.test = loo.cases;
  return ds;
}

train::TrainConfig tiny_config() {
  train::TrainConfig c;
  c.latent_dim = 4;
  c.widths = small_widths();
  c.max_epochs = 2;
  c.steps_per_epoch = 3;
  c.patience = 0;
  c.eval_samples = 8;
  c.validation_samples = 4;
  return c;
}

}  // namespace

TEST(Metrics, HitRatioExamples) {
  EXPECT_EQ(hr_at_k(1, 5), 1.0);
  EXPECT_EQ(hr_at_k(5, 5), 1.0);
  EXPECT_EQ(hr_at_k(6, 5), 0.0);
  EXPECT_EQ(hr_at_k(10, 10), 1.0);
  EXPECT_THROW(hr_at_k(0, 5), ContractError);
}

TEST(Metrics, NdcgExamples) {
  EXPECT_DOUBLE_EQ(ndcg_at_k(1, 5), 1.0);
  EXPECT_DOUBLE_EQ(ndcg_at_k(3, 5), 0.5);
  EXPECT_DOUBLE_EQ(ndcg_at_k(2, 5), 1.0 / std::log2(3.0));
  EXPECT_EQ(ndcg_at_k(7, 5), 0.0);
  EXPECT_THROW(ndcg_at_k(0, 5), ContractError);
}

TEST(Metrics, NdcgNeverExceedsHitRatioAndBothGrowWithK) {
  for (std::size_t rank = 1; rank <= 100; ++rank) {
    for (std::size_t k = 1; k < 100; ++k) {
      EXPECT_LE(ndcg_at_k(rank, k), hr_at_k(rank, k));
      EXPECT_LE(hr_at_k(rank, k), hr_at_k(rank, k + 1));
      EXPECT_LE(ndcg_at_k(rank, k), ndcg_at_k(rank, k + 1));
    }
  }
}

TEST(TargetRank, TiesGoToLowerItemId) {
  const std::vector<data::ItemId> items{5, 3, 9};
  EXPECT_EQ(target_rank(items, std::vector<double>{0.5, 0.5, 0.5}), 2u);
  const std::vector<data::ItemId> first{1, 3, 9};
  EXPECT_EQ(target_rank(first, std::vector<double>{0.5, 0.5, 0.5}), 1u);
  EXPECT_EQ(target_rank(items, std::vector<double>{0.1, 0.9, 0.2}), 3u);
  EXPECT_THROW(target_rank(items, std::vector<double>{0.1}), DimensionError);
}

TEST(EvaluateWith, FixedRankGivesExactMetrics) {
  const auto cases = synthetic_cases(10);
  EvalOptions o;
  o.ks = {1, 3, 5};
  const auto r = evaluate_with(cases, fixed_rank(3), o);
  EXPECT_EQ(r.cases, 10u);
  EXPECT_EQ(r.hr_at(1), 0.0);
  EXPECT_EQ(r.hr_at(3), 1.0);
  EXPECT_DOUBLE_EQ(r.ndcg_at(3), 0.5);
  EXPECT_DOUBLE_EQ(r.ndcg_at(5), 0.5);
  EXPECT_THROW(r.hr_at(10), ContractError);
}

TEST(EvaluateWith, OracleIsPerfect) {
  const auto r = evaluate_with(synthetic_cases(50), oracle_scorer(), {});
  EXPECT_EQ(r.hr_at(5), 1.0);
  EXPECT_EQ(r.ndcg_at(5), 1.0);
  EXPECT_EQ(r.hr_at(10), 1.0);
  EXPECT_EQ(r.ndcg_at(10), 1.0);
}

TEST(EvaluateWith, RandomScorerMatchesChance) {
  const auto cases = synthetic_cases(4000);
  const auto r = evaluate_with(cases, random_scorer(7), {});
  for (std::size_t k : {5u, 10u}) {
    const double p = static_cast<double>(k) / 100.0;
    const double se = std::sqrt(p * (1.0 - p) / static_cast<double>(cases.size()));
    EXPECT_NEAR(r.hr_at(k), p, 3.0 * se) << "k=" << k;
  }
}

TEST(EvaluateWith, ThreadCountDoesNotChangeResults) {
  const auto cases = synthetic_cases(300);
  EvalOptions one;
  one.threads = 1;
  EvalOptions four;
  four.threads = 4;
  const auto a = evaluate_with(cases, random_scorer(3), one);
  const auto b = evaluate_with(cases, random_scorer(3), four);
  const auto c = evaluate_with(cases, random_scorer(3), four);
  EXPECT_EQ(a.hr, b.hr);
  EXPECT_EQ(a.ndcg, b.ndcg);
  EXPECT_EQ(b.hr, c.hr);
  EXPECT_EQ(b.ndcg, c.ndcg);
}

TEST(EvaluateWith, RejectsEmptyInput) {
  EXPECT_THROW(evaluate_with({}, oracle_scorer(), {}), ContractError);
  EvalOptions no_k;
  no_k.ks.clear();
  EXPECT_THROW(evaluate_with(synthetic_cases(2), oracle_scorer(), no_k), ContractError);
}

TEST(EvaluateCold, ModeMismatchIsRejected) {
  const auto b = block_data();
  const auto split = data::split_train_val_test(b.train, 3);
  const auto params =
      model::init_model(train::dims_for(split.train, b.side, 4), small_widths(), model::Variant{}, 1);
  EXPECT_THROW(evaluate_cold(params, split, b.side, data::ColdMode::User), ContractError);
}

TEST(EvaluateCold, WithoutColdEntitiesReducesToWarmEvaluation) {
  const auto b = block_data();
  const auto split = data::split_train_val_test(b.train, 3);
  const auto params =
      model::init_model(train::dims_for(split.train, b.side, 4), small_widths(), model::Variant{}, 1);
  EvalOptions o;
  o.samples = 16;
  o.seed = 5;
  const auto cold = evaluate_cold(params, split, b.side, data::ColdMode::None, o);
  const auto warm = evaluate(params, predict::warm_context(split.train, b.side), split.test_cases, o);
  EXPECT_EQ(cold.all.hr, warm.hr);
  EXPECT_EQ(cold.all.ndcg, warm.ndcg);
  EXPECT_EQ(cold.cold.cases, 0u);
  EXPECT_EQ(cold.warm.cases, warm.cases);
}

TEST(EvaluateCold, SplitsColdAndWarmCases) {
  const auto b = block_data();
  const auto split = data::make_cold_split(b.train, b.side, 0.5, data::ColdMode::User, 4);
  const auto params =
      model::init_model(train::dims_for(split.train, b.side, 4), small_widths(), model::Variant{}, 1);
  EvalOptions o;
  o.samples = 8;
  const auto r = evaluate_cold(params, split, b.side, data::ColdMode::User, o);
  EXPECT_EQ(r.all.cases, split.test_cases.size());
  EXPECT_EQ(r.cold.cases + r.warm.cases, r.all.cases);
  EXPECT_GT(r.cold.cases, 0u);
  EXPECT_NE(r.cold.label.find("cold-user"), std::string::npos);
}

TEST(Report, CsvFormat) {
  MetricReport r;
  r.label = "nvh";
  r.ks = {5, 10};
  r.hr = {0.5, 0.75};
  r.ndcg = {0.25, 0.3};
  r.cases = 4;
  r.seed = 9;
  r.fingerprint = 0xabc;
  std::ostringstream out;
  write_csv(out, std::span<const MetricReport>(&r, 1));
  EXPECT_EQ(out.str(),
            "label,k,hr,ndcg,cases,seed,fingerprint\n"
            "nvh,5,0.500000,0.250000,4,9,0000000000000abc\n"
            "nvh,10,0.750000,0.300000,4,9,0000000000000abc\n");
  std::ostringstream table;
  print_table(table, std::span<const MetricReport>(&r, 1));
  EXPECT_NE(table.str().find("nvh"), std::string::npos);
  EXPECT_NE(table.str().find("0.7500"), std::string::npos);
}

TEST(Experiments, AblationsTrainEveryVariantInOrder) {
  const auto ds = block_dataset();
  EvalOptions o;
  o.samples = 8;
  const auto reports = compare_ablations(ds, tiny_config(), o);
  ASSERT_EQ(reports.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(reports[i].label, kAblationVariants[i]);
    EXPECT_EQ(reports[i].cases, ds.test.size());
  }
}

TEST(Experiments, SweepRecordsFailuresAndContinues) {
  const auto ds = block_dataset();
  EvalOptions o;
  o.samples = 8;
  const std::vector<std::size_t> dims{2, 0, 4};
  const std::vector<std::uint64_t> seeds{1};
  const auto points = sweep(ds, tiny_config(), SweepParam::Dim, dims, seeds, o, 2);
  ASSERT_EQ(points.size(), 3u);
  EXPECT_TRUE(points[0].ok);
  EXPECT_FALSE(points[1].ok);
  EXPECT_FALSE(points[1].error.empty());
  EXPECT_TRUE(points[2].ok);
  std::ostringstream out;
  write_sweep_csv(out, points);
  EXPECT_NE(out.str().find("dim,0,1,failed"), std::string::npos);
  EXPECT_NE(out.str().find("dim,4,1,ok,5,"), std::string::npos);
}

TEST(Experiments, SweepParameterNames) {
  EXPECT_EQ(parse_sweep_param("neg_ratio"), SweepParam::NegRatio);
  EXPECT_EQ(parse_sweep_param("dim"), SweepParam::Dim);
  EXPECT_THROW(parse_sweep_param("lr"), ContractError);
  EXPECT_EQ(with_param({}, SweepParam::NegRatio, 2).positives_per_batch(), 42u);
}
