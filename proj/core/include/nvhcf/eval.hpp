#pragma once

// Leave-one-out ranking metrics: each case ranks its held-out item among the
// held-out item plus its sampled negatives.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "nvhcf/data.hpp"
#include "nvhcf/model.hpp"
#include "nvhcf/predict.hpp"

namespace nvhcf::eval {

// 1 iff rank <= k (rank is 1-based).
double hr_at_k(std::size_t rank, std::size_t k);
// 1 / log2(rank + 1) iff rank <= k, else 0.
double ndcg_at_k(std::size_t rank, std::size_t k);

struct MetricReport {
  std::string label;
  std::vector<std::size_t> ks;
  std::vector<double> hr;    // parallel to ks
  std::vector<double> ndcg;  // parallel to ks
  std::size_t cases = 0;
  std::uint64_t seed = 0;
  std::uint64_t fingerprint = 0;

  double hr_at(std::size_t k) const;
  double ndcg_at(std::size_t k) const;
};

// CSV header `label,k,hr,ndcg,cases,seed,fingerprint`, one row per k.
void write_csv(std::ostream& out, std::span<const MetricReport> reports, bool header = true);
void print_table(std::ostream& out, std::span<const MetricReport> reports);

// Scores for case.held_out_item followed by case.negatives, in that order.
using CaseScorer = std::function<std::vector<double>(const data::EvalCase& c, std::span<const data::ItemId> candidates)>;

struct EvalOptions {
  std::vector<std::size_t> ks{5, 10};
  std::size_t samples = predict::kDefaultSamples;
  std::uint64_t seed = 0;
  // 0 uses std::thread::hardware_concurrency().
  std::size_t threads = 0;
};

// 1-based rank of the held-out item (candidate 0) under the tie rule.
std::size_t target_rank(std::span<const data::ItemId> candidates, std::span<const double> scores);

// Generic protocol driver; scorer must be safe to call concurrently. Results
// are reduced in case order, so they do not depend on the thread count.
MetricReport evaluate_with(std::span<const data::EvalCase> cases, const CaseScorer& scorer, const EvalOptions& options);

MetricReport evaluate(const model::ModelParams& params, const predict::ScoringContext& context,
                      std::span<const data::EvalCase> cases, const EvalOptions& options = {});

struct ColdReport {
  MetricReport all;
  MetricReport cold;  // cases whose user (item) id is a fresh cold id
  MetricReport warm;  // the remaining cases
};

// Evaluates split.test_cases (or validation_cases) with cold ids scored from
// the side-information prior. Throws ContractError if mode != split.mode.
ColdReport evaluate_cold(const model::ModelParams& params, const data::ColdSplit& split, const data::SideInfo& side,
                         data::ColdMode mode, const EvalOptions& options = {}, bool validation = false);

// Uniform scores in (0, 1), seeded per case.
CaseScorer random_scorer(std::uint64_t seed);
// Held-out item scored 1, negatives 0.
CaseScorer oracle_scorer();

}  // namespace nvhcf::eval
