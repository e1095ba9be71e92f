#include "nvhcf/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <ostream>
#include <thread>

#include <fmt/format.h>

#include "nvhcf/errors.hpp"

namespace nvhcf::eval {

double hr_at_k(std::size_t rank, std::size_t k) {
  if (rank == 0) throw ContractError("rank is 1-based");
  return rank <= k ? 1.0 : 0.0;
}

double ndcg_at_k(std::size_t rank, std::size_t k) {
  if (rank == 0) throw ContractError("rank is 1-based");
  return rank <= k ? 1.0 / std::log2(static_cast<double>(rank) + 1.0) : 0.0;
}

namespace {

std::size_t index_of(const std::vector<std::size_t>& ks, std::size_t k) {
  auto it = std::find(ks.begin(), ks.end(), k);
  if (it == ks.end()) throw ContractError(fmt::format("metric report has no k={}", k));
  return static_cast<std::size_t>(it - ks.begin());
}

}  // namespace

double MetricReport::hr_at(std::size_t k) const { return hr[index_of(ks, k)]; }
double MetricReport::ndcg_at(std::size_t k) const { return ndcg[index_of(ks, k)]; }

void write_csv(std::ostream& out, std::span<const MetricReport> reports, bool header) {
  if (header) out << "label,k,hr,ndcg,cases,seed,fingerprint\n";
  for (const auto& r : reports)
    for (std::size_t i = 0; i < r.ks.size(); ++i)
      out << fmt::format("{},{},{:.6f},{:.6f},{},{},{:016x}\n", r.label, r.ks[i], r.hr[i], r.ndcg[i], r.cases, r.seed,
                         r.fingerprint);
}

void print_table(std::ostream& out, std::span<const MetricReport> reports) {
  std::size_t width = 5;
  for (const auto& r : reports) width = std::max(width, r.label.size());
  for (const auto& r : reports) {
    out << fmt::format("{:<{}}  cases={:<5}", r.label, width, r.cases);
    for (std::size_t i = 0; i < r.ks.size(); ++i)
      out << fmt::format("  HR@{}={:.4f} NDCG@{}={:.4f}", r.ks[i], r.hr[i], r.ks[i], r.ndcg[i]);
    out << '\n';
  }
}

std::size_t target_rank(std::span<const data::ItemId> candidates, std::span<const double> scores) {
  if (candidates.empty() || candidates.size() != scores.size())
    throw DimensionError("target_rank: candidates and scores must be non-empty and equally long");
  std::size_t rank = 1;
  for (std::size_t c = 1; c < candidates.size(); ++c)
    if (scores[c] > scores[0] || (scores[c] == scores[0] && candidates[c] < candidates[0])) ++rank;
  return rank;
}

MetricReport evaluate_with(std::span<const data::EvalCase> cases, const CaseScorer& scorer, const EvalOptions& options) {
  if (cases.empty()) throw ContractError("evaluation needs at least one case");
  if (options.ks.empty()) throw ContractError("evaluation needs at least one cutoff k");
  std::vector<std::size_t> ranks(cases.size(), 0);

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    std::vector<data::ItemId> candidates;
    for (std::size_t i = next++; i < cases.size(); i = next++) {
      try {
        const auto& c = cases[i];
        candidates.assign(1, c.held_out_item);
        candidates.insert(candidates.end(), c.negatives.begin(), c.negatives.end());
        const auto scores = scorer(c, candidates);
        ranks[i] = target_rank(candidates, scores);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = cases.size();
      }
    }
  };
  std::size_t threads = options.threads != 0 ? options.threads : std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, cases.size());
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);

  MetricReport report;
  report.ks = options.ks;
  report.cases = cases.size();
  report.seed = options.seed;
  for (std::size_t k : options.ks) {
    double hr = 0.0;
    double ndcg = 0.0;
    for (std::size_t r : ranks) {
      hr += hr_at_k(r, k);
      ndcg += ndcg_at_k(r, k);
    }
    report.hr.push_back(hr / static_cast<double>(cases.size()));
    report.ndcg.push_back(ndcg / static_cast<double>(cases.size()));
  }
  return report;
}

MetricReport evaluate(const model::ModelParams& params, const predict::ScoringContext& context,
                      std::span<const data::EvalCase> cases, const EvalOptions& options) {
  const predict::Scorer scorer(params, context, options.samples, options.seed);
  auto report = evaluate_with(
      cases, [&](const data::EvalCase& c, std::span<const data::ItemId> items) { return scorer.score(c.user, items); },
      options);
  report.label = model::variant_name(params.variant);
  return report;
}

ColdReport evaluate_cold(const model::ModelParams& params, const data::ColdSplit& split, const data::SideInfo& side,
                         data::ColdMode mode, const EvalOptions& options, bool validation) {
  if (mode != split.mode)
    throw ContractError(fmt::format("cold evaluation mode '{}' does not match split mode '{}'", data::to_string(mode),
                                    data::to_string(split.mode)));
  const auto& cases = validation ? split.validation_cases : split.test_cases;
  std::vector<data::EvalCase> cold;
  std::vector<data::EvalCase> warm;
  for (const auto& c : cases) {
    const bool is_cold = split.is_cold_user(c.user) || split.is_cold_item(c.held_out_item);
    (is_cold ? cold : warm).push_back(c);
  }
  const predict::Scorer scorer(params, predict::cold_context(split, side), options.samples, options.seed);
  const CaseScorer fn = [&](const data::EvalCase& c, std::span<const data::ItemId> items) {
    return scorer.score(c.user, items);
  };
  const std::string name = model::variant_name(params.variant);
  ColdReport out;
  out.all = evaluate_with(cases, fn, options);
  out.all.label = name + "/all";
  if (!cold.empty()) {
    out.cold = evaluate_with(cold, fn, options);
    out.cold.label = name + "/cold-" + std::string(data::to_string(mode));
  }
  if (!warm.empty()) {
    out.warm = evaluate_with(warm, fn, options);
    out.warm.label = name + "/warm";
  }
  return out;
}

CaseScorer random_scorer(std::uint64_t seed) {
  return [seed](const data::EvalCase& c, std::span<const data::ItemId> items) {
    Rng rng = Rng::derive(seed, {0x72616e64ULL, c.user, c.held_out_item});
    std::vector<double> scores(items.size());
    for (double& s : scores) s = rng.uniform();
    return scores;
  };
}

CaseScorer oracle_scorer() {
  return [](const data::EvalCase& c, std::span<const data::ItemId> items) {
    std::vector<double> scores(items.size(), 0.0);
    for (std::size_t i = 0; i < items.size(); ++i)
      if (items[i] == c.held_out_item) scores[i] = 1.0;
    return scores;
  };
}

}  // namespace nvhcf::eval
