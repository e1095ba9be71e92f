#pragma once

// Multi-run protocols: variant ablations and single-parameter sweeps over a
// prepared dataset. Every run shares the dataset's splits.

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nvhcf/data.hpp"
#include "nvhcf/eval.hpp"
#include "nvhcf/train.hpp"

namespace nvhcf::eval {

// Trains on the warm leave-one-out split and evaluates the test cases.
struct WarmRun {
  train::FitResult fit;
  MetricReport test;
};

WarmRun train_and_evaluate(const data::PreparedDataset& ds, const train::TrainConfig& config,
                           const EvalOptions& options);

// Trains on a cold split's training matrix (validation on its validation cases)
// and evaluates its test cases.
struct ColdRun {
  train::FitResult fit;
  ColdReport test;
};

ColdRun train_and_evaluate_cold(const data::PreparedDataset& ds, data::ColdMode mode, const train::TrainConfig& config,
                                const EvalOptions& options);

inline constexpr std::string_view kAblationVariants[] = {"nvh-n", "nvh-u", "nvh-i", "nvh"};

// Trains NVH-n, NVH-u, NVH-i and NVH with the same seed and reports each on the
// test cases, in that order.
std::vector<MetricReport> compare_ablations(const data::PreparedDataset& ds, const train::TrainConfig& base,
                                            const EvalOptions& options);

enum class SweepParam { NegRatio, Dim };

SweepParam parse_sweep_param(std::string_view name);
std::string_view to_string(SweepParam param);
train::TrainConfig with_param(train::TrainConfig config, SweepParam param, std::size_t value);

struct SweepPoint {
  SweepParam param = SweepParam::NegRatio;
  std::size_t value = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;  // set when the run failed
  MetricReport report;
};

// One train+evaluate per (value, seed); up to `jobs` runs execute at once. A
// failing run is recorded and the sweep continues.
std::vector<SweepPoint> sweep(const data::PreparedDataset& ds, const train::TrainConfig& base, SweepParam param,
                              std::span<const std::size_t> values, std::span<const std::uint64_t> seeds,
                              const EvalOptions& options, std::size_t jobs = 1);

// Header `param,value,seed,status,k,hr,ndcg,cases,fingerprint`, one row per k
// (a single row with empty metrics for a failed run).
void write_sweep_csv(std::ostream& out, std::span<const SweepPoint> points);

}  // namespace nvhcf::eval
