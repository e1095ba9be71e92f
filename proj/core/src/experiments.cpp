#include "nvhcf/experiments.hpp"

#include <atomic>
#include <ostream>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "nvhcf/errors.hpp"

namespace nvhcf::eval {

WarmRun train_and_evaluate(const data::PreparedDataset& ds, const train::TrainConfig& config,
                           const EvalOptions& options) {
  WarmRun run;
  run.fit = train::fit(ds.train, ds.side, ds.validation, config);
  run.test = evaluate(run.fit.best, predict::warm_context(ds.train, ds.side), ds.test, options);
  run.test.fingerprint = train::fingerprint(config);
  return run;
}

ColdRun train_and_evaluate_cold(const data::PreparedDataset& ds, data::ColdMode mode, const train::TrainConfig& config,
                                const EvalOptions& options) {
  const data::ColdSplit& split = mode == data::ColdMode::User ? ds.cold_user : ds.cold_item;
  if (split.mode != mode) throw ContractError("dataset has no cold split for this mode");
  train::FitHooks hooks;
  hooks.validate = train::default_validator(split.train, ds.side, split.validation_cases, config, &split);
  ColdRun run;
  run.fit = train::fit(split.train, ds.side, config, hooks);
  run.test = evaluate_cold(run.fit.best, split, ds.side, mode, options);
  for (MetricReport* r : {&run.test.all, &run.test.cold, &run.test.warm}) r->fingerprint = train::fingerprint(config);
  return run;
}

std::vector<MetricReport> compare_ablations(const data::PreparedDataset& ds, const train::TrainConfig& base,
                                            const EvalOptions& options) {
  std::vector<MetricReport> out;
  for (std::string_view name : kAblationVariants) {
    train::TrainConfig config = base;
    config.variant = model::parse_variant(name);
    spdlog::info("ablation: training {}", name);
    out.push_back(train_and_evaluate(ds, config, options).test);
  }
  return out;
}

SweepParam parse_sweep_param(std::string_view name) {
  if (name == "neg_ratio") return SweepParam::NegRatio;
  if (name == "dim") return SweepParam::Dim;
  throw ContractError(fmt::format("unknown sweep parameter '{}' (expected neg_ratio|dim)", name));
}

std::string_view to_string(SweepParam param) { return param == SweepParam::NegRatio ? "neg_ratio" : "dim"; }

train::TrainConfig with_param(train::TrainConfig config, SweepParam param, std::size_t value) {
  if (param == SweepParam::NegRatio)
    config.neg_ratio = value;
  else
    config.latent_dim = value;
  config.validate();
  return config;
}

std::vector<SweepPoint> sweep(const data::PreparedDataset& ds, const train::TrainConfig& base, SweepParam param,
                              std::span<const std::size_t> values, std::span<const std::uint64_t> seeds,
                              const EvalOptions& options, std::size_t jobs) {
  std::vector<SweepPoint> points;
  for (std::size_t v : values) {
    for (std::uint64_t s : seeds) {
      SweepPoint p;
      p.param = param;
      p.value = v;
      p.seed = s;
      points.push_back(p);
    }
  }
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < points.size(); i = next++) {
      SweepPoint& p = points[i];
      try {
        train::TrainConfig config = with_param(base, param, p.value);
        config.seed = p.seed;
        EvalOptions eo = options;
        eo.threads = jobs > 1 ? 1 : options.threads;
        spdlog::info("sweep: {}={} seed={}", to_string(param), p.value, p.seed);
        p.report = train_and_evaluate(ds, config, eo).test;
        p.report.label = fmt::format("{}={}", to_string(param), p.value);
        p.ok = true;
      } catch (const std::exception& e) {
        p.error = e.what();
        spdlog::error("sweep: {}={} seed={} failed: {}", to_string(param), p.value, p.seed, e.what());
      }
    }
  };
  jobs = std::max<std::size_t>(1, std::min(jobs, points.size()));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < jobs; ++t) pool.emplace_back(worker);
  }
  return points;
}

void write_sweep_csv(std::ostream& out, std::span<const SweepPoint> points) {
  out << "param,value,seed,status,k,hr,ndcg,cases,fingerprint\n";
  for (const auto& p : points) {
    if (!p.ok) {
      out << fmt::format("{},{},{},failed,,,,,\n", to_string(p.param), p.value, p.seed);
      continue;
    }
    for (std::size_t i = 0; i < p.report.ks.size(); ++i)
      out << fmt::format("{},{},{},ok,{},{:.6f},{:.6f},{},{:016x}\n", to_string(p.param), p.value, p.seed,
                         p.report.ks[i], p.report.hr[i], p.report.ndcg[i], p.report.cases, p.report.fingerprint);
  }
}

}  // namespace nvhcf::eval
