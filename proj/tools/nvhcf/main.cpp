#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "nvhcf/data.hpp"
#include "nvhcf/errors.hpp"
#include "nvhcf/eval.hpp"
#include "nvhcf/experiments.hpp"
#include "nvhcf/model.hpp"
#include "nvhcf/predict.hpp"
#include "nvhcf/train.hpp"

namespace fs = std::filesystem;
using namespace nvhcf;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitIo = 4;

constexpr const char* kCacheEnv = "NVHCF_CACHE_DIR";
constexpr const char* kCacheExt = ".nvds";

fs::path cache_dir() {
  const char* env = std::getenv(kCacheEnv);
  return env != nullptr && *env != '\0' ? fs::path(env) : fs::path(".nvhcf-cache");
}

// A path as given, or a dataset name looked up in the cache directory.
fs::path resolve_dataset(const std::string& arg) {
  const fs::path direct(arg);
  if (fs::exists(direct)) return direct;
  const fs::path cached = cache_dir() / (arg + kCacheExt);
  if (fs::exists(cached)) return cached;
  throw IoError(fmt::format("dataset cache not found: '{}' (also looked for {})", arg, cached.string()));
}

std::vector<std::string> required_files(const std::string& dataset) {
  if (dataset == "ml-100k") return {"u.data", "u.user", "u.item"};
  if (dataset == "ml-1m") return {"ratings.dat", "users.dat", "movies.dat"};
  return {"user_artists.dat", "user_friends.dat", "user_taggedartists.dat"};
}

std::ofstream open_output(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

// Writes to `path`, or standard output when it is empty.
template <class Fn>
void emit(const std::string& path, Fn&& fn) {
  if (path.empty()) {
    fn(std::cout);
    return;
  }
  auto out = open_output(path);
  fn(out);
  spdlog::info("wrote {}", path);
}

// ---------------------------------------------------------------- prepare

struct PrepareArgs {
  std::string dataset;
  std::string in;
  std::string out;
  std::uint64_t seed = 42;
  double cold_fraction = 0.3;
  std::size_t max_terms = 8000;
  std::size_t min_df = 2;
};

int run_prepare(const PrepareArgs& a) {
  for (const auto& f : required_files(a.dataset))
    if (!fs::exists(fs::path(a.in) / f))
      throw IoError(fmt::format("{}: expected file '{}' in {}", a.dataset, f, a.in));

  data::SideInfoOptions so;
  so.max_terms = a.max_terms;
  so.min_df = a.min_df;
  const fs::path dir(a.in);
  data::RatingsFile ratings;
  data::SideInfo side;
  if (a.dataset == "ml-100k") {
    ratings = data::load_movielens(dir / "u.data");
    side = data::ml100k_side_info(dir, ratings, so);
  } else if (a.dataset == "ml-1m") {
    ratings = data::load_movielens(dir / "ratings.dat");
    side = data::ml1m_side_info(dir, ratings, so);
  } else {
    ratings = data::load_lastfm(dir / "user_artists.dat");
    side = data::lastfm_side_info(dir, ratings, so);
  }
  data::PrepareOptions po;
  po.seed = a.seed;
  po.cold_fraction = a.cold_fraction;
  const auto ds = data::prepare_dataset(a.dataset, ratings, std::move(side), po);

  const fs::path out = a.out.empty() ? cache_dir() / (a.dataset + kCacheExt) : fs::path(a.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  data::save_dataset(ds, out);
  spdlog::info("wrote {}", out.string());

  const double m = static_cast<double>(ds.full.users());
  const double n = static_cast<double>(ds.full.items());
  fmt::print("dataset        {}\n", ds.name);
  fmt::print("seed           {}\n", ds.seed);
  fmt::print("M={} N={}\n", ds.full.users(), ds.full.items());
  fmt::print("ratings        {}\n", ds.raw_ratings);
  fmt::print("positives      {}\n", ds.full.nnz());
  fmt::print("density        {:.4f}%\n", 100.0 * static_cast<double>(ds.full.nnz()) / (m * n));
  fmt::print("user features  {}\n", ds.side.user_dim());
  fmt::print("item features  {}\n", ds.side.item_dim());
  fmt::print("train pairs    {}\n", ds.train.nnz());
  fmt::print("val/test cases {}/{}\n", ds.validation.size(), ds.test.size());
  fmt::print("cold users     {}\n", ds.cold_user.cold_count());
  fmt::print("cold items     {}\n", ds.cold_item.cold_count());
  return kExitOk;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string data;
  std::string config;
  std::string out;
  std::string variant;
  std::string split = "warm";
  std::string history;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> max_epochs;
  std::optional<std::size_t> steps_per_epoch;
};

train::TrainConfig load_config_or_default(const std::string& path) {
  if (path.empty()) {
    spdlog::info("no --config given; using defaults");
    return {};
  }
  return train::load_config(path);
}

int run_train(const TrainArgs& a) {
  const auto ds = data::load_dataset(resolve_dataset(a.data));
  auto config = load_config_or_default(a.config);
  if (!a.variant.empty()) config.variant = model::parse_variant(a.variant);
  if (a.seed) config.seed = *a.seed;
  if (a.max_epochs) config.max_epochs = *a.max_epochs;
  if (a.steps_per_epoch) config.steps_per_epoch = *a.steps_per_epoch;
  config.validate();

  const fs::path out(a.out);
  const fs::path history = a.history.empty() ? fs::path(out.string() + ".history.csv") : fs::path(a.history);
  const std::string variant = model::variant_name(config.variant);
  spdlog::info("training {} on {} ({} split), seed {}", variant, ds.name, a.split, config.seed);

  const data::ColdSplit* cold = nullptr;
  if (a.split == "cold-user") cold = &ds.cold_user;
  if (a.split == "cold-item") cold = &ds.cold_item;
  const data::InteractionMatrix& train_matrix = cold != nullptr ? cold->train : ds.train;

  train::FitHooks hooks;
  hooks.validate = cold != nullptr
                       ? train::default_validator(train_matrix, ds.side, cold->validation_cases, config, cold)
                       : train::default_validator(train_matrix, ds.side, ds.validation, config);

  auto write_outputs = [&](const train::FitResult& r) {
    model::save_checkpoint(r.best, out);
    auto h = open_output(history);
    train::write_history_csv(h, r.history, config.seed, variant);
    spdlog::info("wrote {} and {}", out.string(), history.string());
  };

  try {
    const auto result = train::fit(train_matrix, ds.side, config, hooks);
    write_outputs(result);
    fmt::print("variant={} seed={} epochs={} best_epoch={} best_val_hr5={:.4f} early_stopped={}\n", variant,
               config.seed, result.history.size(), result.best_epoch, result.best_val_hr5, result.early_stopped);
    return kExitOk;
  } catch (const train::DivergenceError& e) {
    spdlog::error("training diverged: {}", e.what());
    if (e.partial()) {
      write_outputs(*e.partial());
      spdlog::error("kept last good checkpoint (epoch {})", e.partial()->best_epoch);
    }
    return kExitNumerical;
  }
}

// ---------------------------------------------------------------- evaluate

struct EvalArgs {
  std::string data;
  std::string checkpoint;
  std::string out;
  std::string split = "test";
  std::string mode = "user";
  std::vector<std::size_t> ks{5, 10};
  std::size_t samples = predict::kDefaultSamples;
  std::uint64_t seed = 0;
  std::size_t threads = 0;
};

eval::EvalOptions eval_options(const EvalArgs& a) {
  eval::EvalOptions o;
  o.ks = a.ks;
  o.samples = a.samples;
  o.seed = a.seed;
  o.threads = a.threads;
  return o;
}

void check_dims(const model::ModelParams& params, const data::InteractionMatrix& train, const data::SideInfo& side) {
  const auto& d = params.dims;
  if (d.users != train.users() || d.items != train.items() ||
      d.user_features != static_cast<std::size_t>(side.user_dim()) ||
      d.item_features != static_cast<std::size_t>(side.item_dim()))
    throw ContractError(fmt::format("checkpoint was trained for {}x{} (features {}/{}), dataset split is {}x{} ({}/{})",
                                    d.users, d.items, d.user_features, d.item_features, train.users(), train.items(),
                                    side.user_dim(), side.item_dim()));
}

void emit_reports(const std::string& out, std::span<const eval::MetricReport> reports) {
  emit(out, [&](std::ostream& os) { eval::write_csv(os, reports); });
  if (!out.empty()) eval::print_table(std::cout, reports);
}

int run_evaluate(const EvalArgs& a) {
  const auto ds = data::load_dataset(resolve_dataset(a.data));
  const auto params = model::load_checkpoint(a.checkpoint);
  check_dims(params, ds.train, ds.side);
  const auto& cases = a.split == "validation" ? ds.validation : ds.test;
  auto report = eval::evaluate(params, predict::warm_context(ds.train, ds.side), cases, eval_options(a));
  report.label = fmt::format("{}/{}", report.label, a.split);
  emit_reports(a.out, std::span<const eval::MetricReport>(&report, 1));
  return kExitOk;
}

int run_eval_cold(const EvalArgs& a) {
  const auto ds = data::load_dataset(resolve_dataset(a.data));
  const auto mode = data::parse_cold_mode(a.mode);
  const auto& split = mode == data::ColdMode::User ? ds.cold_user : ds.cold_item;
  const auto params = model::load_checkpoint(a.checkpoint);
  check_dims(params, split.train, ds.side);
  const auto r = eval::evaluate_cold(params, split, ds.side, mode, eval_options(a), a.split == "validation");
  std::vector<eval::MetricReport> reports{r.all};
  if (r.cold.cases > 0) reports.push_back(r.cold);
  if (r.warm.cases > 0) reports.push_back(r.warm);
  emit_reports(a.out, reports);
  return kExitOk;
}

// ---------------------------------------------------------------- predict

struct PredictArgs {
  std::string data;
  std::string checkpoint;
  std::string out;
  std::vector<data::UserId> users;
  std::vector<data::ItemId> items;
  std::size_t top = 10;
  std::size_t samples = predict::kDefaultSamples;
  std::uint64_t seed = 0;
};

int run_predict(const PredictArgs& a) {
  const auto ds = data::load_dataset(resolve_dataset(a.data));
  const auto params = model::load_checkpoint(a.checkpoint);
  check_dims(params, ds.train, ds.side);
  const predict::Scorer scorer(params, predict::warm_context(ds.train, ds.side), a.samples, a.seed);
  std::vector<predict::PredictionRow> rows;
  for (data::UserId u : a.users) {
    if (u >= ds.train.users()) throw ContractError(fmt::format("user {} is outside [0, {})", u, ds.train.users()));
    std::vector<data::ItemId> candidates = a.items;
    if (candidates.empty()) {
      for (data::ItemId j = 0; j < ds.train.items(); ++j)
        if (!ds.train.contains(u, j)) candidates.push_back(j);
    }
    auto ranked = scorer.rank(u, candidates);
    if (a.items.empty() && ranked.size() > a.top) ranked.resize(a.top);
    for (const auto& r : ranked) rows.push_back({u, r});
  }
  emit(a.out, [&](std::ostream& os) { predict::write_predictions_csv(os, rows); });
  return kExitOk;
}

// ---------------------------------------------------------------- ablate / sweep

struct MultiArgs {
  std::string data;
  std::string config;
  std::string out;
  std::vector<std::uint64_t> seeds{42};
  std::string param;
  std::vector<std::size_t> values;
  std::size_t jobs = 1;
  std::optional<std::size_t> max_epochs;
  std::optional<std::size_t> steps_per_epoch;
  EvalArgs eval;
};

train::TrainConfig multi_config(const MultiArgs& a) {
  auto config = load_config_or_default(a.config);
  if (a.max_epochs) config.max_epochs = *a.max_epochs;
  if (a.steps_per_epoch) config.steps_per_epoch = *a.steps_per_epoch;
  config.validate();
  return config;
}

int run_ablate(const MultiArgs& a) {
  const auto ds = data::load_dataset(resolve_dataset(a.data));
  const auto base = multi_config(a);
  std::vector<eval::MetricReport> reports;
  for (std::uint64_t s : a.seeds) {
    auto config = base;
    config.seed = s;
    auto o = eval_options(a.eval);
    o.seed = s;
    for (auto& r : eval::compare_ablations(ds, config, o)) {
      r.seed = s;
      reports.push_back(std::move(r));
    }
  }
  emit_reports(a.out, reports);
  return kExitOk;
}

int run_sweep(const MultiArgs& a) {
  const auto param = eval::parse_sweep_param(a.param);
  if (a.values.empty()) throw ContractError("--values needs at least one value");
  const auto ds = data::load_dataset(resolve_dataset(a.data));
  const auto base = multi_config(a);
  const auto points = eval::sweep(ds, base, param, a.values, a.seeds, eval_options(a.eval), a.jobs);
  emit(a.out, [&](std::ostream& os) { eval::write_sweep_csv(os, points); });
  const auto failed = std::count_if(points.begin(), points.end(), [](const auto& p) { return !p.ok; });
  if (failed > 0) spdlog::warn("{} of {} sweep runs failed", failed, points.size());
  return kExitOk;
}

void add_eval_flags(CLI::App* cmd, EvalArgs& a) {
  cmd->add_option("--ks", a.ks, "Cutoffs k for HR@k and NDCG@k")->delimiter(',')->capture_default_str();
  cmd->add_option("--samples", a.samples, "Monte Carlo samples S per score")->capture_default_str()->check(
      CLI::PositiveNumber);
  cmd->add_option("--eval-seed", a.seed, "Seed for scoring draws")->capture_default_str();
  cmd->add_option("--threads", a.threads, "Evaluation threads (0: all cores)")->capture_default_str();
}

int dispatch(int argc, char** argv) {
  CLI::App app{"Hybrid collaborative filtering with neural variational inference"};
  app.require_subcommand(1);
  app.footer(fmt::format("Environment: {} sets the dataset cache directory (default .nvhcf-cache).", kCacheEnv));
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "Log verbosity on stderr")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}))
      ->capture_default_str();

  PrepareArgs prep;
  auto* p = app.add_subcommand("prepare", "Parse raw files and write a dataset cache with splits");
  p->add_option("--dataset", prep.dataset, "Dataset name")
      ->required()
      ->check(CLI::IsMember({"ml-100k", "ml-1m", "lastfm-2k"}));
  p->add_option("--in", prep.in, "Directory with the raw dataset files")->required()->check(CLI::ExistingDirectory);
  p->add_option("--out", prep.out, "Cache file (default: <cache dir>/<dataset>.nvds)");
  p->add_option("--seed", prep.seed, "Split and negative-sampling seed")->capture_default_str();
  p->add_option("--cold-fraction", prep.cold_fraction, "Fraction of cold validation/test samples")
      ->capture_default_str()
      ->check(CLI::Range(0.0, 1.0));
  p->add_option("--max-terms", prep.max_terms, "Bag-of-words vocabulary cap")->capture_default_str();
  p->add_option("--min-df", prep.min_df, "Minimum document frequency of a term")->capture_default_str();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Fit a model and write a checkpoint plus history CSV");
  t->add_option("--data", tr.data, "Dataset cache file or cached dataset name")->required();
  t->add_option("--config", tr.config, "JSON training config (missing keys use defaults)");
  t->add_option("--out", tr.out, "Checkpoint path")->required();
  t->add_option("--variant", tr.variant, "Model variant (overrides the config)")
      ->check(CLI::IsMember({"nvh", "nvh-n", "nvh-u", "nvh-i"}));
  t->add_option("--split", tr.split, "Training split")
      ->check(CLI::IsMember({"warm", "cold-user", "cold-item"}))
      ->capture_default_str();
  t->add_option("--history", tr.history, "History CSV (default: <out>.history.csv)");
  t->add_option("--seed", tr.seed, "Training seed (overrides the config)");
  t->add_option("--max-epochs", tr.max_epochs, "Epoch cap (overrides the config)");
  t->add_option("--steps-per-epoch", tr.steps_per_epoch, "Steps per epoch (overrides the config)");

  EvalArgs ev;
  auto* e = app.add_subcommand("evaluate", "Leave-one-out HR@k/NDCG@k of a warm checkpoint");
  e->add_option("--data", ev.data, "Dataset cache file or cached dataset name")->required();
  e->add_option("--checkpoint", ev.checkpoint, "Checkpoint path")->required()->check(CLI::ExistingFile);
  e->add_option("--split", ev.split, "Cases to score")
      ->check(CLI::IsMember({"test", "validation"}))
      ->capture_default_str();
  e->add_option("--out", ev.out, "CSV path (default: standard output)");
  add_eval_flags(e, ev);

  EvalArgs ec;
  auto* c = app.add_subcommand("eval-cold", "Cold-start metrics of a checkpoint trained with --split cold-*");
  c->add_option("--data", ec.data, "Dataset cache file or cached dataset name")->required();
  c->add_option("--checkpoint", ec.checkpoint, "Checkpoint path")->required()->check(CLI::ExistingFile);
  c->add_option("--mode", ec.mode, "Cold entity type")->check(CLI::IsMember({"user", "item"}))->capture_default_str();
  c->add_option("--split", ec.split, "Cases to score")
      ->check(CLI::IsMember({"test", "validation"}))
      ->capture_default_str();
  c->add_option("--out", ec.out, "CSV path (default: standard output)");
  add_eval_flags(c, ec);

  PredictArgs pr;
  auto* d = app.add_subcommand("predict", "Score and rank items for users");
  d->add_option("--data", pr.data, "Dataset cache file or cached dataset name")->required();
  d->add_option("--checkpoint", pr.checkpoint, "Checkpoint path")->required()->check(CLI::ExistingFile);
  d->add_option("--user", pr.users, "User ids (comma separated)")->required()->delimiter(',');
  d->add_option("--items", pr.items, "Candidate item ids (default: all unobserved items)")->delimiter(',');
  d->add_option("--top", pr.top, "Rows kept per user when ranking all unobserved items")->capture_default_str();
  d->add_option("--samples", pr.samples, "Monte Carlo samples S per score")->capture_default_str();
  d->add_option("--eval-seed", pr.seed, "Seed for scoring draws")->capture_default_str();
  d->add_option("--out", pr.out, "CSV path (default: standard output)");

  MultiArgs ab;
  auto* b = app.add_subcommand("ablate", "Train and evaluate NVH-n, NVH-u, NVH-i and NVH");
  b->add_option("--data", ab.data, "Dataset cache file or cached dataset name")->required();
  b->add_option("--config", ab.config, "JSON training config (missing keys use defaults)");
  b->add_option("--seeds", ab.seeds, "Training seeds (comma separated)")->delimiter(',')->capture_default_str();
  b->add_option("--max-epochs", ab.max_epochs, "Epoch cap (overrides the config)");
  b->add_option("--steps-per-epoch", ab.steps_per_epoch, "Steps per epoch (overrides the config)");
  b->add_option("--out", ab.out, "CSV path (default: standard output)");
  add_eval_flags(b, ab.eval);

  MultiArgs sw;
  auto* s = app.add_subcommand("sweep", "Train and evaluate once per parameter value and seed");
  s->add_option("--data", sw.data, "Dataset cache file or cached dataset name")->required();
  s->add_option("--config", sw.config, "JSON training config (missing keys use defaults)");
  s->add_option("--param", sw.param, "Swept parameter")->required()->check(CLI::IsMember({"neg_ratio", "dim"}));
  s->add_option("--values", sw.values, "Values (comma separated)")->required()->delimiter(',');
  s->add_option("--seeds", sw.seeds, "Training seeds (comma separated)")->delimiter(',')->capture_default_str();
  s->add_option("--jobs", sw.jobs, "Runs executed concurrently")->capture_default_str()->check(CLI::PositiveNumber);
  s->add_option("--max-epochs", sw.max_epochs, "Epoch cap (overrides the config)");
  s->add_option("--steps-per-epoch", sw.steps_per_epoch, "Steps per epoch (overrides the config)");
  s->add_option("--out", sw.out, "CSV path (default: standard output)");
  add_eval_flags(s, sw.eval);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kExitOk : kExitUsage;
  }
  spdlog::set_level(spdlog::level::from_str(log_level));

  if (*p) return run_prepare(prep);
  if (*t) return run_train(tr);
  if (*e) return run_evaluate(ev);
  if (*c) return run_eval_cold(ec);
  if (*d) return run_predict(pr);
  if (*b) return run_ablate(ab);
  return run_sweep(sw);
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_default_logger(spdlog::stderr_color_mt("nvhcf"));
  try {
    return dispatch(argc, argv);
  } catch (const ContractError& e) {
    spdlog::error("{}", e.what());
    return kExitUsage;
  } catch (const DimensionError& e) {
    spdlog::error("{}", e.what());
    return kExitUsage;
  } catch (const NumericalError& e) {
    spdlog::error("{}", e.what());
    return kExitNumerical;
  } catch (const IoError& e) {
    spdlog::error("{}", e.what());
    return kExitIo;
  } catch (const ParseError& e) {
    spdlog::error("{}", e.what());
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    spdlog::error("{}", e.what());
    return kExitIo;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
}
