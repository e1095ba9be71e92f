#include "nvhcf/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <tuple>

#include <fmt/format.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "nvhcf/eval.hpp"
#include "nvhcf/predict.hpp"

namespace nvhcf::train {

using nlohmann::json;

std::size_t TrainConfig::positives_per_batch() const {
  return batch_positives != 0 ? batch_positives : batch_size / (1 + neg_ratio);
}

std::size_t TrainConfig::steps_for(std::size_t positives) const {
  if (steps_per_epoch != 0) return steps_per_epoch;
  const std::size_t ep = positives_per_batch();
  return (positives + ep - 1) / ep;
}

void TrainConfig::validate() const {
  if (positives_per_batch() == 0)
    throw ContractError(fmt::format("batch_size {} is too small for neg_ratio {} (no positives per batch)", batch_size,
                                    neg_ratio));
  if (!(learning_rate > 0.0)) throw ContractError("learning_rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ContractError("beta1/beta2 must lie in [0, 1)");
  if (!(epsilon > 0.0)) throw ContractError("epsilon must be positive");
  if (clip_norm < 0.0) throw ContractError("clip_norm must be non-negative");
  if (weight_decay < 0.0) throw ContractError("weight_decay must be non-negative");
  if (max_epochs == 0) throw ContractError("max_epochs must be at least 1");
  if (latent_dim < 2) throw ContractError("latent_dim must be at least 2");
  if (samples_per_pair == 0) throw ContractError("samples_per_pair must be at least 1");
  if (validation_samples == 0 || eval_samples == 0) throw ContractError("sample counts must be at least 1");
}

namespace {

template <typename T>
void read_key(const json& j, const char* key, T& field, std::vector<std::string>& defaulted) {
  if (j.contains(key))
    field = j.at(key).get<T>();
  else
    defaulted.emplace_back(key);
}

json to_json(const TrainConfig& c) {
  return json{{"batch_size", c.batch_size},
              {"batch_positives", c.batch_positives},
              {"neg_ratio", c.neg_ratio},
              {"learning_rate", c.learning_rate},
              {"beta1", c.beta1},
              {"beta2", c.beta2},
              {"epsilon", c.epsilon},
              {"clip_norm", c.clip_norm},
              {"weight_decay", c.weight_decay},
              {"max_epochs", c.max_epochs},
              {"patience", c.patience},
              {"steps_per_epoch", c.steps_per_epoch},
              {"seed", c.seed},
              {"latent_dim", c.latent_dim},
              {"samples_per_pair", c.samples_per_pair},
              {"variant", model::variant_name(c.variant)},
              {"widths",
               {{"prior_hidden", c.widths.prior_hidden},
                {"inference_hidden1", c.widths.inference_hidden1},
                {"inference_hidden2", c.widths.inference_hidden2},
                {"decoder_hidden1", c.widths.decoder_hidden1},
                {"decoder_hidden2", c.widths.decoder_hidden2}}},
              {"validation_users", c.validation_users},
              {"validation_samples", c.validation_samples},
              {"eval_samples", c.eval_samples},
              {"threads", c.threads}};
}

}  // namespace

TrainConfig config_from_json(std::string_view json_text, std::vector<std::string>* defaulted) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ContractError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ContractError("config must be a JSON object");

  const json reference = to_json(TrainConfig{});
  for (const auto& [key, value] : j.items()) {
    if (!reference.contains(key)) throw ContractError("unknown config key '" + key + "'");
    if (key == "widths") {
      if (!value.is_object()) throw ContractError("config key 'widths' must be an object");
      for (const auto& [wkey, wvalue] : value.items())
        if (!reference["widths"].contains(wkey)) throw ContractError("unknown config key 'widths." + wkey + "'");
    }
  }

  TrainConfig c;
  std::vector<std::string> missing;
  try {
    read_key(j, "batch_size", c.batch_size, missing);
    read_key(j, "batch_positives", c.batch_positives, missing);
    read_key(j, "neg_ratio", c.neg_ratio, missing);
    read_key(j, "learning_rate", c.learning_rate, missing);
    read_key(j, "beta1", c.beta1, missing);
    read_key(j, "beta2", c.beta2, missing);
    read_key(j, "epsilon", c.epsilon, missing);
    read_key(j, "clip_norm", c.clip_norm, missing);
    read_key(j, "weight_decay", c.weight_decay, missing);
    read_key(j, "max_epochs", c.max_epochs, missing);
    read_key(j, "patience", c.patience, missing);
    read_key(j, "steps_per_epoch", c.steps_per_epoch, missing);
    read_key(j, "seed", c.seed, missing);
    read_key(j, "latent_dim", c.latent_dim, missing);
    read_key(j, "samples_per_pair", c.samples_per_pair, missing);
    std::string variant = model::variant_name(c.variant);
    read_key(j, "variant", variant, missing);
    c.variant = model::parse_variant(variant);
    const json widths = j.contains("widths") ? j.at("widths") : json::object();
    std::vector<std::string> missing_widths;
    read_key(widths, "prior_hidden", c.widths.prior_hidden, missing_widths);
    read_key(widths, "inference_hidden1", c.widths.inference_hidden1, missing_widths);
    read_key(widths, "inference_hidden2", c.widths.inference_hidden2, missing_widths);
    read_key(widths, "decoder_hidden1", c.widths.decoder_hidden1, missing_widths);
    read_key(widths, "decoder_hidden2", c.widths.decoder_hidden2, missing_widths);
    for (auto& w : missing_widths) missing.push_back("widths." + w);
    read_key(j, "validation_users", c.validation_users, missing);
    read_key(j, "validation_samples", c.validation_samples, missing);
    read_key(j, "eval_samples", c.eval_samples, missing);
    read_key(j, "threads", c.threads, missing);
  } catch (const json::exception& e) {
    throw ContractError(std::string("config value has the wrong type: ") + e.what());
  }
  const json defaults = to_json(TrainConfig{});
  for (const auto& key : missing) {
    const auto dot = key.find('.');
    const json& value = dot == std::string::npos ? defaults.at(key) : defaults.at("widths").at(key.substr(dot + 1));
    spdlog::info("config: '{}' not set, using default {}", key, value.dump());
  }
  if (defaulted != nullptr) *defaulted = std::move(missing);
  c.validate();
  return c;
}

TrainConfig load_config(const std::filesystem::path& path, std::vector<std::string>* defaulted) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_json(ss.str(), defaulted);
}

std::string config_to_json(const TrainConfig& config) { return to_json(config).dump(2); }

std::uint64_t fingerprint(const TrainConfig& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](std::string_view s) {
    for (unsigned char ch : s) {
      h ^= ch;
      h *= 0x100000001b3ULL;
    }
  };
  feed(to_json(config).dump());
  feed(std::to_string(data::kDatasetCacheVersion));
  return h;
}

AdamState init_adam(std::span<model::LayerParams* const> params, double beta1, double beta2, double epsilon) {
  AdamState s;
  s.beta1 = beta1;
  s.beta2 = beta2;
  s.epsilon = epsilon;
  for (const auto* p : params) {
    s.m.push_back(model::LayerParams::zeros_like(*p));
    s.v.push_back(model::LayerParams::zeros_like(*p));
  }
  return s;
}

namespace {

template <typename P, typename G, typename S>
void adam_update(P&& param, const G& grad, S&& m, S&& v, double b1, double b2, double eps, double lr_t) {
  m = b1 * m + (1.0 - b1) * grad;
  v = b2 * v + (1.0 - b2) * grad.square();
  param -= lr_t * m / (v.sqrt() + eps);
}

}  // namespace

void adam_step(std::span<model::LayerParams* const> params, const autodiff::Gradients& grads, AdamState& state,
               double learning_rate) {
  if (state.m.size() != params.size() || state.v.size() != params.size())
    throw DimensionError(fmt::format("adam: state tracks {} tensors, {} parameters given", state.m.size(), params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto* p = params[i];
    if (state.m[i].weight.rows() != p->weight.rows() || state.m[i].weight.cols() != p->weight.cols() ||
        state.m[i].bias.size() != p->bias.size())
      throw DimensionError(fmt::format("adam: moment shape mismatch for parameter {}", i));
    if (auto it = grads.find(p); it != grads.end() &&
        (it->second.weight.rows() != p->weight.rows() || it->second.weight.cols() != p->weight.cols() ||
         it->second.bias.size() != p->bias.size()))
      throw DimensionError(fmt::format("adam: gradient shape mismatch for parameter {}", i));
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  // Bias correction folded into the step size.
  const double lr_t =
      learning_rate * std::sqrt(1.0 - std::pow(state.beta2, t)) / (1.0 - std::pow(state.beta1, t));
  const double eps_t = state.epsilon * std::sqrt(1.0 - std::pow(state.beta2, t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto* p = params[i];
    auto it = grads.find(p);
    if (it == grads.end()) {
      // Zero gradient: moments decay, parameters still move along m.
      if (state.m[i].weight.isZero(0.0) && state.m[i].bias.isZero(0.0)) continue;
      const model::LayerParams zero = model::LayerParams::zeros_like(*p);
      adam_update(p->weight.array(), zero.weight.array(), state.m[i].weight.array(), state.v[i].weight.array(),
                  state.beta1, state.beta2, eps_t, lr_t);
      adam_update(p->bias.array(), zero.bias.array(), state.m[i].bias.array(), state.v[i].bias.array(), state.beta1,
                  state.beta2, eps_t, lr_t);
      continue;
    }
    adam_update(p->weight.array(), it->second.weight.array(), state.m[i].weight.array(), state.v[i].weight.array(),
                state.beta1, state.beta2, eps_t, lr_t);
    adam_update(p->bias.array(), it->second.bias.array(), state.m[i].bias.array(), state.v[i].bias.array(),
                state.beta1, state.beta2, eps_t, lr_t);
  }
}

double gradient_norm(const autodiff::Gradients& grads) {
  double sq = 0.0;
  for (const auto& [layer, g] : grads) sq += g.weight.squaredNorm() + g.bias.squaredNorm();
  return std::sqrt(sq);
}

double clip_gradients(autodiff::Gradients& grads, double max_norm) {
  const double norm = gradient_norm(grads);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& [layer, g] : grads) {
      g.weight *= s;
      g.bias *= s;
    }
  }
  return norm;
}

model::LossTerms minibatch_loss(autodiff::Tape& tape, const model::ModelParams& params,
                                const data::InteractionMatrix& train, const data::SideInfo& side,
                                std::span<const data::TrainingPair> pairs, const model::Noise& noise) {
  if (pairs.empty()) throw ContractError("minibatch_loss: empty batch");
  const auto batch = model::assemble_batch(train, side, pairs);
  return model::negative_elbo(tape, params, batch, noise);
}

double minibatch_loss(const model::ModelParams& params, const data::InteractionMatrix& train,
                      const data::SideInfo& side, std::span<const data::TrainingPair> pairs, const model::Noise& noise) {
  autodiff::Tape tape;
  return minibatch_loss(tape, params, train, side, pairs, noise).loss.value()(0, 0);
}

void write_history_csv(std::ostream& out, std::span<const EpochRecord> history, std::uint64_t seed,
                       std::string_view variant) {
  out << "# seed=" << seed << " variant=" << variant << '\n';
  out << "epoch,loss,val_hr5,val_ndcg5\n";
  for (const auto& r : history) out << fmt::format("{},{:.10g},{:.6f},{:.6f}\n", r.epoch, r.loss, r.val_hr5, r.val_ndcg5);
}

model::Dims dims_for(const data::InteractionMatrix& train, const data::SideInfo& side, std::size_t latent) {
  if (static_cast<std::size_t>(side.user_features.rows()) < train.users() ||
      static_cast<std::size_t>(side.item_features.rows()) < train.items())
    throw DimensionError("side information has fewer rows than the interaction matrix");
  return {train.users(), train.items(), static_cast<std::size_t>(side.user_dim()),
          static_cast<std::size_t>(side.item_dim()), latent};
}

Validator default_validator(const data::InteractionMatrix& train, const data::SideInfo& side,
                            std::span<const data::EvalCase> cases, const TrainConfig& config,
                            const data::ColdSplit* cold) {
  std::vector<data::EvalCase> subset(cases.begin(), cases.end());
  if (config.validation_users != 0 && subset.size() > config.validation_users) {
    Rng rng = Rng::derive(config.seed, {0x76616c73ULL});
    std::vector<std::size_t> order(subset.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng.engine());
    order.resize(config.validation_users);
    std::sort(order.begin(), order.end());
    std::vector<data::EvalCase> picked;
    for (std::size_t i : order) picked.push_back(subset[i]);
    subset = std::move(picked);
  }
  eval::EvalOptions options;
  options.ks = {5};
  options.samples = config.validation_samples;
  options.seed = config.seed;
  options.threads = config.threads;
  return [&train, &side, cold, subset = std::move(subset), options](const model::ModelParams& params) {
    if (subset.empty()) return std::pair{0.0, 0.0};
    const auto context = cold != nullptr ? predict::cold_context(*cold, side) : predict::warm_context(train, side);
    const auto report = eval::evaluate(params, context, subset, options);
    return std::pair{report.hr[0], report.ndcg[0]};
  };
}

FitResult fit(const data::InteractionMatrix& train, const data::SideInfo& side, const TrainConfig& config,
              const FitHooks& hooks) {
  config.validate();
  if (train.nnz() == 0) throw ContractError("training matrix has no positives");
  if (!hooks.validate) throw ContractError("fit needs a validation hook");

  auto current = std::make_shared<FitResult>();
  model::ModelParams params =
      model::init_model(dims_for(train, side, config.latent_dim), config.widths, config.variant, config.seed);
  current->best = params;
  auto layers = params.layers();
  AdamState adam = init_adam(layers, config.beta1, config.beta2, config.epsilon);
  autodiff::Gradients grads;

  const std::vector<data::Interaction> positives = train.interactions();
  const std::size_t ep = config.positives_per_batch();
  const std::size_t steps = config.steps_for(positives.size());
  const std::size_t D = config.latent_dim;
  std::vector<std::size_t> order(positives.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t since_best = 0;

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    Rng epoch_rng = Rng::derive(config.seed, {0x65706f63ULL, epoch});
    std::shuffle(order.begin(), order.end(), epoch_rng.engine());
    double loss_sum = 0.0;
    std::vector<data::Interaction> chunk;
    for (std::size_t s = 0; s < steps; ++s) {
      chunk.clear();
      for (std::size_t k = 0; k < ep; ++k) {
        const std::size_t idx = s * ep + k;
        if (config.steps_per_epoch == 0 && idx >= order.size()) break;
        chunk.push_back(positives[order[idx % order.size()]]);
      }
      Rng step_rng = Rng::derive(config.seed, {0x73746570ULL, params.step});
      const auto pairs = data::with_negatives(train, chunk, config.neg_ratio, step_rng);
      const auto noise = model::draw_noise(pairs.size(), config.samples_per_pair, D, step_rng);
      double value = 0.0;
      try {
        autodiff::Tape tape;
        const auto terms = minibatch_loss(tape, params, train, side, pairs, noise);
        value = terms.loss.value()(0, 0);
        tape.backward(terms.loss, grads);
      } catch (const NumericalError& e) {
        throw DivergenceError(fmt::format("non-finite value at epoch {} step {}: {}", epoch, params.step, e.what()),
                              params.step, current);
      }
      if (!std::isfinite(value))
        throw DivergenceError(fmt::format("loss is {} at epoch {} step {}", value, epoch, params.step), params.step,
                              current);
      const double norm = clip_gradients(grads, config.clip_norm);
      if (!std::isfinite(norm))
        throw DivergenceError(fmt::format("gradient norm is {} at epoch {} step {}", norm, epoch, params.step),
                              params.step, current);
      adam_step(layers, grads, adam, config.learning_rate);
      if (config.weight_decay > 0.0)
        for (auto* layer : layers) layer->weight *= 1.0 - config.learning_rate * config.weight_decay;
      ++params.step;
      loss_sum += value;
    }

    EpochRecord record;
    record.epoch = epoch;
    record.loss = loss_sum / static_cast<double>(steps);
    std::tie(record.val_hr5, record.val_ndcg5) = hooks.validate(params);
    current->history.push_back(record);
    spdlog::info("epoch {:>3}  loss {:.4f}  val HR@5 {:.4f}  NDCG@5 {:.4f}", epoch, record.loss, record.val_hr5,
                 record.val_ndcg5);
    if (record.val_hr5 > current->best_val_hr5) {
      current->best_val_hr5 = record.val_hr5;
      current->best_epoch = epoch;
      current->best = params;
      since_best = 0;
    } else {
      ++since_best;
    }
    if (hooks.on_epoch) hooks.on_epoch(record, params);
    if (config.patience != 0 && since_best >= config.patience) {
      current->early_stopped = true;
      spdlog::info("early stop after epoch {} (best epoch {})", epoch, current->best_epoch);
      break;
    }
  }
  return std::move(*current);
}

FitResult fit(const data::InteractionMatrix& train, const data::SideInfo& side,
              std::span<const data::EvalCase> validation, const TrainConfig& config) {
  FitHooks hooks;
  hooks.validate = default_validator(train, side, validation, config);
  return fit(train, side, config, hooks);
}

}  // namespace nvhcf::train
