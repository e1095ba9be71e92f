#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nvhcf/data.hpp"
#include "nvhcf/errors.hpp"
#include "nvhcf/model.hpp"

namespace nvhcf::train {

struct TrainConfig {
  // Total pairs per minibatch; positives per batch default to
  // floor(batch_size / (1 + neg_ratio)).
  std::size_t batch_size = 128;
  std::size_t batch_positives = 0;  // 0: derived from batch_size
  std::size_t neg_ratio = 5;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clip_norm = 5.0;  // 0 disables clipping
  // Decoupled decay applied to weight matrices (not biases) after each step.
  double weight_decay = 0.0;
  std::size_t max_epochs = 300;
  std::size_t patience = 10;
  // 0: ceil(|positives| / E_p).
  std::size_t steps_per_epoch = 0;
  std::uint64_t seed = 42;
  std::size_t latent_dim = 128;
  std::size_t samples_per_pair = 1;
  model::Variant variant;
  model::Widths widths;
  std::size_t validation_users = 500;
  std::size_t validation_samples = 32;
  std::size_t eval_samples = 128;
  std::size_t threads = 0;

  std::size_t positives_per_batch() const;
  std::size_t steps_for(std::size_t positives) const;
  void validate() const;
};

// Parses a JSON object. Missing keys keep their defaults and are reported in
// `defaulted` (and logged); unknown keys are a ContractError.
TrainConfig config_from_json(std::string_view json_text, std::vector<std::string>* defaulted = nullptr);
TrainConfig load_config(const std::filesystem::path& path, std::vector<std::string>* defaulted = nullptr);
std::string config_to_json(const TrainConfig& config);
// FNV-1a over the canonical JSON form plus the dataset cache version.
std::uint64_t fingerprint(const TrainConfig& config);

struct AdamState {
  std::vector<model::LayerParams> m;
  std::vector<model::LayerParams> v;
  std::size_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

AdamState init_adam(std::span<model::LayerParams* const> params, double beta1 = 0.9, double beta2 = 0.999,
                    double epsilon = 1e-8);
// Bias-corrected adaptive-moment update. Layers without an entry in `grads`
// are treated as having zero gradient.
void adam_step(std::span<model::LayerParams* const> params, const autodiff::Gradients& grads, AdamState& state,
               double learning_rate);
// Global L2 norm over every gradient entry.
double gradient_norm(const autodiff::Gradients& grads);
// Rescales so the global norm is at most max_norm; returns the norm before clipping.
double clip_gradients(autodiff::Gradients& grads, double max_norm);

// Negative minibatch ELBO with the given noise ((E*K) x D per side).
model::LossTerms minibatch_loss(autodiff::Tape& tape, const model::ModelParams& params,
                                const data::InteractionMatrix& train, const data::SideInfo& side,
                                std::span<const data::TrainingPair> pairs, const model::Noise& noise);
double minibatch_loss(const model::ModelParams& params, const data::InteractionMatrix& train,
                      const data::SideInfo& side, std::span<const data::TrainingPair> pairs, const model::Noise& noise);

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;  // mean minibatch loss over the epoch
  double val_hr5 = 0.0;
  double val_ndcg5 = 0.0;
};

// Header `epoch,loss,val_hr5,val_ndcg5`, preceded by a `# seed=...` comment.
void write_history_csv(std::ostream& out, std::span<const EpochRecord> history, std::uint64_t seed,
                       std::string_view variant);

struct FitResult {
  model::ModelParams best;  // parameters at the best validation HR@5
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_val_hr5 = -1.0;
  bool early_stopped = false;
};

// Loss went non-finite. `partial` holds the last good result.
class DivergenceError : public NumericalError {
 public:
  DivergenceError(const std::string& what, std::size_t step, std::shared_ptr<FitResult> partial)
      : NumericalError(what), step_(step), partial_(std::move(partial)) {}
  std::size_t step() const { return step_; }
  const std::shared_ptr<FitResult>& partial() const { return partial_; }

 private:
  std::size_t step_;
  std::shared_ptr<FitResult> partial_;
};

// Returns (HR@5, NDCG@5) for the current parameters.
using Validator = std::function<std::pair<double, double>(const model::ModelParams&)>;

struct FitHooks {
  // Defaults to leave-one-out HR@5 on up to validation_users cases.
  Validator validate;
  std::function<void(const EpochRecord&, const model::ModelParams&)> on_epoch;
};

// Validation cases may reference cold ids when `cold` is given.
Validator default_validator(const data::InteractionMatrix& train, const data::SideInfo& side,
                            std::span<const data::EvalCase> cases, const TrainConfig& config,
                            const data::ColdSplit* cold = nullptr);

FitResult fit(const data::InteractionMatrix& train, const data::SideInfo& side, const TrainConfig& config,
              const FitHooks& hooks);
FitResult fit(const data::InteractionMatrix& train, const data::SideInfo& side,
              std::span<const data::EvalCase> validation, const TrainConfig& config);

model::Dims dims_for(const data::InteractionMatrix& train, const data::SideInfo& side, std::size_t latent);

}  // namespace nvhcf::train
