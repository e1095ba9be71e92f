#pragma once

// Networks, variational distributions and the evidence lower bound.
//
// Seven networks make up a model: side-information prior networks for users
// and items, inference networks that map [features | feedback row] to an
// approximate posterior, decoders that reconstruct the feedback row/column
// from a latent factor, and an interaction network that scores a (u, v) pair.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nvhcf/autodiff.hpp"
#include "nvhcf/data.hpp"

namespace nvhcf::model {

using autodiff::LayerParams;
using autodiff::Matrix;
using autodiff::Tape;
using autodiff::Var;
using autodiff::Vector;

enum class Side { User, Item };

inline constexpr double kLogVarClamp = autodiff::kExpClamp;
// Bernoulli probabilities are clamped to [kProbClamp, 1 - kProbClamp] before log.
inline constexpr double kProbClamp = 1e-7;

struct DiagGaussian {
  Vector mean;
  Vector log_var;

  Eigen::Index dim() const { return mean.size(); }
  Vector variance() const { return log_var.array().exp().matrix(); }
  static DiagGaussian standard(Eigen::Index dim) { return {Vector::Zero(dim), Vector::Zero(dim)}; }
};

// Row-batched Gaussians recorded on a tape (one distribution per row).
struct GaussianVars {
  Var mean;
  Var log_var;
};

struct PriorNet {
  LayerParams hidden;
  LayerParams mean_head;
  LayerParams log_var_head;
};

struct InferenceNet {
  LayerParams hidden1;
  LayerParams hidden2;
  LayerParams mean_head;
  LayerParams log_var_head;
};

struct DecoderNet {
  LayerParams hidden1;
  LayerParams hidden2;
  LayerParams output;
};

struct InteractionNet {
  LayerParams hidden1;
  LayerParams hidden2;
  LayerParams output;
};

struct Dims {
  std::size_t users = 0;
  std::size_t items = 0;
  std::size_t user_features = 0;
  std::size_t item_features = 0;
  std::size_t latent = 128;

  friend bool operator==(const Dims&, const Dims&) = default;
};

struct Widths {
  std::size_t prior_hidden = 200;
  std::size_t inference_hidden1 = 600;
  std::size_t inference_hidden2 = 200;
  std::size_t decoder_hidden1 = 200;
  std::size_t decoder_hidden2 = 600;

  friend bool operator==(const Widths&, const Widths&) = default;
};

// Which side-information priors are active. A disabled prior is replaced by
// N(0, I) inside the KL term.
struct Variant {
  bool use_user_prior = true;
  bool use_item_prior = true;

  friend bool operator==(const Variant&, const Variant&) = default;
};

// "nvh", "nvh-n", "nvh-u" (user prior only), "nvh-i" (item prior only).
Variant parse_variant(std::string_view name);
std::string variant_name(Variant v);

struct ModelParams {
  Dims dims;
  Widths widths;
  Variant variant;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;

  PriorNet prior_user;
  PriorNet prior_item;
  InferenceNet inf_user;
  InferenceNet inf_item;
  DecoderNet dec_user;
  DecoderNet dec_item;
  InteractionNet interact;

  // Every layer in a fixed order (checkpoint order).
  std::vector<LayerParams*> layers();
  std::vector<const LayerParams*> layers() const;
  std::size_t parameter_count() const;
};

// Glorot-uniform weights, zero biases, log-variance head biases at -1.
ModelParams init_model(const Dims& dims, const Widths& widths, Variant variant, std::uint64_t seed);

// Batched building blocks. Feature/input matrices have one entity per row.
GaussianVars prior_forward(const PriorNet& net, Var features);
GaussianVars inference_forward(const InferenceNet& net, Var inputs);
GaussianVars inference_forward(const InferenceNet& net, Tape& tape, autodiff::SparseMatrix inputs);
// Row-wise [dense | binary] concatenation as a sparse inference-network input.
autodiff::SparseMatrix sparse_inputs(const Matrix& features, const Matrix& rows);
Var decoder_forward(const DecoderNet& net, Var latent);
Var interaction_forward(const InteractionNet& net, Var u, Var v);
GaussianVars standard_normal(Tape& tape, Eigen::Index rows, Eigen::Index dim);
// Prior of the given side honouring the variant flags.
GaussianVars side_prior(const ModelParams& params, Side side, Var features);

// mean + exp(log_var / 2) * eps, row by row.
Var reparameterize(GaussianVars g, const Matrix& eps);
// KL(q || p) per row, rows x 1.
Var kl_diag(GaussianVars q, GaussianVars p);
// sum_c t log p + (1 - t) log(1 - p) per row, rows x 1.
Var bernoulli_loglik(Var probs, const Matrix& targets);

// Single-entity conveniences built on the batched versions.
DiagGaussian prior(const ModelParams& params, Side side, std::span<const double> features);
DiagGaussian infer(const ModelParams& params, Side side, std::span<const double> features,
                   std::span<const double> collab_row);
Vector reparameterize(const DiagGaussian& g, std::span<const double> eps);
double kl_diag(const DiagGaussian& q, const DiagGaussian& p);
double bernoulli_loglik(std::span<const double> targets, std::span<const double> probs);

// Network inputs for a minibatch of (user, item, label) pairs. Each distinct
// user/item is encoded once; pair_user/pair_item index those rows.
struct BatchInputs {
  Matrix user_features;  // U x P
  Matrix user_rows;      // U x N, R_i.
  Matrix item_features;  // V x Q
  Matrix item_rows;      // V x M, R_.j
  std::vector<Eigen::Index> pair_user;
  std::vector<Eigen::Index> pair_item;
  Vector labels;  // E

  std::size_t pairs() const { return pair_user.size(); }
};

BatchInputs assemble_batch(const data::InteractionMatrix& train, const data::SideInfo& side,
                           std::span<const data::TrainingPair> pairs);

// Standard-normal draws, (E * K) x D per side; row e * K + k is sample k of pair e.
struct Noise {
  Matrix user;
  Matrix item;
  std::size_t samples = 1;
};

Noise draw_noise(std::size_t pairs, std::size_t samples, std::size_t latent, Rng& rng);

struct LossTerms {
  Var loss;  // 1x1, minimised
  double user_loglik = 0.0;
  double item_loglik = 0.0;
  double pair_loglik = 0.0;
  double user_kl = 0.0;
  double item_kl = 0.0;
};

// Minibatch negative ELBO:
//   (1/E) sum_pairs [ -(1/K) sum_k (log p(R_i.|u^k) + log p(R_.j|v^k) + log p(R_ij|u^k, v^k))
//                     + KL(q(u_i) || p(u_i|f_i)) + KL(q(v_j) || p(v_j|g_j)) ]
LossTerms negative_elbo(Tape& tape, const ModelParams& params, const BatchInputs& batch, const Noise& noise);

// Loss contribution of one pair with externally supplied noise (K x D each).
double elbo_pair(const ModelParams& params, std::span<const double> collab_row, std::span<const double> collab_col,
                 std::span<const double> user_features, std::span<const double> item_features, double label,
                 const Matrix& eps_u, const Matrix& eps_v);

// (1/K) sum_k log p(R_ij | u^k, v^k) for given samples (K x D each).
double expectation_term(const ModelParams& params, const Matrix& u_samples, const Matrix& v_samples, double label);

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace nvhcf::model
