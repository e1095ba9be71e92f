#include "nvhcf/model.hpp"

#include <cmath>
#include <unordered_map>

#include "nvhcf/errors.hpp"

namespace nvhcf::model {

namespace ad = autodiff;

Variant parse_variant(std::string_view name) {
  if (name == "nvh") return {true, true};
  if (name == "nvh-n") return {false, false};
  if (name == "nvh-u") return {true, false};
  if (name == "nvh-i") return {false, true};
  throw ContractError("unknown variant '" + std::string(name) + "' (expected nvh|nvh-n|nvh-u|nvh-i)");
}

std::string variant_name(Variant v) {
  if (v.use_user_prior && v.use_item_prior) return "nvh";
  if (v.use_user_prior) return "nvh-u";
  if (v.use_item_prior) return "nvh-i";
  return "nvh-n";
}

std::vector<LayerParams*> ModelParams::layers() {
  return {&prior_user.hidden,    &prior_user.mean_head,   &prior_user.log_var_head, &prior_item.hidden,
          &prior_item.mean_head, &prior_item.log_var_head, &inf_user.hidden1,       &inf_user.hidden2,
          &inf_user.mean_head,   &inf_user.log_var_head,   &inf_item.hidden1,       &inf_item.hidden2,
          &inf_item.mean_head,   &inf_item.log_var_head,   &dec_user.hidden1,       &dec_user.hidden2,
          &dec_user.output,      &dec_item.hidden1,        &dec_item.hidden2,       &dec_item.output,
          &interact.hidden1,     &interact.hidden2,        &interact.output};
}

std::vector<const LayerParams*> ModelParams::layers() const {
  auto mutable_layers = const_cast<ModelParams*>(this)->layers();
  return {mutable_layers.begin(), mutable_layers.end()};
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const LayerParams* l : layers()) n += static_cast<std::size_t>(l->size());
  return n;
}

ModelParams init_model(const Dims& dims, const Widths& widths, Variant variant, std::uint64_t seed) {
  if (dims.users == 0 || dims.items == 0 || dims.user_features == 0 || dims.item_features == 0 || dims.latent < 2)
    throw ContractError("model dimensions must be positive and latent >= 2");
  const auto D = static_cast<Eigen::Index>(dims.latent);
  const auto M = static_cast<Eigen::Index>(dims.users);
  const auto N = static_cast<Eigen::Index>(dims.items);
  const auto P = static_cast<Eigen::Index>(dims.user_features);
  const auto Q = static_cast<Eigen::Index>(dims.item_features);
  const auto ph = static_cast<Eigen::Index>(widths.prior_hidden);
  const auto ih1 = static_cast<Eigen::Index>(widths.inference_hidden1);
  const auto ih2 = static_cast<Eigen::Index>(widths.inference_hidden2);
  const auto dh1 = static_cast<Eigen::Index>(widths.decoder_hidden1);
  const auto dh2 = static_cast<Eigen::Index>(widths.decoder_hidden2);

  ModelParams p;
  p.dims = dims;
  p.widths = widths;
  p.variant = variant;
  p.seed = seed;
  p.prior_user = {LayerParams(P, ph), LayerParams(ph, D), LayerParams(ph, D)};
  p.prior_item = {LayerParams(Q, ph), LayerParams(ph, D), LayerParams(ph, D)};
  p.inf_user = {LayerParams(P + N, ih1), LayerParams(ih1, ih2), LayerParams(ih2, D), LayerParams(ih2, D)};
  p.inf_item = {LayerParams(Q + M, ih1), LayerParams(ih1, ih2), LayerParams(ih2, D), LayerParams(ih2, D)};
  p.dec_user = {LayerParams(D, dh1), LayerParams(dh1, dh2), LayerParams(dh2, N)};
  p.dec_item = {LayerParams(D, dh1), LayerParams(dh1, dh2), LayerParams(dh2, M)};
  p.interact = {LayerParams(2 * D, D), LayerParams(D, D / 2), LayerParams(D / 2, 1)};

  std::uint64_t index = 0;
  for (LayerParams* layer : p.layers()) {
    Rng rng = Rng::derive(seed, {0x696e6974ULL, index++});
    const double limit = std::sqrt(6.0 / static_cast<double>(layer->in_dim() + layer->out_dim()));
    for (Eigen::Index k = 0; k < layer->weight.size(); ++k)
      layer->weight.data()[k] = (2.0 * rng.uniform() - 1.0) * limit;
  }
  for (LayerParams* head : {&p.prior_user.log_var_head, &p.prior_item.log_var_head, &p.inf_user.log_var_head,
                            &p.inf_item.log_var_head})
    head->bias.setConstant(-1.0);
  return p;
}

GaussianVars prior_forward(const PriorNet& net, Var features) {
  Var h = ad::relu(ad::affine(features, net.hidden));
  return {ad::affine(h, net.mean_head), ad::clamp(ad::affine(h, net.log_var_head), -kLogVarClamp, kLogVarClamp)};
}

GaussianVars inference_forward(const InferenceNet& net, Var inputs) {
  Var h = ad::relu(ad::affine(inputs, net.hidden1));
  h = ad::relu(ad::affine(h, net.hidden2));
  return {ad::affine(h, net.mean_head), ad::clamp(ad::affine(h, net.log_var_head), -kLogVarClamp, kLogVarClamp)};
}

GaussianVars inference_forward(const InferenceNet& net, Tape& tape, autodiff::SparseMatrix inputs) {
  Var h = ad::relu(ad::affine(tape, std::move(inputs), net.hidden1));
  h = ad::relu(ad::affine(h, net.hidden2));
  return {ad::affine(h, net.mean_head), ad::clamp(ad::affine(h, net.log_var_head), -kLogVarClamp, kLogVarClamp)};
}

autodiff::SparseMatrix sparse_inputs(const Matrix& features, const Matrix& rows) {
  if (features.rows() != rows.rows()) throw DimensionError("sparse_inputs: row counts differ");
  std::vector<Eigen::Triplet<double>> entries;
  for (Eigen::Index r = 0; r < features.rows(); ++r) {
    for (Eigen::Index c = 0; c < features.cols(); ++c)
      if (features(r, c) != 0.0) entries.emplace_back(r, c, features(r, c));
    for (Eigen::Index c = 0; c < rows.cols(); ++c)
      if (rows(r, c) != 0.0) entries.emplace_back(r, features.cols() + c, rows(r, c));
  }
  autodiff::SparseMatrix m(features.rows(), features.cols() + rows.cols());
  m.setFromTriplets(entries.begin(), entries.end());
  return m;
}

Var decoder_forward(const DecoderNet& net, Var latent) {
  Var h = ad::relu(ad::affine(latent, net.hidden1));
  h = ad::relu(ad::affine(h, net.hidden2));
  return ad::sigmoid(ad::affine(h, net.output));
}

Var interaction_forward(const InteractionNet& net, Var u, Var v) {
  Var h = ad::relu(ad::affine(ad::concat_cols(u, v), net.hidden1));
  h = ad::relu(ad::affine(h, net.hidden2));
  return ad::sigmoid(ad::affine(h, net.output));
}

GaussianVars standard_normal(Tape& tape, Eigen::Index rows, Eigen::Index dim) {
  return {tape.constant(Matrix::Zero(rows, dim)), tape.constant(Matrix::Zero(rows, dim))};
}

GaussianVars side_prior(const ModelParams& params, Side side, Var features) {
  const bool enabled = side == Side::User ? params.variant.use_user_prior : params.variant.use_item_prior;
  if (!enabled) return standard_normal(features.tape(), features.rows(), static_cast<Eigen::Index>(params.dims.latent));
  return prior_forward(side == Side::User ? params.prior_user : params.prior_item, features);
}

Var reparameterize(GaussianVars g, const Matrix& eps) {
  if (eps.rows() != g.mean.rows() || eps.cols() != g.mean.cols())
    throw DimensionError("reparameterize: noise " + std::to_string(eps.rows()) + "x" + std::to_string(eps.cols()) +
                         " does not match distribution " + std::to_string(g.mean.rows()) + "x" +
                         std::to_string(g.mean.cols()));
  Var std_dev = ad::exp(ad::scale(g.log_var, 0.5));
  return ad::add(g.mean, ad::mul(std_dev, eps));
}

Var kl_diag(GaussianVars q, GaussianVars p) {
  const Matrix& mq = q.mean.value();
  const Matrix& lq = q.log_var.value();
  const Matrix& mp = p.mean.value();
  const Matrix& lp = p.log_var.value();
  if (mq.rows() != mp.rows() || mq.cols() != mp.cols() || lq.rows() != lp.rows() || lq.cols() != lp.cols() ||
      mq.rows() != lq.rows() || mq.cols() != lq.cols())
    throw DimensionError("kl_diag: distributions have different shapes");

  const auto var_q = lq.array().exp();
  const auto inv_var_p = (-lp.array()).exp();
  const auto diff = (mq - mp).array();
  Matrix terms = 0.5 * (lp.array() - lq.array() + (var_q + diff.square()) * inv_var_p - 1.0);
  Matrix out = terms.rowwise().sum();

  return q.mean.tape().record(
      "kl_diag", std::move(out), {q.mean, q.log_var, p.mean, p.log_var},
      [q, p](const Matrix& g, std::span<Matrix* const> pg) {
        const auto& mq = q.mean.value().array();
        const auto& lq = q.log_var.value().array();
        const auto& mp = p.mean.value().array();
        const auto& lp = p.log_var.value().array();
        const Matrix inv_var_p = (-lp).exp();
        const Matrix diff = mq - mp;
        const auto gcol = g.col(0);
        auto rows_scaled = [&](const Matrix& m) {
          Matrix out = m;
          out.array().colwise() *= gcol.array();
          return out;
        };
        if (pg[0] != nullptr) *pg[0] += rows_scaled(diff.cwiseProduct(inv_var_p));
        if (pg[1] != nullptr) *pg[1] += rows_scaled(0.5 * (lq.exp() * inv_var_p.array() - 1.0).matrix());
        if (pg[2] != nullptr) *pg[2] -= rows_scaled(diff.cwiseProduct(inv_var_p));
        if (pg[3] != nullptr)
          *pg[3] += rows_scaled(0.5 * (1.0 - (lq.exp() + diff.array().square()) * inv_var_p.array()).matrix());
      });
}

Var bernoulli_loglik(Var probs, const Matrix& targets) {
  const Matrix& pv = probs.value();
  if (pv.rows() != targets.rows() || pv.cols() != targets.cols())
    throw DimensionError("bernoulli_loglik: probabilities " + std::to_string(pv.rows()) + "x" +
                         std::to_string(pv.cols()) + " vs targets " + std::to_string(targets.rows()) + "x" +
                         std::to_string(targets.cols()));
  const auto p = pv.array().max(kProbClamp).min(1.0 - kProbClamp);
  Matrix out = (targets.array() * p.log() + (1.0 - targets.array()) * (1.0 - p).log()).matrix().rowwise().sum();
  return probs.tape().record("bernoulli_loglik", std::move(out), {probs},
                             [probs, targets](const Matrix& g, std::span<Matrix* const> pg) {
                               if (pg[0] == nullptr) return;
                               const auto pv = probs.value().array();
                               const auto t = targets.array();
                               const auto inside = (pv >= kProbClamp && pv <= 1.0 - kProbClamp);
                               Matrix d = inside.select(t / pv - (1.0 - t) / (1.0 - pv), 0.0);
                               d.array().colwise() *= g.col(0).array();
                               *pg[0] += d;
                             });
}

namespace {

Matrix as_row(std::span<const double> v) {
  Matrix m(1, static_cast<Eigen::Index>(v.size()));
  for (std::size_t k = 0; k < v.size(); ++k) m(0, static_cast<Eigen::Index>(k)) = v[k];
  return m;
}

Matrix concat_row(std::span<const double> a, std::span<const double> b) {
  Matrix m(1, static_cast<Eigen::Index>(a.size() + b.size()));
  for (std::size_t k = 0; k < a.size(); ++k) m(0, static_cast<Eigen::Index>(k)) = a[k];
  for (std::size_t k = 0; k < b.size(); ++k) m(0, static_cast<Eigen::Index>(a.size() + k)) = b[k];
  return m;
}

DiagGaussian to_value(const GaussianVars& g) {
  return {g.mean.value().row(0).transpose(), g.log_var.value().row(0).transpose()};
}

GaussianVars to_vars(Tape& tape, const DiagGaussian& g) {
  return {tape.constant(g.mean.transpose()), tape.constant(g.log_var.transpose())};
}

void check_dim(std::string_view what, std::size_t got, std::size_t expected) {
  if (got != expected)
    throw DimensionError(std::string(what) + ": got length " + std::to_string(got) + ", expected " +
                         std::to_string(expected));
}

}  // namespace

DiagGaussian prior(const ModelParams& params, Side side, std::span<const double> features) {
  check_dim("prior features", features.size(), side == Side::User ? params.dims.user_features : params.dims.item_features);
  Tape tape;
  return to_value(side_prior(params, side, tape.constant(as_row(features))));
}

DiagGaussian infer(const ModelParams& params, Side side, std::span<const double> features,
                   std::span<const double> collab_row) {
  const bool user = side == Side::User;
  check_dim("infer features", features.size(), user ? params.dims.user_features : params.dims.item_features);
  check_dim("infer feedback", collab_row.size(), user ? params.dims.items : params.dims.users);
  Tape tape;
  return to_value(inference_forward(user ? params.inf_user : params.inf_item, tape.constant(concat_row(features, collab_row))));
}

Vector reparameterize(const DiagGaussian& g, std::span<const double> eps) {
  check_dim("reparameterize noise", eps.size(), static_cast<std::size_t>(g.dim()));
  Vector out(g.dim());
  for (Eigen::Index d = 0; d < g.dim(); ++d)
    out[d] = g.mean[d] + std::exp(0.5 * std::clamp(g.log_var[d], -kLogVarClamp, kLogVarClamp)) * eps[static_cast<std::size_t>(d)];
  return out;
}

double kl_diag(const DiagGaussian& q, const DiagGaussian& p) {
  if (q.dim() != p.dim()) throw DimensionError("kl_diag: dimensions differ");
  Tape tape;
  return kl_diag(to_vars(tape, q), to_vars(tape, p)).value()(0, 0);
}

double bernoulli_loglik(std::span<const double> targets, std::span<const double> probs) {
  check_dim("bernoulli_loglik", probs.size(), targets.size());
  Tape tape;
  return bernoulli_loglik(tape.constant(as_row(probs)), as_row(targets)).value()(0, 0);
}

BatchInputs assemble_batch(const data::InteractionMatrix& train, const data::SideInfo& side,
                           std::span<const data::TrainingPair> pairs) {
  if (pairs.empty()) throw ContractError("empty minibatch");
  BatchInputs b;
  std::vector<data::UserId> users;
  std::vector<data::ItemId> items;
  std::unordered_map<data::UserId, Eigen::Index> user_row;
  std::unordered_map<data::ItemId, Eigen::Index> item_row;
  for (const auto& p : pairs) {
    auto [ui, new_user] = user_row.try_emplace(p.user, static_cast<Eigen::Index>(users.size()));
    if (new_user) users.push_back(p.user);
    auto [ii, new_item] = item_row.try_emplace(p.item, static_cast<Eigen::Index>(items.size()));
    if (new_item) items.push_back(p.item);
    b.pair_user.push_back(ui->second);
    b.pair_item.push_back(ii->second);
  }
  const auto U = static_cast<Eigen::Index>(users.size());
  const auto V = static_cast<Eigen::Index>(items.size());
  b.user_features.resize(U, side.user_dim());
  b.user_rows = Matrix::Zero(U, static_cast<Eigen::Index>(train.items()));
  for (Eigen::Index r = 0; r < U; ++r) {
    b.user_features.row(r) = side.user_features.row(users[static_cast<std::size_t>(r)]);
    for (data::ItemId j : train.items_of(users[static_cast<std::size_t>(r)])) b.user_rows(r, j) = 1.0;
  }
  b.item_features.resize(V, side.item_dim());
  b.item_rows = Matrix::Zero(V, static_cast<Eigen::Index>(train.users()));
  for (Eigen::Index r = 0; r < V; ++r) {
    b.item_features.row(r) = side.item_features.row(items[static_cast<std::size_t>(r)]);
    for (data::UserId u : train.users_of(items[static_cast<std::size_t>(r)])) b.item_rows(r, u) = 1.0;
  }
  b.labels.resize(static_cast<Eigen::Index>(pairs.size()));
  for (std::size_t e = 0; e < pairs.size(); ++e) b.labels[static_cast<Eigen::Index>(e)] = pairs[e].label;
  return b;
}

Noise draw_noise(std::size_t pairs, std::size_t samples, std::size_t latent, Rng& rng) {
  const auto rows = static_cast<Eigen::Index>(pairs * samples);
  Noise n;
  n.samples = samples;
  n.user = rng.normal_matrix(rows, static_cast<Eigen::Index>(latent));
  n.item = rng.normal_matrix(rows, static_cast<Eigen::Index>(latent));
  return n;
}

LossTerms negative_elbo(Tape& tape, const ModelParams& params, const BatchInputs& batch, const Noise& noise) {
  const std::size_t E = batch.pairs();
  const std::size_t K = noise.samples;
  const auto D = static_cast<Eigen::Index>(params.dims.latent);
  if (E == 0) throw ContractError("empty minibatch");
  if (K == 0) throw ContractError("at least one sample per pair is required");
  if (batch.pair_item.size() != E || static_cast<std::size_t>(batch.labels.size()) != E)
    throw DimensionError("batch pair arrays disagree in length");
  if (static_cast<std::size_t>(noise.user.rows()) != E * K || static_cast<std::size_t>(noise.item.rows()) != E * K ||
      noise.user.cols() != D || noise.item.cols() != D)
    throw DimensionError("noise must be (pairs * samples) x latent for both sides");

  const GaussianVars q_user =
      inference_forward(params.inf_user, tape, sparse_inputs(batch.user_features, batch.user_rows));
  const GaussianVars q_item =
      inference_forward(params.inf_item, tape, sparse_inputs(batch.item_features, batch.item_rows));
  const GaussianVars p_user = side_prior(params, Side::User, tape.constant(batch.user_features));
  const GaussianVars p_item = side_prior(params, Side::Item, tape.constant(batch.item_features));
  Var kl_user = kl_diag(q_user, p_user);
  Var kl_item = kl_diag(q_item, p_item);

  std::vector<Eigen::Index> sample_user, sample_item;
  sample_user.reserve(E * K);
  sample_item.reserve(E * K);
  Matrix user_targets(static_cast<Eigen::Index>(E * K), batch.user_rows.cols());
  Matrix item_targets(static_cast<Eigen::Index>(E * K), batch.item_rows.cols());
  Matrix labels(static_cast<Eigen::Index>(E * K), 1);
  for (std::size_t e = 0; e < E; ++e) {
    for (std::size_t k = 0; k < K; ++k) {
      const auto r = static_cast<Eigen::Index>(e * K + k);
      sample_user.push_back(batch.pair_user[e]);
      sample_item.push_back(batch.pair_item[e]);
      user_targets.row(r) = batch.user_rows.row(batch.pair_user[e]);
      item_targets.row(r) = batch.item_rows.row(batch.pair_item[e]);
      labels(r, 0) = batch.labels[static_cast<Eigen::Index>(e)];
    }
  }

  const GaussianVars q_user_rows{ad::gather_rows(q_user.mean, sample_user), ad::gather_rows(q_user.log_var, sample_user)};
  const GaussianVars q_item_rows{ad::gather_rows(q_item.mean, sample_item), ad::gather_rows(q_item.log_var, sample_item)};
  Var u = reparameterize(q_user_rows, noise.user);
  Var v = reparameterize(q_item_rows, noise.item);

  Var ll_user = ad::sum(bernoulli_loglik(decoder_forward(params.dec_user, u), user_targets));
  Var ll_item = ad::sum(bernoulli_loglik(decoder_forward(params.dec_item, v), item_targets));
  Var ll_pair = ad::sum(bernoulli_loglik(interaction_forward(params.interact, u, v), labels));
  Var kl_u = ad::sum(ad::gather_rows(kl_user, batch.pair_user));
  Var kl_v = ad::sum(ad::gather_rows(kl_item, batch.pair_item));

  const double per_sample = 1.0 / static_cast<double>(E * K);
  const double per_pair = 1.0 / static_cast<double>(E);
  Var recon = ad::scale(ad::add(ad::add(ll_user, ll_item), ll_pair), per_sample);
  Var kl = ad::scale(ad::add(kl_u, kl_v), per_pair);

  LossTerms terms;
  terms.loss = ad::sub(kl, recon);
  terms.user_loglik = ll_user.value()(0, 0) * per_sample;
  terms.item_loglik = ll_item.value()(0, 0) * per_sample;
  terms.pair_loglik = ll_pair.value()(0, 0) * per_sample;
  terms.user_kl = kl_u.value()(0, 0) * per_pair;
  terms.item_kl = kl_v.value()(0, 0) * per_pair;
  return terms;
}

double elbo_pair(const ModelParams& params, std::span<const double> collab_row, std::span<const double> collab_col,
                 std::span<const double> user_features, std::span<const double> item_features, double label,
                 const Matrix& eps_u, const Matrix& eps_v) {
  check_dim("elbo_pair feedback row", collab_row.size(), params.dims.items);
  check_dim("elbo_pair feedback column", collab_col.size(), params.dims.users);
  check_dim("elbo_pair user features", user_features.size(), params.dims.user_features);
  check_dim("elbo_pair item features", item_features.size(), params.dims.item_features);
  if (eps_u.rows() < 1 || eps_u.rows() != eps_v.rows()) throw ContractError("elbo_pair needs K >= 1 samples per side");
  BatchInputs b;
  b.user_features = as_row(user_features);
  b.user_rows = as_row(collab_row);
  b.item_features = as_row(item_features);
  b.item_rows = as_row(collab_col);
  b.pair_user = {0};
  b.pair_item = {0};
  b.labels = Vector::Constant(1, label);
  Noise noise{eps_u, eps_v, static_cast<std::size_t>(eps_u.rows())};
  Tape tape;
  return negative_elbo(tape, params, b, noise).loss.value()(0, 0);
}

double expectation_term(const ModelParams& params, const Matrix& u_samples, const Matrix& v_samples, double label) {
  if (u_samples.rows() != v_samples.rows() || u_samples.rows() == 0)
    throw ContractError("expectation_term needs the same positive number of user and item samples");
  Tape tape;
  Var probs = interaction_forward(params.interact, tape.constant(u_samples), tape.constant(v_samples));
  const Matrix labels = Matrix::Constant(u_samples.rows(), 1, label);
  return bernoulli_loglik(probs, labels).value().mean();
}

}  // namespace nvhcf::model
