#include "nvhcf/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <random>
#include <string>

#include "nvhcf/errors.hpp"

namespace nvhcf::autodiff {

namespace {

std::string shape(const Matrix& m) { return std::to_string(m.rows()) + "x" + std::to_string(m.cols()); }

void require_same_tape(Var a, Var b) {
  if (&a.tape() != &b.tape()) throw ContractError("operands recorded on different tapes");
}

void require_same_shape(std::string_view op, const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape(a) + " vs " + shape(b));
}

}  // namespace

const Matrix& Var::value() const { return tape_->value(id_); }
const Matrix& Var::grad() const { return tape_->grad(id_); }

const Matrix& Tape::grad(std::size_t id) const {
  static const Matrix kEmpty;
  const Node& n = nodes_[id];
  return n.grad.size() == 0 ? kEmpty : n.grad;
}

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Matrix value) {
  Node n;
  n.value = std::move(value);
  n.op = "constant";
  return push(std::move(n));
}

Var Tape::variable(Matrix value) {
  Node n;
  n.value = std::move(value);
  n.op = "variable";
  n.requires_grad = true;
  return push(std::move(n));
}

Var Tape::record(std::string_view op, Matrix value, std::vector<Var> parents, BackwardFn backward) {
  if (!value.allFinite()) throw NumericalError(std::string(op) + " produced a non-finite value");
  Node n;
  n.value = std::move(value);
  n.op = op;
  n.backward = std::move(backward);
  n.parents.reserve(parents.size());
  for (const Var& p : parents) {
    if (&p.tape() != this) throw ContractError(std::string(op) + ": parent recorded on a different tape");
    n.parents.push_back(p.id());
    n.requires_grad = n.requires_grad || nodes_[p.id()].requires_grad;
  }
  return push(std::move(n));
}

Var Tape::affine(Var x, const LayerParams& layer) {
  const Matrix& xv = x.value();
  if (xv.cols() != layer.weight.cols())
    throw DimensionError("affine: input " + shape(xv) + " does not match weight " + shape(layer.weight));
  if (layer.bias.size() != layer.weight.rows())
    throw DimensionError("affine: bias length " + std::to_string(layer.bias.size()) + " does not match weight " +
                         shape(layer.weight));
  Matrix out(xv.rows(), layer.weight.rows());
  out.noalias() = xv * layer.weight.transpose();
  out.rowwise() += layer.bias.transpose();

  const std::size_t xid = x.id();
  Var v = record("affine", std::move(out), {x}, [this, xid, &layer](const Matrix& g, std::span<Matrix* const> pg) {
    auto [it, inserted] = grads_->try_emplace(&layer, LayerParams::zeros_like(layer));
    it->second.weight.noalias() += g.transpose() * nodes_[xid].value;
    it->second.bias.noalias() += g.colwise().sum().transpose();
    if (pg[0] != nullptr) pg[0]->noalias() += g * layer.weight;
  });
  nodes_[v.id()].layer = &layer;
  nodes_[v.id()].requires_grad = true;
  return v;
}

Var Tape::affine(SparseMatrix x, const LayerParams& layer) {
  if (x.cols() != layer.weight.cols())
    throw DimensionError("affine: input " + std::to_string(x.rows()) + "x" + std::to_string(x.cols()) +
                         " does not match weight " + shape(layer.weight));
  if (layer.bias.size() != layer.weight.rows())
    throw DimensionError("affine: bias length " + std::to_string(layer.bias.size()) + " does not match weight " +
                         shape(layer.weight));
  // Row-major copy of W^T so each nonzero reads one contiguous row.
  const Matrix wt = layer.weight.transpose();
  Matrix out(x.rows(), layer.weight.rows());
  out.noalias() = x * wt;
  out.rowwise() += layer.bias.transpose();

  auto input = std::make_shared<const SparseMatrix>(std::move(x));
  Var v = record("affine_sparse", std::move(out), {}, [this, input, &layer](const Matrix& g, std::span<Matrix* const>) {
    auto [it, inserted] = grads_->try_emplace(&layer, LayerParams::zeros_like(layer));
    Matrix gwt = Matrix::Zero(layer.weight.cols(), layer.weight.rows());
    const SparseMatrix& xs = *input;
    for (Eigen::Index r = 0; r < xs.outerSize(); ++r)
      for (SparseMatrix::InnerIterator e(xs, r); e; ++e) gwt.row(e.col()).noalias() += e.value() * g.row(r);
    it->second.weight += gwt.transpose();
    it->second.bias.noalias() += g.colwise().sum().transpose();
  });
  nodes_[v.id()].layer = &layer;
  nodes_[v.id()].requires_grad = true;
  return v;
}

const Gradients& Tape::backward(Var loss) {
  param_grads_.clear();
  return backward(loss, param_grads_);
}

const Gradients& Tape::backward(Var loss, Gradients& into) {
  if (&loss.tape() != this) throw ContractError("backward: loss recorded on a different tape");
  const Matrix& lv = loss.value();
  if (lv.rows() != 1 || lv.cols() != 1) throw ContractError("backward: loss must be 1x1, got " + shape(lv));

  for (auto& [layer, g] : into) {
    g.weight.setZero();
    g.bias.setZero();
  }
  grads_ = &into;
  for (Node& n : nodes_) n.grad.resize(0, 0);
  nodes_[loss.id()].grad = Matrix::Ones(1, 1);

  std::vector<Matrix*> parent_grads;
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0 || !n.backward || !n.requires_grad) continue;
    parent_grads.clear();
    for (std::size_t p : n.parents) {
      Node& parent = nodes_[p];
      if (!parent.requires_grad) {
        parent_grads.push_back(nullptr);
        continue;
      }
      if (parent.grad.size() == 0) parent.grad = Matrix::Zero(parent.value.rows(), parent.value.cols());
      parent_grads.push_back(&parent.grad);
    }
    n.backward(n.grad, parent_grads);
  }
  grads_ = &param_grads_;
  return into;
}

Var affine(Var x, const LayerParams& layer) { return x.tape().affine(x, layer); }
Var affine(Tape& tape, SparseMatrix x, const LayerParams& layer) { return tape.affine(std::move(x), layer); }

Var relu(Var x) {
  Matrix out = x.value().cwiseMax(0.0);
  const Var in = x;
  return x.tape().record("relu", std::move(out), {x}, [in](const Matrix& g, std::span<Matrix* const> pg) {
    if (pg[0] == nullptr) return;
    const Matrix& xv = in.value();
    pg[0]->array() += (xv.array() > 0.0).select(g.array(), 0.0);
  });
}

Var sigmoid(Var x) {
  Matrix out = x.value().unaryExpr([](double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  });
  Tape& t = x.tape();
  const std::size_t yid = t.size();  // id this node is about to receive
  return t.record("sigmoid", std::move(out), {x}, [&t, yid](const Matrix& g, std::span<Matrix* const> pg) {
    if (pg[0] == nullptr) return;
    const auto s = t.value(yid).array();
    pg[0]->array() += g.array() * s * (1.0 - s);
  });
}

Var exp(Var x) {
  const Var in = x;
  Matrix out = x.value().unaryExpr([](double v) { return std::exp(std::clamp(v, -kExpClamp, kExpClamp)); });
  Tape& t = x.tape();
  const std::size_t yid = t.size();
  return t.record("exp", std::move(out), {x}, [&t, yid, in](const Matrix& g, std::span<Matrix* const> pg) {
    if (pg[0] == nullptr) return;
    const auto xv = in.value().array();
    const auto inside = (xv >= -kExpClamp && xv <= kExpClamp);
    pg[0]->array() += inside.select(g.array() * t.value(yid).array(), 0.0);
  });
}

Var clamp(Var x, double lo, double hi) {
  const Var in = x;
  Matrix out = x.value().cwiseMax(lo).cwiseMin(hi);
  return x.tape().record("clamp", std::move(out), {x}, [in, lo, hi](const Matrix& g, std::span<Matrix* const> pg) {
    if (pg[0] == nullptr) return;
    const auto xv = in.value().array();
    pg[0]->array() += (xv >= lo && xv <= hi).select(g.array(), 0.0);
  });
}

Var add(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape("add", a.value(), b.value());
  Matrix out = a.value() + b.value();
  return a.tape().record("add", std::move(out), {a, b}, [](const Matrix& g, std::span<Matrix* const> pg) {
    if (pg[0] != nullptr) *pg[0] += g;
    if (pg[1] != nullptr) *pg[1] += g;
  });
}

Var sub(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape("sub", a.value(), b.value());
  Matrix out = a.value() - b.value();
  return a.tape().record("sub", std::move(out), {a, b}, [](const Matrix& g, std::span<Matrix* const> pg) {
    if (pg[0] != nullptr) *pg[0] += g;
    if (pg[1] != nullptr) *pg[1] -= g;
  });
}

Var mul(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape("mul", a.value(), b.value());
  Matrix out = a.value().cwiseProduct(b.value());
  return a.tape().record("mul", std::move(out), {a, b}, [a, b](const Matrix& g, std::span<Matrix* const> pg) {
    if (pg[0] != nullptr) *pg[0] += g.cwiseProduct(b.value());
    if (pg[1] != nullptr) *pg[1] += g.cwiseProduct(a.value());
  });
}

Var mul(Var a, const Matrix& constant) {
  require_same_shape("mul", a.value(), constant);
  Matrix out = a.value().cwiseProduct(constant);
  return a.tape().record("mul_const", std::move(out), {a},
                         [c = constant](const Matrix& g, std::span<Matrix* const> pg) {
                           if (pg[0] != nullptr) *pg[0] += g.cwiseProduct(c);
                         });
}

Var scale(Var a, double s) {
  Matrix out = a.value() * s;
  return a.tape().record("scale", std::move(out), {a}, [s](const Matrix& g, std::span<Matrix* const> pg) {
    if (pg[0] != nullptr) *pg[0] += g * s;
  });
}

Var sum(Var a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return a.tape().record("sum", std::move(out), {a}, [](const Matrix& g, std::span<Matrix* const> pg) {
    if (pg[0] != nullptr) pg[0]->array() += g(0, 0);
  });
}

Var mean(Var a) {
  const auto n = static_cast<double>(a.value().size());
  if (n == 0) throw ContractError("mean of an empty matrix");
  return scale(sum(a), 1.0 / n);
}

Var row_sum(Var a) {
  Matrix out = a.value().rowwise().sum();
  return a.tape().record("row_sum", std::move(out), {a}, [](const Matrix& g, std::span<Matrix* const> pg) {
    if (pg[0] != nullptr) pg[0]->colwise() += g.col(0);
  });
}

Var concat_cols(Var a, Var b) {
  require_same_tape(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.rows() != bv.rows())
    throw DimensionError("concat_cols: row mismatch " + shape(av) + " vs " + shape(bv));
  Matrix out(av.rows(), av.cols() + bv.cols());
  out << av, bv;
  const Eigen::Index split = av.cols();
  return a.tape().record("concat_cols", std::move(out), {a, b},
                         [split](const Matrix& g, std::span<Matrix* const> pg) {
                           if (pg[0] != nullptr) *pg[0] += g.leftCols(split);
                           if (pg[1] != nullptr) *pg[1] += g.rightCols(g.cols() - split);
                         });
}

Var gather_rows(Var a, std::vector<Eigen::Index> index) {
  const Matrix& av = a.value();
  Matrix out(static_cast<Eigen::Index>(index.size()), av.cols());
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] < 0 || index[r] >= av.rows())
      throw DimensionError("gather_rows: index " + std::to_string(index[r]) + " out of range for " + shape(av));
    out.row(static_cast<Eigen::Index>(r)) = av.row(index[r]);
  }
  return a.tape().record("gather_rows", std::move(out), {a},
                         [idx = std::move(index)](const Matrix& g, std::span<Matrix* const> pg) {
                           if (pg[0] == nullptr) return;
                           for (std::size_t r = 0; r < idx.size(); ++r)
                             pg[0]->row(idx[r]) += g.row(static_cast<Eigen::Index>(r));
                         });
}

FiniteDiffReport finite_diff_check(const std::function<Var(Tape&)>& build_loss, std::span<LayerParams* const> params,
                                   const FiniteDiffOptions& options) {
  Gradients analytic;
  {
    Tape tape;
    Var loss = build_loss(tape);
    analytic = tape.backward(loss);
  }
  auto evaluate = [&] {
    Tape tape;
    return build_loss(tape).value()(0, 0);
  };

  std::mt19937_64 rng(options.seed);
  FiniteDiffReport report;
  const double h = options.step;

  auto check_tensor = [&](double* data, Eigen::Index n, const double* grad) {
    std::vector<Eigen::Index> coords(static_cast<std::size_t>(n));
    std::iota(coords.begin(), coords.end(), Eigen::Index{0});
    if (options.max_per_tensor != 0 && coords.size() > options.max_per_tensor) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.max_per_tensor);
    }
    for (Eigen::Index c : coords) {
      const double saved = data[c];
      data[c] = saved + h;
      const double up = evaluate();
      data[c] = saved - h;
      const double down = evaluate();
      data[c] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = grad != nullptr ? grad[c] : 0.0;
      const double rel = std::abs(a - numeric) / (std::abs(numeric) + 1e-8);
      ++report.coordinates;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  };

  for (LayerParams* layer : params) {
    auto it = analytic.find(layer);
    const LayerParams* g = it == analytic.end() ? nullptr : &it->second;
    check_tensor(layer->weight.data(), layer->weight.size(), g ? g->weight.data() : nullptr);
    check_tensor(layer->bias.data(), layer->bias.size(), g ? g->bias.data() : nullptr);
  }
  return report;
}

}  // namespace nvhcf::autodiff
