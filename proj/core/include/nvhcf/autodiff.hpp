#pragma once

// Dense matrices plus a small reverse-mode tape. Every network in the model is
// a stack of affine layers and elementwise activations, so this is all the
// differentiation machinery the rest of the library needs.

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace nvhcf::autodiff {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

// Inputs to exp() are clamped to [-kExpClamp, kExpClamp].
inline constexpr double kExpClamp = 15.0;

struct LayerParams {
  Matrix weight;  // out x in
  Vector bias;    // out

  LayerParams() = default;
  LayerParams(Eigen::Index in, Eigen::Index out) : weight(Matrix::Zero(out, in)), bias(Vector::Zero(out)) {}

  Eigen::Index in_dim() const { return weight.cols(); }
  Eigen::Index out_dim() const { return weight.rows(); }
  Eigen::Index size() const { return weight.size() + bias.size(); }

  static LayerParams zeros_like(const LayerParams& other) { return LayerParams(other.in_dim(), other.out_dim()); }
};

// Gradient of the loss w.r.t. each LayerParams reached during backward().
using Gradients = std::unordered_map<const LayerParams*, LayerParams>;

class Tape;

// Lightweight handle to a node on a Tape.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  const Matrix& grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Dynamic graph recorded in creation order. References returned by value()
// and grad() stay valid for the tape's lifetime. A tape is single-threaded; build
// a fresh one per loss evaluation.
class Tape {
 public:
  // Receives the gradient flowing into the node and one pointer per parent;
  // a null pointer means that parent does not need a gradient.
  using BackwardFn = std::function<void(const Matrix& out_grad, std::span<Matrix* const> parent_grads)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  // Leaf whose gradient is retained and readable through Var::grad().
  Var variable(Matrix value);

  // Records a custom op. Throws NumericalError if `value` is not finite.
  Var record(std::string_view op, Matrix value, std::vector<Var> parents, BackwardFn backward);

  // out[b] = weight * x[b] + bias, for each row b of x.
  Var affine(Var x, const LayerParams& layer);
  // Same as affine() for a constant sparse input (binary feedback rows).
  Var affine(SparseMatrix x, const LayerParams& layer);

  // Reverse sweep from a 1x1 loss. Returns gradients for every layer used by
  // an affine node; node gradients become readable via Var::grad().
  const Gradients& backward(Var loss);
  // Same, accumulating into a caller-owned map whose existing entries are
  // zeroed first and reused (avoids reallocating every step).
  const Gradients& backward(Var loss, Gradients& into);

  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  const Matrix& grad(std::size_t id) const;
  std::string_view op(std::size_t id) const { return nodes_[id].op; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    std::string_view op;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    const LayerParams* layer = nullptr;
    bool requires_grad = false;
  };

  Var push(Node node);

  std::deque<Node> nodes_;
  Gradients param_grads_;
  Gradients* grads_ = &param_grads_;
};

// Elementwise and structural ops. All operands must live on the same tape.
Var affine(Var x, const LayerParams& layer);
Var affine(Tape& tape, SparseMatrix x, const LayerParams& layer);
Var relu(Var x);
Var sigmoid(Var x);
// exp(clamp(x, -kExpClamp, kExpClamp)); zero gradient where clamped.
Var exp(Var x);
Var clamp(Var x, double lo, double hi);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var mul(Var a, const Matrix& constant);
Var scale(Var a, double s);
// 1x1 sum of every entry.
Var sum(Var a);
// 1x1 mean of every entry.
Var mean(Var a);
// rows x 1 sum across columns.
Var row_sum(Var a);
Var concat_cols(Var a, Var b);
// out.row(r) = a.row(index[r]); rows may repeat, gradients accumulate.
Var gather_rows(Var a, std::vector<Eigen::Index> index);

// Central-difference check of every (or a sampled subset of) parameter
// coordinate. `build_loss` must be deterministic for fixed parameter values.
struct FiniteDiffOptions {
  double step = 1e-5;
  // Coordinates checked per tensor (weight and bias separately); 0 checks all.
  std::size_t max_per_tensor = 0;
  std::uint64_t seed = 0;
};

struct FiniteDiffReport {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// Returns max |analytic - numeric| / (|numeric| + 1e-8) over checked coordinates.
FiniteDiffReport finite_diff_check(const std::function<Var(Tape&)>& build_loss, std::span<LayerParams* const> params,
                                   const FiniteDiffOptions& options = {});

}  // namespace nvhcf::autodiff
