#pragma once

#include <functional>
#include <memory>
#include <vector>

#include <Eigen/Core>

namespace sit::ad {

using Array = Eigen::ArrayXd;

class Tape;

/// Handle to one tape node. Cheap to copy; only meaningful together with
/// the tape that produced it.
struct Var {
  Tape* tape = nullptr;
  int idx = -1;
  bool valid() const { return tape != nullptr && idx >= 0; }
};

/// Reverse-mode tape over flat double arrays. Build a graph forward with
/// the free functions below, call backward() once on a scalar node, then
/// read gradients of any differentiable leaf.
///
/// Matrix-valued nodes are stored row-major and carry their dimensions at
/// the call sites; the tape itself only sees flat arrays.
class Tape {
 public:
  /// Differentiable leaf.
  Var input(Array v);
  /// Non-differentiable leaf (no gradient tracked or propagated).
  Var constant(Array v);
  Var constant(double v);

  const Array& val(Var v) const;
  double scalar(Var v) const;  // value of a size-1 node

  /// Gradient of the last backward() target w.r.t. v. Zero array if v was
  /// not reached (or is a constant).
  Array grad(Var v) const;

  void backward(Var loss);

  /// Appends a node. `back` receives the tape and the node's own index and
  /// must push gradient into the node's parents via accumulate(). Pass an
  /// empty function for leaves.
  Var emit(Array value, const std::vector<Var>& parents, std::function<void(Tape&, int)> back);

  bool tracked(int idx) const { return nodes_[idx].needs; }
  /// Gradient flowing into node idx (valid inside backward callbacks).
  const Array& out_grad(int idx) const { return nodes_[idx].grad; }
  void accumulate(int idx, const Array& g);
  void accumulate(Var v, const Array& g) { accumulate(v.idx, g); }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Array value;
    Array grad;
    bool needs = false;
    std::function<void(Tape&, int)> back;
  };
  std::vector<Node> nodes_;
};

// ---- elementwise (operands must have equal sizes) ----
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var neg(Var a);
Var adds(Var a, double s);
Var muls(Var a, double s);

Var exp(Var a);
Var log(Var a);
Var sqrt(Var a);
Var square(Var a);
Var abs(Var a);
Var relu(Var a);
Var tanh(Var a);
Var sigmoid(Var a);
Var silu(Var a);

// ---- reductions / shape ----
Var sum(Var a);
Var mean(Var a);
Var dot(Var a, Var b);
/// L2 norm; the derivative is singular at exactly zero, callers must not
/// differentiate through a zero vector.
Var norm2(Var a);
Var broadcast(Var scalar, int n);
Var concat(const std::vector<Var>& parts);
Var slice(Var a, int offset, int len);

// ---- matrix ops, row-major ----
Var matmul(Var a, int m, int k, Var b, int n);     // (m×k)·(k×n)
Var matmul_nt(Var a, int m, int k, Var b, int n);  // (m×k)·(n×k)ᵀ
Var row_sum(Var a, int rows, int cols);
Var add_rowwise(Var m, int rows, int cols, Var v);
Var mul_rowwise(Var m, int rows, int cols, Var v);

// ---- structural ----
/// out[p] = a[idx[p]], idx[p] == -1 reads as 0.
Var gather(Var a, std::shared_ptr<const std::vector<int>> idx);
/// out[p] = Σ_f wts[p*fan+f] · a[idx[p*fan+f]]  (idx -1 contributes 0).
/// Covers bilinear warps, resizes, flips and box downsampling.
Var lincomb_gather(Var a, std::shared_ptr<const std::vector<int>> idx,
                   std::shared_ptr<const std::vector<double>> wts, int fan, int n_out);

/// Variable-fan sparse linear map in CSR form: output p reads taps
/// [offsets[p], offsets[p+1]).
Var lincomb_gather_csr(Var a, std::shared_ptr<const std::vector<int>> idx,
                       std::shared_ptr<const std::vector<double>> wts,
                       std::shared_ptr<const std::vector<int>> offsets);

/// Custom node with caller-supplied forward value and vector-Jacobian
/// product. `vjp` maps the output gradient to per-input gradients, in the
/// order of `inputs`. Used to splice external (out-of-process) models into
/// the graph.
Var custom(Tape& tape, const std::vector<Var>& inputs, Array value,
           std::function<std::vector<Array>(const Array& out_grad)> vjp);

/// cos(a, b); rejects vectors with norm below 1e-12.
Var cosine(Var a, Var b);

}  // namespace sit::ad
