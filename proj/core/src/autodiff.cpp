#include "sit/autodiff.hpp"

#include <cmath>

#include <Eigen/Dense>

#include "sit/errors.hpp"

namespace sit::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<const RowMat>;
using MutMatMap = Eigen::Map<RowMat>;

void check_same_tape(Var a, Var b) {
  if (a.tape != b.tape) throw InvalidArgument("autodiff: operands from different tapes");
}

void check_same_size(const Array& a, const Array& b, const char* op) {
  if (a.size() != b.size()) throw InvalidArgument(std::string("autodiff: size mismatch in ") + op);
}

}  // namespace

Var Tape::input(Array v) {
  nodes_.push_back(Node{std::move(v), {}, true, {}});
  return Var{this, int(nodes_.size()) - 1};
}

Var Tape::constant(Array v) {
  nodes_.push_back(Node{std::move(v), {}, false, {}});
  return Var{this, int(nodes_.size()) - 1};
}

Var Tape::constant(double v) {
  Array a(1);
  a[0] = v;
  return constant(std::move(a));
}

const Array& Tape::val(Var v) const { return nodes_.at(v.idx).value; }

double Tape::scalar(Var v) const {
  const Array& a = val(v);
  if (a.size() != 1) throw InvalidArgument("autodiff: scalar() on non-scalar node");
  return a[0];
}

Array Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.idx);
  if (n.grad.size() == 0) return Array::Zero(n.value.size());
  return n.grad;
}

void Tape::accumulate(int idx, const Array& g) {
  Node& n = nodes_[idx];
  if (!n.needs) return;
  if (n.grad.size() == 0)
    n.grad = g;
  else
    n.grad += g;
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw InvalidArgument("autodiff: backward() on foreign var");
  if (val(loss).size() != 1) throw InvalidArgument("autodiff: backward() target must be scalar");
  for (Node& n : nodes_) n.grad.resize(0);
  nodes_[loss.idx].grad = Array::Ones(1);
  for (int i = loss.idx; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.needs && n.grad.size() != 0 && n.back) n.back(*this, i);
  }
}

Var Tape::emit(Array value, const std::vector<Var>& parents, std::function<void(Tape&, int)> back) {
  bool needs = false;
  for (Var p : parents) {
    if (p.tape != this) throw InvalidArgument("autodiff: parent from another tape");
    needs = needs || nodes_[p.idx].needs;
  }
  nodes_.push_back(Node{std::move(value), {}, needs, needs ? std::move(back) : std::function<void(Tape&, int)>{}});
  return Var{this, int(nodes_.size()) - 1};
}

// ---------- elementwise ----------

Var add(Var a, Var b) {
  check_same_tape(a, b);
  Tape& t = *a.tape;
  check_same_size(t.val(a), t.val(b), "add");
  int ia = a.idx, ib = b.idx;
  return t.emit(t.val(a) + t.val(b), {a, b}, [ia, ib](Tape& tp, int self) {
    tp.accumulate(ia, tp.out_grad(self));
    tp.accumulate(ib, tp.out_grad(self));
  });
}

Var sub(Var a, Var b) {
  check_same_tape(a, b);
  Tape& t = *a.tape;
  check_same_size(t.val(a), t.val(b), "sub");
  int ia = a.idx, ib = b.idx;
  return t.emit(t.val(a) - t.val(b), {a, b}, [ia, ib](Tape& tp, int self) {
    tp.accumulate(ia, tp.out_grad(self));
    tp.accumulate(ib, Array(-tp.out_grad(self)));
  });
}

Var mul(Var a, Var b) {
  check_same_tape(a, b);
  Tape& t = *a.tape;
  check_same_size(t.val(a), t.val(b), "mul");
  int ia = a.idx, ib = b.idx;
  return t.emit(t.val(a) * t.val(b), {a, b}, [ia, ib](Tape& tp, int self) {
    tp.accumulate(ia, Array(tp.out_grad(self) * tp.val(Var{&tp, ib})));
    tp.accumulate(ib, Array(tp.out_grad(self) * tp.val(Var{&tp, ia})));
  });
}

Var div(Var a, Var b) {
  check_same_tape(a, b);
  Tape& t = *a.tape;
  check_same_size(t.val(a), t.val(b), "div");
  int ia = a.idx, ib = b.idx;
  return t.emit(t.val(a) / t.val(b), {a, b}, [ia, ib](Tape& tp, int self) {
    const Array& bv = tp.val(Var{&tp, ib});
    tp.accumulate(ia, Array(tp.out_grad(self) / bv));
    tp.accumulate(ib, Array(-tp.out_grad(self) * tp.val(Var{&tp, ia}) / (bv * bv)));
  });
}

Var neg(Var a) { return muls(a, -1.0); }

Var adds(Var a, double s) {
  Tape& t = *a.tape;
  int ia = a.idx;
  return t.emit(t.val(a) + s, {a}, [ia](Tape& tp, int self) { tp.accumulate(ia, tp.out_grad(self)); });
}

Var muls(Var a, double s) {
  Tape& t = *a.tape;
  int ia = a.idx;
  return t.emit(t.val(a) * s, {a},
                [ia, s](Tape& tp, int self) { tp.accumulate(ia, Array(tp.out_grad(self) * s)); });
}

Var exp(Var a) {
  Tape& t = *a.tape;
  int ia = a.idx;
  return t.emit(t.val(a).exp(), {a}, [ia](Tape& tp, int self) {
    tp.accumulate(ia, Array(tp.out_grad(self) * tp.val(Var{&tp, self})));
  });
}

Var log(Var a) {
  Tape& t = *a.tape;
  int ia = a.idx;
  return t.emit(t.val(a).log(), {a}, [ia](Tape& tp, int self) {
    tp.accumulate(ia, Array(tp.out_grad(self) / tp.val(Var{&tp, ia})));
  });
}

Var sqrt(Var a) {
  Tape& t = *a.tape;
  int ia = a.idx;
  return t.emit(t.val(a).sqrt(), {a}, [ia](Tape& tp, int self) {
    tp.accumulate(ia, Array(tp.out_grad(self) * 0.5 / tp.val(Var{&tp, self})));
  });
}

Var square(Var a) {
  Tape& t = *a.tape;
  int ia = a.idx;
  return t.emit(t.val(a).square(), {a}, [ia](Tape& tp, int self) {
    tp.accumulate(ia, Array(tp.out_grad(self) * 2.0 * tp.val(Var{&tp, ia})));
  });
}

Var abs(Var a) {
  Tape& t = *a.tape;
  int ia = a.idx;
  return t.emit(t.val(a).abs(), {a}, [ia](Tape& tp, int self) {
    tp.accumulate(ia, Array(tp.out_grad(self) * tp.val(Var{&tp, ia}).sign()));
  });
}

Var relu(Var a) {
  Tape& t = *a.tape;
  int ia = a.idx;
  return t.emit(t.val(a).max(0.0), {a}, [ia](Tape& tp, int self) {
    tp.accumulate(ia, Array(tp.out_grad(self) * (tp.val(Var{&tp, ia}) > 0.0).cast<double>()));
  });
}

Var tanh(Var a) {
  Tape& t = *a.tape;
  int ia = a.idx;
  return t.emit(t.val(a).tanh(), {a}, [ia](Tape& tp, int self) {
    const Array& y = tp.val(Var{&tp, self});
    tp.accumulate(ia, Array(tp.out_grad(self) * (1.0 - y * y)));
  });
}

Var sigmoid(Var a) {
  Tape& t = *a.tape;
  int ia = a.idx;
  Array y = 1.0 / (1.0 + (-t.val(a)).exp());
  return t.emit(std::move(y), {a}, [ia](Tape& tp, int self) {
    const Array& s = tp.val(Var{&tp, self});
    tp.accumulate(ia, Array(tp.out_grad(self) * s * (1.0 - s)));
  });
}

Var silu(Var a) { return mul(a, sigmoid(a)); }

// ---------- reductions / shape ----------

Var sum(Var a) {
  Tape& t = *a.tape;
  int ia = a.idx;
  Array v(1);
  v[0] = t.val(a).sum();
  return t.emit(std::move(v), {a}, [ia](Tape& tp, int self) {
    const Array& av = tp.val(Var{&tp, ia});
    tp.accumulate(ia, Array(Array::Constant(av.size(), tp.out_grad(self)[0])));
  });
}

Var mean(Var a) {
  int n = int(a.tape->val(a).size());
  return muls(sum(a), 1.0 / n);
}

Var dot(Var a, Var b) { return sum(mul(a, b)); }

Var norm2(Var a) { return sqrt(sum(square(a))); }

Var broadcast(Var s, int n) {
  Tape& t = *s.tape;
  if (t.val(s).size() != 1) throw InvalidArgument("autodiff: broadcast() needs a scalar node");
  int is = s.idx;
  return t.emit(Array::Constant(n, t.val(s)[0]), {s}, [is](Tape& tp, int self) {
    Array g(1);
    g[0] = tp.out_grad(self).sum();
    tp.accumulate(is, g);
  });
}

Var concat(const std::vector<Var>& parts) {
  if (parts.empty()) throw InvalidArgument("autodiff: concat() of nothing");
  Tape& t = *parts.front().tape;
  Eigen::Index total = 0;
  for (Var p : parts) total += t.val(p).size();
  Array v(total);
  Eigen::Index off = 0;
  std::vector<std::pair<int, std::pair<Eigen::Index, Eigen::Index>>> spans;
  for (Var p : parts) {
    Eigen::Index n = t.val(p).size();
    v.segment(off, n) = t.val(p);
    spans.push_back({p.idx, {off, n}});
    off += n;
  }
  return t.emit(std::move(v), parts, [spans](Tape& tp, int self) {
    const Array& g = tp.out_grad(self);
    for (const auto& [idx, span] : spans) tp.accumulate(idx, Array(g.segment(span.first, span.second)));
  });
}

Var slice(Var a, int offset, int len) {
  Tape& t = *a.tape;
  const Array& av = t.val(a);
  if (offset < 0 || len < 0 || offset + len > av.size()) throw InvalidArgument("autodiff: slice out of range");
  int ia = a.idx;
  return t.emit(Array(av.segment(offset, len)), {a}, [ia, offset, len](Tape& tp, int self) {
    Array g = Array::Zero(tp.val(Var{&tp, ia}).size());
    g.segment(offset, len) = tp.out_grad(self);
    tp.accumulate(ia, g);
  });
}

// ---------- matrix ----------

Var matmul(Var a, int m, int k, Var b, int n) {
  check_same_tape(a, b);
  Tape& t = *a.tape;
  if (t.val(a).size() != Eigen::Index(m) * k || t.val(b).size() != Eigen::Index(k) * n)
    throw InvalidArgument("autodiff: matmul dims");
  MatMap A(t.val(a).data(), m, k), B(t.val(b).data(), k, n);
  Array v(Eigen::Index(m) * n);
  MutMatMap(v.data(), m, n).noalias() = A * B;
  int ia = a.idx, ib = b.idx;
  return t.emit(std::move(v), {a, b}, [ia, ib, m, k, n](Tape& tp, int self) {
    MatMap G(tp.out_grad(self).data(), m, n);
    MatMap A2(tp.val(Var{&tp, ia}).data(), m, k), B2(tp.val(Var{&tp, ib}).data(), k, n);
    if (tp.tracked(ia)) {
      Array ga(Eigen::Index(m) * k);
      MutMatMap(ga.data(), m, k).noalias() = G * B2.transpose();
      tp.accumulate(ia, ga);
    }
    if (tp.tracked(ib)) {
      Array gb(Eigen::Index(k) * n);
      MutMatMap(gb.data(), k, n).noalias() = A2.transpose() * G;
      tp.accumulate(ib, gb);
    }
  });
}

Var matmul_nt(Var a, int m, int k, Var b, int n) {
  check_same_tape(a, b);
  Tape& t = *a.tape;
  if (t.val(a).size() != Eigen::Index(m) * k || t.val(b).size() != Eigen::Index(n) * k)
    throw InvalidArgument("autodiff: matmul_nt dims");
  MatMap A(t.val(a).data(), m, k), B(t.val(b).data(), n, k);
  Array v(Eigen::Index(m) * n);
  MutMatMap(v.data(), m, n).noalias() = A * B.transpose();
  int ia = a.idx, ib = b.idx;
  return t.emit(std::move(v), {a, b}, [ia, ib, m, k, n](Tape& tp, int self) {
    MatMap G(tp.out_grad(self).data(), m, n);
    MatMap A2(tp.val(Var{&tp, ia}).data(), m, k), B2(tp.val(Var{&tp, ib}).data(), n, k);
    if (tp.tracked(ia)) {
      Array ga(Eigen::Index(m) * k);
      MutMatMap(ga.data(), m, k).noalias() = G * B2;
      tp.accumulate(ia, ga);
    }
    if (tp.tracked(ib)) {
      Array gb(Eigen::Index(n) * k);
      MutMatMap(gb.data(), n, k).noalias() = G.transpose() * A2;
      tp.accumulate(ib, gb);
    }
  });
}

Var row_sum(Var a, int rows, int cols) {
  Tape& t = *a.tape;
  if (t.val(a).size() != Eigen::Index(rows) * cols) throw InvalidArgument("autodiff: row_sum dims");
  MatMap A(t.val(a).data(), rows, cols);
  Array v(rows);
  for (int i = 0; i < rows; ++i) v[i] = A.row(i).sum();
  int ia = a.idx;
  return t.emit(std::move(v), {a}, [ia, rows, cols](Tape& tp, int self) {
    const Array& g = tp.out_grad(self);
    Array ga(Eigen::Index(rows) * cols);
    MutMatMap GA(ga.data(), rows, cols);
    for (int i = 0; i < rows; ++i) GA.row(i).setConstant(g[i]);
    tp.accumulate(ia, ga);
  });
}

Var add_rowwise(Var m, int rows, int cols, Var v) {
  check_same_tape(m, v);
  Tape& t = *m.tape;
  if (t.val(m).size() != Eigen::Index(rows) * cols || t.val(v).size() != rows)
    throw InvalidArgument("autodiff: add_rowwise dims");
  Array out = t.val(m);
  MutMatMap O(out.data(), rows, cols);
  for (int i = 0; i < rows; ++i) O.row(i).array() += t.val(v)[i];
  int im = m.idx, iv = v.idx;
  return t.emit(std::move(out), {m, v}, [im, iv, rows, cols](Tape& tp, int self) {
    const Array& g = tp.out_grad(self);
    tp.accumulate(im, g);
    if (tp.tracked(iv)) {
      MatMap G(g.data(), rows, cols);
      Array gv(rows);
      for (int i = 0; i < rows; ++i) gv[i] = G.row(i).sum();
      tp.accumulate(iv, gv);
    }
  });
}

Var mul_rowwise(Var m, int rows, int cols, Var v) {
  check_same_tape(m, v);
  Tape& t = *m.tape;
  if (t.val(m).size() != Eigen::Index(rows) * cols || t.val(v).size() != rows)
    throw InvalidArgument("autodiff: mul_rowwise dims");
  Array out = t.val(m);
  MutMatMap O(out.data(), rows, cols);
  for (int i = 0; i < rows; ++i) O.row(i).array() *= t.val(v)[i];
  int im = m.idx, iv = v.idx;
  return t.emit(std::move(out), {m, v}, [im, iv, rows, cols](Tape& tp, int self) {
    const Array& g = tp.out_grad(self);
    const Array& vv = tp.val(Var{&tp, iv});
    if (tp.tracked(im)) {
      Array gm(Eigen::Index(rows) * cols);
      MatMap G(g.data(), rows, cols);
      MutMatMap GM(gm.data(), rows, cols);
      for (int i = 0; i < rows; ++i) GM.row(i) = G.row(i) * vv[i];
      tp.accumulate(im, gm);
    }
    if (tp.tracked(iv)) {
      MatMap G(g.data(), rows, cols);
      MatMap M2(tp.val(Var{&tp, im}).data(), rows, cols);
      Array gv(rows);
      for (int i = 0; i < rows; ++i) gv[i] = (G.row(i).array() * M2.row(i).array()).sum();
      tp.accumulate(iv, gv);
    }
  });
}

// ---------- structural ----------

Var gather(Var a, std::shared_ptr<const std::vector<int>> idx) {
  Tape& t = *a.tape;
  const Array& av = t.val(a);
  Array v(Eigen::Index(idx->size()));
  for (std::size_t p = 0; p < idx->size(); ++p) {
    int j = (*idx)[p];
    v[p] = j >= 0 ? av[j] : 0.0;
  }
  int ia = a.idx;
  return t.emit(std::move(v), {a}, [ia, idx](Tape& tp, int self) {
    const Array& g = tp.out_grad(self);
    Array ga = Array::Zero(tp.val(Var{&tp, ia}).size());
    for (std::size_t p = 0; p < idx->size(); ++p) {
      int j = (*idx)[p];
      if (j >= 0) ga[j] += g[p];
    }
    tp.accumulate(ia, ga);
  });
}

Var lincomb_gather(Var a, std::shared_ptr<const std::vector<int>> idx,
                   std::shared_ptr<const std::vector<double>> wts, int fan, int n_out) {
  Tape& t = *a.tape;
  if (idx->size() != wts->size() || idx->size() != std::size_t(fan) * n_out)
    throw InvalidArgument("autodiff: lincomb_gather plan sizes");
  const Array& av = t.val(a);
  Array v = Array::Zero(n_out);
  for (int p = 0; p < n_out; ++p) {
    double acc = 0.0;
    for (int f = 0; f < fan; ++f) {
      int j = (*idx)[std::size_t(p) * fan + f];
      if (j >= 0) acc += (*wts)[std::size_t(p) * fan + f] * av[j];
    }
    v[p] = acc;
  }
  int ia = a.idx;
  return t.emit(std::move(v), {a}, [ia, idx, wts, fan, n_out](Tape& tp, int self) {
    const Array& g = tp.out_grad(self);
    Array ga = Array::Zero(tp.val(Var{&tp, ia}).size());
    for (int p = 0; p < n_out; ++p)
      for (int f = 0; f < fan; ++f) {
        int j = (*idx)[std::size_t(p) * fan + f];
        if (j >= 0) ga[j] += (*wts)[std::size_t(p) * fan + f] * g[p];
      }
    tp.accumulate(ia, ga);
  });
}

Var lincomb_gather_csr(Var a, std::shared_ptr<const std::vector<int>> idx,
                       std::shared_ptr<const std::vector<double>> wts,
                       std::shared_ptr<const std::vector<int>> offsets) {
  Tape& t = *a.tape;
  if (idx->size() != wts->size() || offsets->empty() || std::size_t(offsets->back()) != idx->size())
    throw InvalidArgument("autodiff: lincomb_gather_csr plan sizes");
  const int n_out = int(offsets->size()) - 1;
  const Array& av = t.val(a);
  Array v = Array::Zero(n_out);
  for (int p = 0; p < n_out; ++p) {
    double acc = 0.0;
    for (int f = (*offsets)[p]; f < (*offsets)[p + 1]; ++f) {
      int j = (*idx)[f];
      if (j >= 0) acc += (*wts)[f] * av[j];
    }
    v[p] = acc;
  }
  int ia = a.idx;
  return t.emit(std::move(v), {a}, [ia, idx, wts, offsets, n_out](Tape& tp, int self) {
    const Array& g = tp.out_grad(self);
    Array ga = Array::Zero(tp.val(Var{&tp, ia}).size());
    for (int p = 0; p < n_out; ++p)
      for (int f = (*offsets)[p]; f < (*offsets)[p + 1]; ++f) {
        int j = (*idx)[f];
        if (j >= 0) ga[j] += (*wts)[f] * g[p];
      }
    tp.accumulate(ia, ga);
  });
}

Var custom(Tape& tape, const std::vector<Var>& inputs, Array value,
           std::function<std::vector<Array>(const Array& out_grad)> vjp) {
  std::vector<int> in_idx;
  for (Var v : inputs) in_idx.push_back(v.idx);
  return tape.emit(std::move(value), inputs, [in_idx, vjp](Tape& tp, int self) {
    std::vector<Array> gs = vjp(tp.out_grad(self));
    if (gs.size() != in_idx.size()) throw RuntimeFailure("autodiff: custom vjp arity mismatch");
    for (std::size_t i = 0; i < in_idx.size(); ++i) tp.accumulate(in_idx[i], gs[i]);
  });
}

Var cosine(Var a, Var b) {
  Tape& t = *a.tape;
  double na = std::sqrt(t.val(a).square().sum());
  double nb = std::sqrt(t.val(b).square().sum());
  if (na < 1e-12 || nb < 1e-12) throw InvalidArgument("cosine: zero-norm vector");
  return div(dot(a, b), mul(norm2(a), norm2(b)));
}

}  // namespace sit::ad
