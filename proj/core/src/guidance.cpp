#include "sit/guidance.hpp"

#include <cmath>

#include "sit/errors.hpp"

namespace sit {

namespace {

constexpr double kNormFloor = 1e-12;

ad::Var normalized_rows(ad::Tape& tape, ad::Var keys, int n, int d) {
  ad::Var rn = ad::sqrt(ad::row_sum(ad::square(keys), n, d));
  const auto& norms = tape.val(rn);
  for (int i = 0; i < n; ++i)
    if (norms[i] < kNormFloor) throw InvalidArgument("zero-norm key row");
  ad::Var inv = ad::div(tape.constant(Eigen::ArrayXd::Ones(n)), rn);
  return ad::mul_rowwise(keys, n, d, inv);
}

ad::Var keys_constant(ad::Tape& tape, const FeatureBundle& b) {
  Eigen::ArrayXd flat(b.n() * b.key_dim());
  for (int i = 0; i < b.n(); ++i)
    for (int j = 0; j < b.key_dim(); ++j) flat[i * b.key_dim() + j] = b.keys(i, j);
  return tape.constant(flat);
}

ad::Var norm_of_difference(ad::Tape& tape, ad::Var a, const Eigen::VectorXd& b) {
  if (tape.val(a).size() != b.size()) throw InvalidArgument("vector size mismatch");
  return ad::norm2(ad::sub(a, tape.constant(Eigen::ArrayXd(b.array()))));
}

}  // namespace

void GuidanceWeights::validate() const {
  const double ls[] = {lambda1, lambda2, lambda3, lambda4, lambda5, lambda_mse, lambda_id};
  for (double l : ls)
    if (!(l >= 0.0) || !std::isfinite(l)) throw InvalidArgument("loss weights must be finite and >= 0");
  if (!(tau > 0.0) || !std::isfinite(tau)) throw InvalidArgument("tau must be positive");
  if (!std::isfinite(lambda_s) || !std::isfinite(lambda_i))
    throw InvalidArgument("lambda_s/lambda_i must be finite");
}

// ---------- structure ----------

ad::Var self_similarity(ad::Tape& tape, ad::Var keys, int n, int d) {
  ad::Var khat = normalized_rows(tape, keys, n, d);
  return ad::matmul_nt(khat, n, d, khat, n);
}

Eigen::MatrixXd self_similarity(const FeatureBundle& b) {
  ad::Tape tape;
  ad::Var s = self_similarity(tape, keys_constant(tape, b), b.n(), b.key_dim());
  Eigen::MatrixXd out(b.n(), b.n());
  for (int i = 0; i < b.n(); ++i)
    for (int j = 0; j < b.n(); ++j) out(i, j) = tape.val(s)[i * b.n() + j];
  return out;
}

ad::Var l_ssim(ad::Tape& tape, const Eigen::MatrixXd& s_src, ad::Var keys_out, int n, int d) {
  if (s_src.rows() != n || s_src.cols() != n) throw InvalidArgument("l_ssim: similarity size mismatch");
  ad::Var s_out = self_similarity(tape, keys_out, n, d);
  Eigen::ArrayXd flat(n * n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) flat[i * n + j] = s_src(i, j);
  return ad::norm2(ad::sub(s_out, tape.constant(flat)));
}

double l_ssim(const FeatureBundle& src, const FeatureBundle& out) {
  if (src.n() != out.n() || src.key_dim() != out.key_dim())
    throw InvalidArgument("l_ssim: bundle shape mismatch");
  ad::Tape tape;
  ad::Var v = l_ssim(tape, self_similarity(src), keys_constant(tape, out), out.n(), out.key_dim());
  return tape.scalar(v);
}

ad::Var l_cont(ad::Tape& tape, const FeatureBundle& src, ad::Var keys_out, int n, int d, double tau) {
  if (n < 2) throw InvalidArgument("l_cont: needs n >= 2 (no negatives otherwise)");
  if (src.n() != n || src.key_dim() != d) throw InvalidArgument("l_cont: bundle shape mismatch");
  if (!(tau > 0.0)) throw InvalidArgument("l_cont: tau must be positive");
  ad::Var khat_out = normalized_rows(tape, keys_out, n, d);
  ad::Var khat_src = normalized_rows(tape, keys_constant(tape, src), n, d);
  // sim(i, j) = cos(k_i(out), k_j(src)); positives on the diagonal.
  ad::Var logits = ad::muls(ad::matmul_nt(khat_out, n, d, khat_src, n), 1.0 / tau);
  auto diag = std::make_shared<const std::vector<int>>([n] {
    std::vector<int> ix(n);
    for (int i = 0; i < n; ++i) ix[i] = i * n + i;
    return ix;
  }());
  ad::Var pos = ad::gather(logits, diag);
  ad::Var lse = ad::log(ad::row_sum(ad::exp(logits), n, n));
  return ad::sum(ad::sub(lse, pos));
}

double l_cont(const FeatureBundle& src, const FeatureBundle& out, double tau) {
  ad::Tape tape;
  return tape.scalar(l_cont(tape, src, keys_constant(tape, out), out.n(), out.key_dim(), tau));
}

// ---------- style ----------

EmbeddingVector embed_ensemble(const std::vector<Eigen::VectorXd>& parts) {
  if (parts.empty()) throw InvalidArgument("embed_ensemble: empty part list");
  int total = 0;
  for (const auto& p : parts) {
    if (!p.allFinite()) throw InvalidArgument("embed_ensemble: non-finite part");
    if (p.norm() < kNormFloor) throw InvalidArgument("embed_ensemble: zero-norm part");
    total += int(p.size());
  }
  EmbeddingVector out;
  out.v.resize(total);
  int off = 0;
  for (const auto& p : parts) {
    out.v.segment(off, p.size()) = p / p.norm();
    off += int(p.size());
  }
  out.v /= out.v.norm();
  out.normalized = true;
  return out;
}

ad::Var embed_ensemble(ad::Tape& tape, const std::vector<ad::Var>& parts) {
  if (parts.empty()) throw InvalidArgument("embed_ensemble: empty part list");
  std::vector<ad::Var> normed;
  normed.reserve(parts.size());
  for (ad::Var p : parts) {
    if (tape.val(p).matrix().norm() < kNormFloor) throw InvalidArgument("embed_ensemble: zero-norm part");
    ad::Var n = ad::norm2(p);
    normed.push_back(ad::mul(p, ad::broadcast(ad::div(tape.constant(1.0), n), int(tape.val(p).size()))));
  }
  ad::Var cat = ad::concat(normed);
  ad::Var n = ad::norm2(cat);
  return ad::mul(cat, ad::broadcast(ad::div(tape.constant(1.0), n), int(tape.val(cat).size())));
}

Eigen::VectorXd embedding_direction_target(const EmbeddingVector& trg_text,
                                           const EmbeddingVector& src_img,
                                           const EmbeddingVector& src_text, double lambda_s,
                                           double lambda_i) {
  if (trg_text.dim() != src_img.dim() || trg_text.dim() != src_text.dim())
    throw InvalidArgument("embedding dimension mismatch");
  Eigen::VectorXd v = trg_text.v + lambda_i * src_img.v - lambda_s * src_text.v;
  if (v.norm() < kNormFloor) throw InvalidArgument("direction target has zero norm");
  return v;
}

ad::Var l_clip(ad::Tape& tape, const std::vector<ad::Var>& view_embeddings,
               const Eigen::VectorXd& v_trg) {
  if (view_embeddings.empty()) throw InvalidArgument("l_clip: no views");
  if (v_trg.norm() < kNormFloor) throw InvalidArgument("l_clip: zero-norm target");
  ad::Var target = tape.constant(Eigen::ArrayXd(v_trg.array()));
  ad::Var acc = tape.constant(0.0);
  for (ad::Var e : view_embeddings) {
    if (tape.val(e).size() != v_trg.size()) throw InvalidArgument("l_clip: embedding dim mismatch");
    acc = ad::add(acc, ad::neg(ad::cosine(target, e)));
  }
  return ad::muls(acc, 1.0 / double(view_embeddings.size()));
}

double l_clip(const std::vector<EmbeddingVector>& out_views, const EmbeddingVector& trg_text,
              const EmbeddingVector& src_img, const EmbeddingVector& src_text, double lambda_s,
              double lambda_i) {
  Eigen::VectorXd v_trg = embedding_direction_target(trg_text, src_img, src_text, lambda_s, lambda_i);
  ad::Tape tape;
  std::vector<ad::Var> views;
  views.reserve(out_views.size());
  for (const auto& e : out_views) views.push_back(tape.constant(Eigen::ArrayXd(e.v.array())));
  return tape.scalar(l_clip(tape, views, v_trg));
}

ad::Var l_sty(ad::Tape& tape, const Eigen::VectorXd& cls_trg, ad::Var cls_out,
              const Eigen::ArrayXd& x_trg, ad::Var x, double lambda_mse) {
  ad::Var cls_term = norm_of_difference(tape, cls_out, cls_trg);
  if (lambda_mse == 0.0) return cls_term;
  if (tape.val(x).size() != x_trg.size()) throw InvalidArgument("l_sty: image shape mismatch");
  ad::Var pix = ad::norm2(ad::sub(x, tape.constant(x_trg)));
  return ad::add(cls_term, ad::muls(pix, lambda_mse));
}

double l_sty(const FeatureBundle& trg, const FeatureBundle& out, const Image& x_trg, const Image& x,
             double lambda_mse) {
  if (trg.cls_dim() != out.cls_dim()) throw InvalidArgument("l_sty: cls dimension mismatch");
  if (!x_trg.same_shape(x)) throw InvalidArgument("l_sty: image shape mismatch");
  ad::Tape tape;
  ad::Var v = l_sty(tape, trg.cls, tape.constant(Eigen::ArrayXd(out.cls.array())), x_trg.data,
                    tape.constant(x.data), lambda_mse);
  return tape.scalar(v);
}

ad::Var l_sem(ad::Tape& tape, ad::Var cls_now, const Eigen::VectorXd& cls_prev) {
  return ad::neg(norm_of_difference(tape, cls_now, cls_prev));
}

double l_sem(const Eigen::VectorXd& cls_now, const Eigen::VectorXd& cls_prev) {
  if (cls_now.size() != cls_prev.size()) throw InvalidArgument("l_sem: cls dimension mismatch");
  return -(cls_now - cls_prev).norm();
}

ad::Var l_rng(ad::Tape& tape, ad::Var x) {
  (void)tape;
  return ad::mean(ad::square(ad::relu(ad::adds(ad::abs(x), -1.0))));
}

double l_rng(const Image& x) {
  return (x.data.abs() - 1.0).max(0.0).square().mean();
}

// ---------- total ----------

ad::Var total_loss(ad::Tape& tape, GuidanceMode mode, const TotalLossRefs& refs,
                   const TotalLossVars& vars, const GuidanceWeights& w, LossTerms* terms) {
  w.validate();
  LossTerms out;
  ad::Var total = tape.constant(0.0);
  auto take = [&](ad::Var term, double weight, double* slot) {
    *slot = tape.scalar(term);
    total = ad::add(total, ad::muls(term, weight));
  };

  if (w.lambda1 > 0.0) {
    if (!refs.src_bundle) throw InvalidArgument("total_loss: source bundle required for l_cont");
    take(l_cont(tape, *refs.src_bundle, vars.out_bundle.keys, vars.out_bundle.n, vars.out_bundle.dk, w.tau),
         w.lambda1, &out.cont);
  }
  if (w.lambda2 > 0.0) {
    if (!refs.s_src) throw InvalidArgument("total_loss: source similarity required for l_ssim");
    take(l_ssim(tape, *refs.s_src, vars.out_bundle.keys, vars.out_bundle.n, vars.out_bundle.dk), w.lambda2,
         &out.ssim);
  }
  if (w.lambda3 > 0.0) {
    if (mode == GuidanceMode::text) {
      if (!refs.v_trg) throw InvalidArgument("total_loss: text mode needs a direction target");
      take(l_clip(tape, vars.view_embeddings, *refs.v_trg), w.lambda3, &out.style);
    } else {
      if (!refs.trg_cls || !refs.x_trg) throw InvalidArgument("total_loss: image mode needs target bundle");
      take(l_sty(tape, *refs.trg_cls, vars.out_bundle.cls, *refs.x_trg, vars.x0, w.lambda_mse), w.lambda3,
           &out.style);
    }
  }
  if (w.lambda4 > 0.0 && refs.prev_cls != nullptr) {
    // the norm's derivative is singular at zero distance; skip the term
    // when consecutive tokens coincide
    double dist = (tape.val(vars.out_bundle.cls).matrix() - *refs.prev_cls).norm();
    if (dist > 1e-9) {
      take(l_sem(tape, vars.out_bundle.cls, *refs.prev_cls), w.lambda4, &out.sem);
      out.sem_active = true;
    }
  }
  if (w.lambda5 > 0.0) take(l_rng(tape, vars.x0), w.lambda5, &out.rng);
  if (w.lambda_id > 0.0 && refs.src_identity != nullptr && vars.identity_embedding.valid()) {
    take(norm_of_difference(tape, vars.identity_embedding, *refs.src_identity), w.lambda_id, &out.id);
  }

  out.total = tape.scalar(total);
  if (terms) *terms = out;
  return total;
}

}  // namespace sit
