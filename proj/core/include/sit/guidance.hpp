#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sit/autodiff.hpp"
#include "sit/image.hpp"

namespace sit {

/// Per-token key matrix from one attention layer plus the last-layer
/// classification token of the same image.
struct FeatureBundle {
  Eigen::MatrixXd keys;  // n × d_k, one row per spatial token
  Eigen::VectorXd cls;

  int n() const { return int(keys.rows()); }
  int key_dim() const { return int(keys.cols()); }
  int cls_dim() const { return int(cls.size()); }
};

/// Tape-resident counterpart of FeatureBundle.
struct BundleVar {
  ad::Var keys;  // flat n×d_k, row-major
  int n = 0, dk = 0;
  ad::Var cls;
  int dc = 0;
};

struct EmbeddingVector {
  Eigen::VectorXd v;
  bool normalized = false;
  int dim() const { return int(v.size()); }
};

/// All loss weights. lambda3 weighs the mode's style term (directional
/// embedding loss in text mode, cls/MSE style loss in image mode).
struct GuidanceWeights {
  double lambda1 = 200.0;   // contrastive structure
  double lambda2 = 100.0;   // self-similarity
  double lambda3 = 2000.0;  // style term
  double lambda4 = 1000.0;  // semantic divergence
  double lambda5 = 200.0;   // range regularizer
  double lambda_mse = 1.5;
  double lambda_s = 0.4;
  double lambda_i = 0.2;
  double tau = 0.07;
  double lambda_id = 0.0;

  void validate() const;
};

enum class GuidanceMode { text, image };

// ---- structure losses ----

/// Cosine self-similarity of the key rows: symmetric, unit diagonal.
/// Rejects zero-norm rows.
ad::Var self_similarity(ad::Tape& tape, ad::Var keys, int n, int d);
Eigen::MatrixXd self_similarity(const FeatureBundle& b);

/// Frobenius norm of S(src) − S(out).
ad::Var l_ssim(ad::Tape& tape, const Eigen::MatrixXd& s_src, ad::Var keys_out, int n, int d);
double l_ssim(const FeatureBundle& src, const FeatureBundle& out);

/// Patchwise infoNCE over key rows: positives are same-position pairs,
/// negatives are the other source positions. Sum over positions. n >= 2.
ad::Var l_cont(ad::Tape& tape, const FeatureBundle& src, ad::Var keys_out, int n, int d, double tau);
double l_cont(const FeatureBundle& src, const FeatureBundle& out, double tau);

// ---- style losses ----

/// Per-part L2 normalization, concatenation, final renormalization.
EmbeddingVector embed_ensemble(const std::vector<Eigen::VectorXd>& parts);
ad::Var embed_ensemble(ad::Tape& tape, const std::vector<ad::Var>& parts);

/// Direction target  E_T(d_trg) + lambda_i·E_I(x_src) − lambda_s·E_T(d_src).
Eigen::VectorXd embedding_direction_target(const EmbeddingVector& trg_text,
                                           const EmbeddingVector& src_img,
                                           const EmbeddingVector& src_text, double lambda_s,
                                           double lambda_i);

/// Mean over augmented views of −cos(v_trg, view embedding).
ad::Var l_clip(ad::Tape& tape, const std::vector<ad::Var>& view_embeddings,
               const Eigen::VectorXd& v_trg);
double l_clip(const std::vector<EmbeddingVector>& out_views, const EmbeddingVector& trg_text,
              const EmbeddingVector& src_img, const EmbeddingVector& src_text, double lambda_s,
              double lambda_i);

/// ‖cls_trg − cls_out‖₂ + lambda_mse·‖x_trg − x‖₂ (unnormalized norms).
ad::Var l_sty(ad::Tape& tape, const Eigen::VectorXd& cls_trg, ad::Var cls_out,
              const Eigen::ArrayXd& x_trg, ad::Var x, double lambda_mse);
double l_sty(const FeatureBundle& trg, const FeatureBundle& out, const Image& x_trg, const Image& x,
             double lambda_mse);

/// −‖cls_now − cls_prev‖₂ (non-positive; maximizing drift from the
/// previous denoised estimate).
ad::Var l_sem(ad::Tape& tape, ad::Var cls_now, const Eigen::VectorXd& cls_prev);
double l_sem(const Eigen::VectorXd& cls_now, const Eigen::VectorXd& cls_prev);

/// mean(max(|x|−1, 0)²): mean squared excursion outside [-1, 1].
ad::Var l_rng(ad::Tape& tape, ad::Var x);
double l_rng(const Image& x);

// ---- total ----

struct LossTerms {
  double cont = 0, ssim = 0, style = 0, sem = 0, rng = 0, id = 0;
  double total = 0;
  bool sem_active = false;
};

/// Constant-side inputs of the total loss. Pointers may be null when the
/// corresponding weight is zero (or, for prev_cls, on the first step).
struct TotalLossRefs {
  const FeatureBundle* src_bundle = nullptr;     // cont
  const Eigen::MatrixXd* s_src = nullptr;        // ssim
  const Eigen::VectorXd* v_trg = nullptr;        // text style
  const Eigen::VectorXd* trg_cls = nullptr;      // image style
  const Eigen::ArrayXd* x_trg = nullptr;         // image style MSE term
  const Eigen::VectorXd* prev_cls = nullptr;     // sem
  const Eigen::VectorXd* src_identity = nullptr; // identity hook
};

/// Tape-side inputs of the total loss. Invalid Vars are allowed wherever
/// the matching weight is zero.
struct TotalLossVars {
  BundleVar out_bundle;
  std::vector<ad::Var> view_embeddings;  // text style
  ad::Var x0;                            // denoised estimate
  ad::Var identity_embedding;            // identity hook
};

/// Weighted sum of the active terms for the given mode. Fills `terms`
/// with the unweighted per-term values and the weighted total.
ad::Var total_loss(ad::Tape& tape, GuidanceMode mode, const TotalLossRefs& refs,
                   const TotalLossVars& vars, const GuidanceWeights& w, LossTerms* terms);

}  // namespace sit
