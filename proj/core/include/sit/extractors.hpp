#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "sit/autodiff.hpp"
#include "sit/guidance.hpp"
#include "sit/image.hpp"
#include "sit/rng.hpp"
#include "sit/warp.hpp"

namespace sit {

/// Source of key rows and cls tokens. Implementations are immutable after
/// construction and safe to call concurrently; they are deterministic and
/// expose gradients by building their forward pass on the caller's tape.
class StructureSemanticExtractor {
 public:
  virtual ~StructureSemanticExtractor() = default;

  virtual int layer_index() const = 0;
  /// Expected input size (h, w); (0, 0) accepts any size.
  virtual std::pair<int, int> input_size() const = 0;
  virtual int n_tokens(int h, int w) const = 0;
  virtual int key_dim(int c) const = 0;
  virtual int cls_dim(int c) const = 0;

  virtual BundleVar extract(ad::Tape& tape, ad::Var x, int h, int w, int c) const = 0;

  FeatureBundle extract(const Image& x) const;

 protected:
  void check_input_size(int h, int w) const;
};

/// Deterministic test-double extractor over non-overlapping patches.
///
/// Key row per patch: for each channel (patch mean − image mean, mean
/// horizontal forward difference, mean vertical forward difference), plus
/// a trailing constant 1, so constant images still have nonzero keys.
/// => d_k = 3C + 1. Keys are invariant to global color shifts.
///
/// cls: per channel, `bins` Gaussian soft-histogram responses
/// mean_p exp(−(v_p − center_b)² / (2·bandwidth²)) over centers evenly
/// spaced in [-1, 1] — sensitive to the color distribution, blind to
/// pixel arrangement. => d_c = bins·C.
class ToyPatchExtractor final : public StructureSemanticExtractor {
 public:
  explicit ToyPatchExtractor(int patch, int bins = 8, double bandwidth = 0.15,
                             std::pair<int, int> input = {0, 0});

  using StructureSemanticExtractor::extract;

  int layer_index() const override { return 0; }
  std::pair<int, int> input_size() const override { return input_; }
  int n_tokens(int h, int w) const override;
  int key_dim(int c) const override { return 3 * c + 1; }
  int cls_dim(int c) const override { return bins_ * c; }
  int patch() const { return patch_; }

  BundleVar extract(ad::Tape& tape, ad::Var x, int h, int w, int c) const override;

  /// cls of an all-zero image (the documented baseline constant).
  Eigen::VectorXd zero_image_cls(int c) const;

 private:
  int patch_, bins_;
  double bandwidth_;
  std::pair<int, int> input_;
};

/// Paired text/image encoder with a shared embedding space. The image
/// path is differentiable; text is constant per prompt.
class TextImageEmbedder {
 public:
  virtual ~TextImageEmbedder() = default;

  virtual std::vector<std::string> model_ids() const = 0;
  virtual int embed_dim() const = 0;
  virtual std::pair<int, int> input_size() const = 0;

  virtual ad::Var embed_image(ad::Tape& tape, ad::Var x, int h, int w, int c) const = 0;
  virtual EmbeddingVector embed_text(const std::string& prompt) const = 0;

  EmbeddingVector embed_image(const Image& x) const;
};

/// Test-double embedder over a small color-word vocabulary. Ensemble of
/// two sub-models (channel means with a constant bias slot, coarse color
/// histogram) combined with embed_ensemble. embed_text(w) equals
/// embed_image of a solid image of that color, so matched word/image
/// pairs have cosine exactly 1.
class ToyColorEmbedder final : public TextImageEmbedder {
 public:
  explicit ToyColorEmbedder(int channels = 3);

  using TextImageEmbedder::embed_image;

  std::vector<std::string> model_ids() const override { return {"toy-mean", "toy-hist"}; }
  int embed_dim() const override;
  std::pair<int, int> input_size() const override { return {0, 0}; }

  ad::Var embed_image(ad::Tape& tape, ad::Var x, int h, int w, int c) const override;
  EmbeddingVector embed_text(const std::string& prompt) const override;

  static const std::vector<std::pair<std::string, Eigen::Vector3d>>& vocabulary();

 private:
  int channels_;
};

/// Optional identity-feature hook; inert unless registered with the
/// sampler. The toy version embeds a box-downsampled grayscale image.
class IdentityEmbedder {
 public:
  virtual ~IdentityEmbedder() = default;
  virtual ad::Var embed(ad::Tape& tape, ad::Var x, int h, int w, int c) const = 0;
  Eigen::VectorXd embed(const Image& x) const;
};

class ToyIdentityEmbedder final : public IdentityEmbedder {
 public:
  explicit ToyIdentityEmbedder(int factor = 4) : factor_(factor) {}

  using IdentityEmbedder::embed;
  ad::Var embed(ad::Tape& tape, ad::Var x, int h, int w, int c) const override;

 private:
  int factor_;
};

// ---- augmentation ----

struct AugmentConfig {
  bool identity_only = false;
  double crop_min = 0.7;        // minimum crop scale
  double flip_prob = 0.5;
  double max_rotate_deg = 10.0;
  double max_translate = 0.1;   // in normalized coordinates
  double noise_mix = 0.3;       // blend factor of the noise-mixed view
};

/// One augmented view: a fixed warp, optionally blended with a fixed
/// noise field. Applies identically to images and tape nodes.
struct ViewPlan {
  WarpPlan warp;
  double noise_alpha = 0.0;
  Eigen::ArrayXd noise;

  Image apply(const Image& x) const;
  ad::Var apply(ad::Tape& tape, ad::Var x) const;
};

/// M views drawn from `rng`: M−1 random geometric warps (crop-resize,
/// flip, small rotation/translation) and one noise-mixed view. With
/// identity_only set, all M views are exact copies.
std::vector<ViewPlan> make_view_plans(int h, int w, int c, int M, RngStream& rng,
                                      const AugmentConfig& cfg);

std::vector<Image> augment(const Image& x, int M, std::uint64_t seed, const AugmentConfig& cfg = {});

}  // namespace sit
