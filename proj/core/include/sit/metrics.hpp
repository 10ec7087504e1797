#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sit/extractors.hpp"
#include "sit/image.hpp"

namespace sit {

/// Mean and per-dimension unbiased variance of an n×D feature sample.
struct FeatureStats {
  int n = 0;
  Eigen::VectorXd mu;
  Eigen::VectorXd var_diag;
  int dim() const { return int(mu.size()); }
};

FeatureStats feature_stats(const Eigen::MatrixXd& features);

/// Simplified Fréchet distance between diagonal Gaussians:
/// ‖mu_a − mu_b‖² + Σ_d (sqrt(var_a_d) − sqrt(var_b_d))².
/// This is the full Fréchet distance with off-diagonal covariance ignored;
/// the reading is isolated here so an alternate definition is a
/// one-function swap.
double sfid(const FeatureStats& a, const FeatureStats& b);

enum class SplitRole { generated, reference };

struct ManifestEntry {
  std::string path;
  std::string label;
  SplitRole role = SplitRole::generated;
  std::string pair_path;  // optional source counterpart for perceptual distance
};

struct EvalManifest {
  std::vector<ManifestEntry> entries;
};

/// Tab/space-separated rows: path label role [pair_path]. '#' comments and
/// blank lines are skipped; malformed rows report their line number.
EvalManifest load_manifest(const std::filesystem::path& path);

/// Symmetric perceptual distance, zero on identical images.
class PerceptualMetric {
 public:
  virtual ~PerceptualMetric() = default;
  virtual double distance(const Image& a, const Image& b) const = 0;
};

/// Fallback when no pretrained perceptual adapter is registered:
/// multi-scale RMS distance over box-downsampled octaves.
class MultiScaleL2 final : public PerceptualMetric {
 public:
  explicit MultiScaleL2(std::vector<int> factors = {1, 2, 4}) : factors_(std::move(factors)) {}
  double distance(const Image& a, const Image& b) const override;

 private:
  std::vector<int> factors_;
};

struct ClassScore {
  std::string label;
  int n_generated = 0, n_reference = 0;
  double sfid = 0.0;
};

struct EvalReport {
  double sfid = 0.0;
  double csfid = 0.0;
  std::optional<double> perceptual_mean;
  std::vector<ClassScore> per_class;
};

/// Loads images through `load`, embeds them, and computes SFID over all
/// images plus the class-mean SFID. Perceptual distance is averaged over
/// generated entries that carry a pair path.
EvalReport evaluate_manifest(const EvalManifest& manifest, const TextImageEmbedder& embedder,
                             const std::function<Image(const std::string&)>& load,
                             const PerceptualMetric* perceptual);

/// CSFID over in-memory features: mean over classes of per-class SFID.
double csfid(const std::map<std::string, Eigen::MatrixXd>& generated,
             const std::map<std::string, Eigen::MatrixXd>& reference);

}  // namespace sit
