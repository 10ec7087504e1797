#pragma once

#include <filesystem>
#include <memory>
#include <mutex>
#include <unordered_map>

#include "sit/autodiff.hpp"
#include "sit/image.hpp"
#include "sit/schedule.hpp"

namespace sit {

/// Noise-prediction model handle. `t` is the timestep of the model's own
/// training schedule (a respaced sampler passes the mapped original t).
/// predict() on a tape exposes the gradient path through the network for
/// the full manifold-corrected guidance gradient.
class ScoreModel {
 public:
  virtual ~ScoreModel() = default;
  virtual ad::Var predict(ad::Tape& tape, ad::Var x, int h, int w, int c, int t) const = 0;
  Image predict(const Image& x, int t) const;
  virtual const NoiseSchedule& base_schedule() const = 0;
};

/// Closed-form optimal predictor for data ~ N(mean, stddev²·I):
/// eps*(x, t) = sqrt(1-ab)·(x − sqrt(ab)·mean) / (ab·stddev² + 1 − ab).
class AnalyticGaussianScore final : public ScoreModel {
 public:
  AnalyticGaussianScore(NoiseSchedule base, Image mean, double stddev);

  using ScoreModel::predict;

  ad::Var predict(ad::Tape& tape, ad::Var x, int h, int w, int c, int t) const override;
  const NoiseSchedule& base_schedule() const override { return base_; }

 private:
  NoiseSchedule base_;
  Image mean_;
  double stddev_;
};

/// Cached im2col index plans for 3×3 convolutions, keyed by (h, w, c).
class Im2colCache {
 public:
  Im2colCache() = default;
  Im2colCache(const Im2colCache& o) : plans_(o.plans_) {}
  Im2colCache(Im2colCache&& o) noexcept : plans_(std::move(o.plans_)) {}
  Im2colCache& operator=(Im2colCache o) {
    plans_ = std::move(o.plans_);
    return *this;
  }

  std::shared_ptr<const std::vector<int>> get(int h, int w, int c) const;

 private:
  mutable std::mutex mu_;
  mutable std::unordered_map<std::uint64_t, std::shared_ptr<const std::vector<int>>> plans_;
};

/// Weights of the small 3-layer conv net, flat row-major.
struct ToyScoreWeights {
  int channels = 32;
  int image_channels = 3;
  Eigen::ArrayXd w1, b1, wt1;  // [C×(c_in·9)], [C], [C×4]
  Eigen::ArrayXd w2, b2, wt2;  // [C×(C·9)],   [C], [C×4]
  Eigen::ArrayXd w3, b3;       // [c_in×(C·9)], [c_in]

  static ToyScoreWeights random_init(int channels, int image_channels, std::uint64_t seed);
  std::vector<Eigen::ArrayXd*> params();
};

/// Time conditioning features: {sqrt(ab), sqrt(1-ab), ab, 1}.
Eigen::Array4d time_features(const NoiseSchedule& base, int t);

/// Forward pass with caller-owned weight nodes (so the same graph serves
/// both training and inference).
ad::Var toy_conv_forward(ad::Tape& tape, const std::vector<ad::Var>& weight_vars, int channels,
                         ad::Var x, int h, int w, int c, const Eigen::Array4d& tfeat,
                         const Im2colCache& cache);

/// Small residual-free conv score model for the synthetic test world.
class ToyConvScore final : public ScoreModel {
 public:
  ToyConvScore(NoiseSchedule base, ToyScoreWeights weights);

  using ScoreModel::predict;

  ad::Var predict(ad::Tape& tape, ad::Var x, int h, int w, int c, int t) const override;
  const NoiseSchedule& base_schedule() const override { return base_; }
  const ToyScoreWeights& weights() const { return weights_; }

  void save(const std::filesystem::path& path) const;
  static ToyConvScore load(const std::filesystem::path& path);

 private:
  NoiseSchedule base_;
  ToyScoreWeights weights_;
  Im2colCache cache_;
};

}  // namespace sit
