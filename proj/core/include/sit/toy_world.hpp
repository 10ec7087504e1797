#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <vector>

#include "sit/extractors.hpp"
#include "sit/image.hpp"
#include "sit/rng.hpp"
#include "sit/score_model.hpp"

namespace sit::toy {

enum class Domain { a, b };

/// Two-domain synthetic world: one bright shape (ellipse or box) on a dark
/// background. Structure is the shape mask; domain is the fill hue
/// (domain a is red-dominant, domain b blue-dominant).
struct WorldConfig {
  int size = 32;
  double background = -0.85;
  double hot_min = 0.5, hot_max = 0.9;    // dominant channel
  double cold_min = -0.85, cold_max = -0.45;
  double radius_min = 0.25, radius_max = 0.42;  // fraction of image side
  double mask_threshold = -0.2;                 // max-channel cut for mask recovery
};

struct Sample {
  Image img;
  std::vector<std::uint8_t> mask;  // 1 inside the shape
  Domain domain = Domain::a;
};

Sample make_sample(RngStream& rng, std::optional<Domain> domain, const WorldConfig& cfg);

/// Mask recovered from pixel values by the max-channel threshold.
std::vector<std::uint8_t> extract_mask(const Image& img, const WorldConfig& cfg);

double mask_iou(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b);

/// Mean extractor cls over `count` fresh samples of a domain.
Eigen::VectorXd domain_centroid_cls(const StructureSemanticExtractor& ex, Domain domain, int count,
                                    std::uint64_t seed, const WorldConfig& cfg);

struct TrainConfig {
  int steps = 1600;
  int batch = 8;
  int channels = 32;
  double lr = 2e-3;
  std::uint64_t seed = 11;
  int t_train = 1000;
  double beta_min = 1e-4, beta_max = 0.02;
  int dataset_size = 1024;
  WorldConfig world;
  int progress_every = 200;
};

/// DDPM noise-prediction training of the toy conv net on both domains,
/// Adam, fixed seed. Runs in minutes on a desktop CPU.
ToyConvScore train_score_model(const TrainConfig& cfg, std::ostream* progress = nullptr);

}  // namespace sit::toy
