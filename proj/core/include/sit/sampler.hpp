#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sit/extractors.hpp"
#include "sit/guidance.hpp"
#include "sit/image.hpp"
#include "sit/rng.hpp"
#include "sit/schedule.hpp"
#include "sit/score_model.hpp"

namespace sit {

struct SamplerConfig {
  int t_start = 60;            // first reverse timestep after skipping
  int n_resample = 10;         // extra reverse/forward repetitions at t_start
  double restart_threshold = 0.01;
  bool restart_enabled = false;
  int max_restarts = 5;
  GuidanceMode mode = GuidanceMode::text;
  int m_aug = 8;
  std::uint64_t seed = 0;
  bool full_gradient_path = true;  // differentiate through the score net; else eps treated constant
  int snapshot_every = 10;         // x0_hat snapshot cadence, 0 disables
  bool capture_states = false;     // keep every x_{t-1} (tests)
  AugmentConfig aug;

  void validate(const NoiseSchedule& s) const;
};

struct StepRecord {
  int t = 0;       // schedule-local timestep
  int t_orig = 0;  // original model timestep
  bool resample = false;
  LossTerms losses;
  double grad_norm = 0.0;
  std::optional<Image> x0_snapshot;
};

struct TrajectoryRecord {
  std::vector<StepRecord> steps;
  int restarts = 0;
  std::vector<Image> states;  // only with capture_states
  int guided_steps() const { return int(steps.size()); }
};

struct TranslationTask {
  Image x_src;
  std::string d_trg, d_src;      // text mode
  std::optional<Image> x_trg;    // image mode
};

/// Everything the guided loop needs besides the score model.
struct GuidanceContext {
  const StructureSemanticExtractor* extractor = nullptr;
  const TextImageEmbedder* embedder = nullptr;       // text mode
  const IdentityEmbedder* identity = nullptr;        // optional hook
  GuidanceWeights weights;
};

/// RNG stream discipline: the trajectory stream feeds the start noise,
/// per-step reverse noise and resampling noise, in that order; the
/// augmentation stream is separate so guidance settings never shift the
/// trajectory's draws.
RngStream make_trajectory_stream(std::uint64_t seed, int restart_index);
RngStream make_augmentation_stream(std::uint64_t seed, int restart_index);

/// x_{t_start} ~ N(sqrt(abar)·x_src, (1−abar)·I) via q_sample.
Image init_start(const Image& x_src, const NoiseSchedule& s, int t_start, RngStream& rng);

/// Cached resize into a fixed extractor/embedder input size; inactive when
/// the consumer accepts the native size.
struct ResizePlanSlot {
  bool active = false;
  WarpPlan plan;
  int h = 0, w = 0;
};

/// Precomputed constants for one run (source features, direction target,
/// target features) plus the single piece of mutable loop state: the
/// previous step's cls token.
struct RunState {
  FeatureBundle src_bundle;
  Eigen::MatrixXd s_src;
  Eigen::VectorXd v_trg;
  FeatureBundle trg_bundle;
  std::optional<Image> x_trg_resized;
  Eigen::VectorXd src_identity;
  std::optional<Eigen::VectorXd> prev_cls;
  ResizePlanSlot extractor_resize, embedder_resize;
  bool need_bundle = false, need_style_text = false, need_style_image = false, need_identity = false;
};

RunState prepare_run_state(const TranslationTask& task, const SamplerConfig& cfg,
                           const GuidanceContext& ctx);

/// One guided reverse step: predict eps, form the Tweedie estimate,
/// evaluate the total loss on it, take the loss gradient w.r.t. x_t, then
/// apply the reverse transition and subtract the gradient.
std::pair<Image, StepRecord> guided_step(const Image& x_t, int t, const NoiseSchedule& s,
                                         const ScoreModel& score, const GuidanceContext& ctx,
                                         const SamplerConfig& cfg, RunState& state,
                                         RngStream& traj_rng, RngStream& aug_rng);

/// N repetitions of (guided reverse step at t_start, forward step back to
/// t_start with noise scale sqrt(beta)); returns the final x at t_start
/// and appends the extra guided steps to `record`.
Image resample_at_start(const Image& x_t_start, const NoiseSchedule& s, const ScoreModel& score,
                        const GuidanceContext& ctx, const SamplerConfig& cfg, RunState& state,
                        RngStream& traj_rng, RngStream& aug_rng, TrajectoryRecord& record);

/// Full translation: skip-start initialization, resampling at the start
/// step, the guided loop down to t = 1, the restart check on the first
/// step's range loss, and a single final clamp.
std::pair<Image, TrajectoryRecord> run_translation(const TranslationTask& task,
                                                   const SamplerConfig& cfg, const NoiseSchedule& s,
                                                   const ScoreModel& score,
                                                   const GuidanceContext& ctx);

/// lambda_id·‖id(x0_hat) − id(x_src)‖₂; 0 when no adapter is registered.
double identity_hook(const Image& x0_hat, const Image& x_src, double lambda_id,
                     const IdentityEmbedder* identity);

}  // namespace sit
