#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "sit/guidance.hpp"

namespace sit {

/// Resolved run configuration. Precedence: command-line flag > config file
/// > built-in default. Mode comes from the subcommand; the remaining
/// fields are all reachable through the key table below.
struct RunConfig {
  std::string mode = "text";  // text|image (set by the subcommand)

  // inputs / outputs
  std::string src;
  std::string target_text, source_text;
  std::string target_image;
  std::string out_dir = "runs/last";

  // backends
  std::string score_model = "toy";  // toy|analytic
  std::string score_checkpoint;
  double analytic_mean = 0.0;
  double analytic_std = 0.5;
  std::string extractor = "toy";  // toy|worker
  std::string extractor_cmd;
  std::string embedder = "toy";  // toy|worker
  std::string embedder_cmd;
  int toy_patch = 4;

  // schedule
  int t_train = 1000;
  double beta_min = 1e-4, beta_max = 0.02;
  std::string variance_rule = "beta";  // beta|posterior
  int sample_steps = 100;              // image-mode default 200
  int skip_steps = 40;                 // image-mode default 80
  int n_resample = 10;

  // guidance
  double lambda1 = 200, lambda2 = 100, lambda3 = 2000, lambda4 = 1000, lambda5 = 200;
  double lambda_mse = 1.5, lambda_s = 0.4, lambda_i = 0.2, tau = 0.07, lambda_id = 0;
  int m_aug = 8;
  bool aug_identity_only = false;

  // run behavior
  std::uint64_t seed = 0;
  bool restart = false;
  double restart_threshold = 0.01;
  int max_restarts = 5;
  bool full_gradient = true;
  int snapshot_every = 10;
  bool color_match = false;
  bool final_clamp = true;

  GuidanceWeights weights() const;
  int t_start() const { return sample_steps - skip_steps; }
};

struct ConfigField {
  std::string key;   // config-file key; the CLI flag is --key with '_'→'-'
  std::string help;
  std::function<void(RunConfig&, const std::string&)> set;  // throws ConfigError on bad values
  std::function<std::string(const RunConfig&)> get;
};

/// Every settable field, in declaration order. Mode is not in the table.
const std::vector<ConfigField>& run_config_fields();

/// Flat `key = value` lines; '#' comments; unknown keys are errors that
/// name the key and line.
std::map<std::string, std::string> parse_config_file(const std::filesystem::path& path);

/// Built-in defaults for the mode, then file pairs, then CLI pairs.
RunConfig resolve_config(const std::string& mode,
                         const std::map<std::string, std::string>& file_pairs,
                         const std::map<std::string, std::string>& cli_pairs);

/// Cross-field checks: mode inputs present, ranges sane, checkpoints
/// resolvable. Throws ConfigError naming the offending key.
void validate_config(const RunConfig& cfg);

/// Expands a checkpoint path against $SIT_CHECKPOINT_ROOT when relative.
std::filesystem::path resolve_checkpoint_path(const std::string& path);

}  // namespace sit
