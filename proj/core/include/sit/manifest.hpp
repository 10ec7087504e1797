#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "sit/guidance.hpp"
#include "sit/sampler.hpp"

namespace sit {

/// What a run leaves behind next to its outputs. Re-running with the
/// recorded config and seed (restart off) reproduces the output hashes.
struct RunManifest {
  std::string status = "success";
  std::string error;
  std::string mode;
  std::map<std::string, std::string> config;  // fully resolved key -> value
  LossTerms final_losses;
  int guided_steps = 0;
  int restarts = 0;
  double wall_time_s = 0.0;
  std::vector<std::pair<std::string, std::string>> outputs;  // path, sha256
};

void write_manifest(const std::filesystem::path& path, const RunManifest& m);

/// One JSON object per guided step: timestep, per-term losses, gradient norm.
void write_trajectory_log(const std::filesystem::path& path, const TrajectoryRecord& record);

std::string sha256_file(const std::filesystem::path& path);

}  // namespace sit
