#pragma once

#include <ostream>
#include <string>

#include "sit/config.hpp"

namespace sit {

/// Runs a translation end to end: builds the schedule and backends from
/// the resolved config, samples, applies post-processing, and writes
/// output.png, trajectory.jsonl and manifest.json into a fresh run
/// directory. A manifest is written even on failure (with the error
/// recorded) as long as the run directory exists. Throws ConfigError or
/// RuntimeFailure; the CLI maps those to exit codes 2 and 3.
void run_translate_pipeline(const RunConfig& cfg, std::ostream& log);

struct EvalConfig {
  std::string manifest;
  std::string embedder = "toy";  // toy|worker
  std::string embedder_cmd;
  bool perceptual_fallback = true;
  std::string report_out;  // optional file copy of the report
};

/// Evaluates a manifest of generated/reference images: SFID, CSFID, mean
/// perceptual distance and a per-class table, as `key = value` lines.
void run_eval_pipeline(const EvalConfig& cfg, std::ostream& out);

}  // namespace sit
