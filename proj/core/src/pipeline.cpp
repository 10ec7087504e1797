#include "sit/pipeline.hpp"

#include <chrono>
#include <fstream>
#include <memory>

#include "sit/color_transfer.hpp"
#include "sit/errors.hpp"
#include "sit/io.hpp"
#include "sit/manifest.hpp"
#include "sit/metrics.hpp"
#include "sit/sampler.hpp"
#include "sit/worker_adapter.hpp"

namespace sit {

namespace {

std::map<std::string, std::string> dump_config(const RunConfig& cfg) {
  std::map<std::string, std::string> out;
  out["mode"] = cfg.mode;
  for (const ConfigField& f : run_config_fields()) out[f.key] = f.get(cfg);
  return out;
}

NoiseSchedule sampling_schedule(const NoiseSchedule& base, const RunConfig& cfg) {
  VarianceRule rule = cfg.variance_rule == "posterior" ? VarianceRule::posterior : VarianceRule::beta;
  NoiseSchedule rebased = build_schedule_from_betas(base.betas, rule, base.timestep_map);
  if (cfg.sample_steps == rebased.T) return rebased;
  return respace_schedule(rebased, cfg.sample_steps, rule);
}

std::unique_ptr<ScoreModel> make_score_model(const RunConfig& cfg, const Image& src) {
  if (cfg.score_model == "toy") {
    auto path = resolve_checkpoint_path(cfg.score_checkpoint);
    if (!std::filesystem::exists(path))
      throw ConfigError("score_checkpoint: file not found: " + path.string() +
                        " (set score_checkpoint or SIT_CHECKPOINT_ROOT)");
    auto model = std::make_unique<ToyConvScore>(ToyConvScore::load(path));
    if (model->base_schedule().T != cfg.t_train)
      throw ConfigError("t_train: config says " + std::to_string(cfg.t_train) +
                        " but the score checkpoint was trained with T=" +
                        std::to_string(model->base_schedule().T));
    return model;
  }
  NoiseSchedule base = build_schedule(cfg.t_train, cfg.beta_min, cfg.beta_max);
  Image mean = Image::constant(src.h, src.w, src.c, cfg.analytic_mean);
  return std::make_unique<AnalyticGaussianScore>(std::move(base), std::move(mean), cfg.analytic_std);
}

}  // namespace

void run_translate_pipeline(const RunConfig& cfg, std::ostream& log) {
  validate_config(cfg);
  std::filesystem::path out_dir(cfg.out_dir);
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec || !std::filesystem::is_directory(out_dir))
    throw ConfigError("out_dir: cannot create '" + cfg.out_dir + "'");
  if (cfg.color_match && cfg.mode != "image")
    throw ConfigError("color_match: only available in image mode (needs a target image)");

  RunManifest manifest;
  manifest.mode = cfg.mode;
  manifest.config = dump_config(cfg);
  const auto t0 = std::chrono::steady_clock::now();

  auto finish_manifest = [&](const std::string& status, const std::string& error) {
    manifest.status = status;
    manifest.error = error;
    manifest.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_manifest(out_dir / "manifest.json", manifest);
  };

  try {
    Image src = read_image(cfg.src);
    TranslationTask task;
    task.x_src = src;
    task.d_trg = cfg.target_text;
    task.d_src = cfg.source_text;
    if (cfg.mode == "image") task.x_trg = read_image(cfg.target_image);

    std::unique_ptr<ScoreModel> score = make_score_model(cfg, src);
    NoiseSchedule sched = sampling_schedule(score->base_schedule(), cfg);

    std::unique_ptr<StructureSemanticExtractor> extractor;
    if (cfg.extractor == "toy")
      extractor = std::make_unique<ToyPatchExtractor>(cfg.toy_patch);
    else
      extractor = std::make_unique<WorkerExtractor>(cfg.extractor_cmd);

    std::unique_ptr<TextImageEmbedder> embedder;
    if (cfg.mode == "text") {
      if (cfg.embedder == "toy")
        embedder = std::make_unique<ToyColorEmbedder>(src.c);
      else
        embedder = std::make_unique<WorkerEmbedder>(cfg.embedder_cmd);
    }

    SamplerConfig scfg;
    scfg.t_start = cfg.t_start();
    scfg.n_resample = cfg.n_resample;
    scfg.restart_threshold = cfg.restart_threshold;
    scfg.restart_enabled = cfg.restart;
    scfg.max_restarts = cfg.max_restarts;
    scfg.mode = cfg.mode == "text" ? GuidanceMode::text : GuidanceMode::image;
    scfg.m_aug = cfg.m_aug;
    scfg.seed = cfg.seed;
    scfg.full_gradient_path = cfg.full_gradient;
    scfg.snapshot_every = cfg.snapshot_every;
    scfg.aug.identity_only = cfg.aug_identity_only;

    GuidanceContext ctx;
    ctx.extractor = extractor.get();
    ctx.embedder = embedder.get();
    ctx.weights = cfg.weights();

    log << "running " << cfg.mode << "-mode translation: t_start=" << scfg.t_start
        << " resample=" << scfg.n_resample << " seed=" << cfg.seed << "\n";
    auto [img, record] = run_translation(task, scfg, sched, *score, ctx);

    if (cfg.color_match) img = color_match(img, *task.x_trg);
    if (cfg.final_clamp) img = clamp(img, -1.0, 1.0);

    auto out_png = out_dir / "output.png";
    write_png(out_png, img);
    write_trajectory_log(out_dir / "trajectory.jsonl", record);

    manifest.guided_steps = record.guided_steps();
    manifest.restarts = record.restarts;
    if (!record.steps.empty()) manifest.final_losses = record.steps.back().losses;
    manifest.outputs.push_back({out_png.string(), sha256_file(out_png)});
    finish_manifest("success", "");
    log << "wrote " << out_png.string() << " (" << record.guided_steps() << " guided steps)\n";
  } catch (const std::exception& e) {
    finish_manifest("error", e.what());
    throw;
  }
}

void run_eval_pipeline(const EvalConfig& cfg, std::ostream& out) {
  EvalManifest manifest = load_manifest(cfg.manifest);

  std::unique_ptr<TextImageEmbedder> embedder;
  if (cfg.embedder == "toy")
    embedder = std::make_unique<ToyColorEmbedder>(3);
  else if (cfg.embedder == "worker") {
    if (cfg.embedder_cmd.empty()) throw ConfigError("embedder_cmd: required when embedder=worker");
    embedder = std::make_unique<WorkerEmbedder>(cfg.embedder_cmd);
  } else {
    throw ConfigError("embedder: must be toy or worker");
  }

  MultiScaleL2 fallback;
  const PerceptualMetric* perceptual = cfg.perceptual_fallback ? &fallback : nullptr;

  EvalReport report = evaluate_manifest(
      manifest, *embedder, [](const std::string& p) { return read_image(p); }, perceptual);

  std::ostringstream os;
  os.precision(10);
  os << "sfid = " << report.sfid << "\n";
  os << "csfid = " << report.csfid << "\n";
  if (report.perceptual_mean)
    os << "perceptual_mean = " << *report.perceptual_mean << "\n";
  else
    os << "perceptual_mean = n/a\n";
  for (const ClassScore& c : report.per_class)
    os << "class." << c.label << ".sfid = " << c.sfid << "  # generated=" << c.n_generated
       << " reference=" << c.n_reference << "\n";
  out << os.str();
  if (!cfg.report_out.empty()) {
    std::ofstream f(cfg.report_out);
    if (!f) throw RuntimeFailure("cannot write report: " + cfg.report_out);
    f << os.str();
  }
}

}  // namespace sit
