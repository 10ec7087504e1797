#include "sit/sampler.hpp"

#include <cmath>
#include <sstream>

#include "sit/errors.hpp"

namespace sit {

void SamplerConfig::validate(const NoiseSchedule& s) const {
  if (t_start < 1 || t_start > s.T) throw InvalidArgument("t_start out of schedule range");
  if (n_resample < 0) throw InvalidArgument("n_resample must be >= 0");
  if (n_resample > 0 && t_start < 2)
    throw InvalidArgument("resampling needs t_start >= 2 (forward step uses beta at t_start-1)");
  if (!(restart_threshold > 0)) throw InvalidArgument("restart_threshold must be positive");
  if (max_restarts < 0) throw InvalidArgument("max_restarts must be >= 0");
  if (m_aug < 1) throw InvalidArgument("m_aug must be >= 1");
  if (snapshot_every < 0) throw InvalidArgument("snapshot_every must be >= 0");
}

RngStream make_trajectory_stream(std::uint64_t seed, int restart_index) {
  return RngStream(seed).fork(0x54524a00ULL + std::uint64_t(restart_index));
}

RngStream make_augmentation_stream(std::uint64_t seed, int restart_index) {
  return RngStream(seed).fork(0x41554700ULL + std::uint64_t(restart_index));
}

Image init_start(const Image& x_src, const NoiseSchedule& s, int t_start, RngStream& rng) {
  Image eps(x_src.h, x_src.w, x_src.c);
  eps.data = rng.normal_array(x_src.size());
  return q_sample(s, x_src, t_start, eps);
}

double identity_hook(const Image& x0_hat, const Image& x_src, double lambda_id,
                     const IdentityEmbedder* identity) {
  if (identity == nullptr || lambda_id == 0.0) return 0.0;
  return lambda_id * (identity->embed(x0_hat) - identity->embed(x_src)).norm();
}

namespace {

ResizePlanSlot resize_slot_for(std::pair<int, int> want, int h, int w, int c) {
  ResizePlanSlot slot;
  slot.h = want.first == 0 ? h : want.first;
  slot.w = want.second == 0 ? w : want.second;
  if (slot.h != h || slot.w != w) {
    slot.active = true;
    slot.plan = make_resize_plan(h, w, c, slot.h, slot.w);
  }
  return slot;
}

}  // namespace

RunState prepare_run_state(const TranslationTask& task, const SamplerConfig& cfg,
                           const GuidanceContext& ctx) {
  const GuidanceWeights& w = ctx.weights;
  w.validate();
  RunState state;
  state.need_bundle = w.lambda1 > 0 || w.lambda2 > 0 || w.lambda4 > 0 ||
                      (cfg.mode == GuidanceMode::image && w.lambda3 > 0);
  state.need_style_text = cfg.mode == GuidanceMode::text && w.lambda3 > 0;
  state.need_style_image = cfg.mode == GuidanceMode::image && w.lambda3 > 0;
  state.need_identity = w.lambda_id > 0 && ctx.identity != nullptr;

  const Image& src = task.x_src;

  if (state.need_bundle) {
    if (!ctx.extractor) throw InvalidArgument("guidance needs an extractor");
    state.extractor_resize = resize_slot_for(ctx.extractor->input_size(), src.h, src.w, src.c);
    if (w.lambda1 > 0 || w.lambda2 > 0) {
      Image src_in = state.extractor_resize.active ? state.extractor_resize.plan.apply(src) : src;
      state.src_bundle = ctx.extractor->extract(src_in);
      if (w.lambda2 > 0) state.s_src = self_similarity(state.src_bundle);
    }
  }
  if (state.need_style_text) {
    if (!ctx.embedder) throw InvalidArgument("text mode needs an embedder");
    if (task.d_trg.empty() || task.d_src.empty())
      throw InvalidArgument("text mode needs both target and source prompts");
    state.embedder_resize = resize_slot_for(ctx.embedder->input_size(), src.h, src.w, src.c);
    Image src_in = state.embedder_resize.active ? state.embedder_resize.plan.apply(src) : src;
    state.v_trg = embedding_direction_target(ctx.embedder->embed_text(task.d_trg),
                                             ctx.embedder->embed_image(src_in),
                                             ctx.embedder->embed_text(task.d_src), w.lambda_s,
                                             w.lambda_i);
  }
  if (state.need_style_image) {
    if (!ctx.extractor) throw InvalidArgument("image mode needs an extractor");
    if (!task.x_trg) throw InvalidArgument("image mode needs a target image");
    state.extractor_resize = resize_slot_for(ctx.extractor->input_size(), src.h, src.w, src.c);
    Image trg_in = resize_bilinear(*task.x_trg, state.extractor_resize.h, state.extractor_resize.w);
    state.trg_bundle = ctx.extractor->extract(trg_in);
    state.x_trg_resized = resize_bilinear(*task.x_trg, src.h, src.w);
  }
  if (state.need_identity) state.src_identity = ctx.identity->embed(src);
  return state;
}

std::pair<Image, StepRecord> guided_step(const Image& x_t, int t, const NoiseSchedule& s,
                                         const ScoreModel& score, const GuidanceContext& ctx,
                                         const SamplerConfig& cfg, RunState& state,
                                         RngStream& traj_rng, RngStream& aug_rng) {
  const GuidanceWeights& w = ctx.weights;
  const bool sem_ready = state.prev_cls.has_value();
  const bool want_cont = w.lambda1 > 0;
  const bool want_ssim = w.lambda2 > 0;
  const bool want_style = w.lambda3 > 0;
  const bool want_sem = w.lambda4 > 0 && sem_ready;
  const bool want_rng = w.lambda5 > 0;
  const bool want_id = state.need_identity;
  const bool any_term = want_cont || want_ssim || want_style || want_sem || want_rng || want_id;
  const bool need_graph = any_term || state.need_bundle;

  StepRecord rec;
  rec.t = t;
  rec.t_orig = s.original_t(t);

  Image eps_img(x_t.h, x_t.w, x_t.c);
  Image x0_img(x_t.h, x_t.w, x_t.c);
  Image grad_img(x_t.h, x_t.w, x_t.c);

  if (need_graph) {
    ad::Tape tape;
    ad::Var x = tape.input(x_t.data);
    ad::Var eps = cfg.full_gradient_path
                      ? score.predict(tape, x, x_t.h, x_t.w, x_t.c, rec.t_orig)
                      : tape.constant(score.predict(x_t, rec.t_orig).data);
    ad::Var x0 = tweedie_x0(tape, s, x, t, eps);

    TotalLossRefs refs;
    TotalLossVars vars;
    vars.x0 = x0;
    if (state.need_bundle) {
      const ResizePlanSlot& rs = state.extractor_resize;
      ad::Var x0e = rs.active ? rs.plan.apply(tape, x0) : x0;
      vars.out_bundle = ctx.extractor->extract(tape, x0e, rs.active ? rs.h : x_t.h,
                                               rs.active ? rs.w : x_t.w, x_t.c);
      refs.src_bundle = &state.src_bundle;
      refs.s_src = &state.s_src;
    }
    if (state.need_style_text) {
      const ResizePlanSlot& rs = state.embedder_resize;
      ad::Var x0m = rs.active ? rs.plan.apply(tape, x0) : x0;
      int eh = rs.active ? rs.h : x_t.h;
      int ew = rs.active ? rs.w : x_t.w;
      for (const ViewPlan& vp : make_view_plans(eh, ew, x_t.c, cfg.m_aug, aug_rng, cfg.aug))
        vars.view_embeddings.push_back(
            ctx.embedder->embed_image(tape, vp.apply(tape, x0m), eh, ew, x_t.c));
      refs.v_trg = &state.v_trg;
    }
    if (state.need_style_image) {
      refs.trg_cls = &state.trg_bundle.cls;
      refs.x_trg = &state.x_trg_resized->data;
    }
    if (want_sem) refs.prev_cls = &*state.prev_cls;
    if (want_id) {
      vars.identity_embedding = ctx.identity->embed(tape, x0, x_t.h, x_t.w, x_t.c);
      refs.src_identity = &state.src_identity;
    }

    if (any_term) {
      ad::Var total = total_loss(tape, cfg.mode, refs, vars, w, &rec.losses);
      if (!std::isfinite(rec.losses.total)) {
        std::ostringstream os;
        os << "non-finite total loss at t=" << t << " (cont=" << rec.losses.cont
           << " ssim=" << rec.losses.ssim << " style=" << rec.losses.style
           << " sem=" << rec.losses.sem << " rng=" << rec.losses.rng << ")";
        throw RuntimeFailure(os.str());
      }
      tape.backward(total);
      grad_img.data = tape.grad(x);
      if (!grad_img.finite())
        throw RuntimeFailure("non-finite guidance gradient at t=" + std::to_string(t));
    }
    eps_img.data = tape.val(eps);
    x0_img.data = tape.val(x0);
    if (state.need_bundle) state.prev_cls = tape.val(vars.out_bundle.cls).matrix();
  } else {
    eps_img = score.predict(x_t, rec.t_orig);
    x0_img = tweedie_x0(s, x_t, t, eps_img);
  }

  if (!want_rng) rec.losses.rng = l_rng(x0_img);
  rec.grad_norm = std::sqrt(grad_img.data.square().sum());
  rec.x0_snapshot = x0_img;

  Image z(x_t.h, x_t.w, x_t.c);
  z.data = traj_rng.normal_array(x_t.size());
  Image x_prev = mcg_correct(reverse_step(s, x_t, t, eps_img, z), grad_img);
  if (!x_prev.finite()) throw RuntimeFailure("non-finite state after step t=" + std::to_string(t));
  return {std::move(x_prev), std::move(rec)};
}

Image resample_at_start(const Image& x_t_start, const NoiseSchedule& s, const ScoreModel& score,
                        const GuidanceContext& ctx, const SamplerConfig& cfg, RunState& state,
                        RngStream& traj_rng, RngStream& aug_rng, TrajectoryRecord& record) {
  if (cfg.n_resample == 0) return x_t_start;
  const int t = cfg.t_start;
  const double beta_prev = s.beta(t - 1);
  Image x = x_t_start;
  for (int n = 0; n < cfg.n_resample; ++n) {
    auto [x_prev, rec] = guided_step(x, t, s, score, ctx, cfg, state, traj_rng, aug_rng);
    rec.resample = true;
    record.steps.push_back(std::move(rec));
    Image eps(x.h, x.w, x.c);
    eps.data = traj_rng.normal_array(x.size());
    x.data = std::sqrt(1.0 - beta_prev) * x_prev.data + std::sqrt(beta_prev) * eps.data;
  }
  return x;
}

std::pair<Image, TrajectoryRecord> run_translation(const TranslationTask& task,
                                                   const SamplerConfig& cfg, const NoiseSchedule& s,
                                                   const ScoreModel& score,
                                                   const GuidanceContext& ctx) {
  cfg.validate(s);
  if (!task.x_src.finite()) throw InvalidArgument("source image has non-finite entries");
  const RunState base_state = prepare_run_state(task, cfg, ctx);

  for (int attempt = 0;; ++attempt) {
    RunState state = base_state;
    RngStream traj = make_trajectory_stream(cfg.seed, attempt);
    RngStream aug = make_augmentation_stream(cfg.seed, attempt);
    TrajectoryRecord record;
    record.restarts = attempt;

    Image x = init_start(task.x_src, s, cfg.t_start, traj);
    bool restart = false;
    int resamples_done = 0;

    for (int t = cfg.t_start; t >= 1;) {
      bool will_resample = (t == cfg.t_start && resamples_done < cfg.n_resample);
      auto [x_next, rec] = guided_step(x, t, s, score, ctx, cfg, state, traj, aug);
      rec.resample = will_resample;

      // Restart trick: range loss of the very first denoised estimate,
      // before any correction has had a chance to act.
      if (record.steps.empty() && cfg.restart_enabled && rec.losses.rng > cfg.restart_threshold) {
        if (attempt >= cfg.max_restarts)
          throw RuntimeFailure("restart budget exhausted: initial range loss " +
                               std::to_string(rec.losses.rng) + " still above threshold after " +
                               std::to_string(attempt) + " restarts");
        restart = true;
        break;
      }

      int step_index = int(record.steps.size());
      if (cfg.snapshot_every == 0 || step_index % cfg.snapshot_every != 0) rec.x0_snapshot.reset();
      record.steps.push_back(std::move(rec));
      if (cfg.capture_states) record.states.push_back(x_next);

      if (will_resample) {
        Image eps(x.h, x.w, x.c);
        eps.data = traj.normal_array(x.size());
        double beta_prev = s.beta(t - 1);
        x.data = std::sqrt(1.0 - beta_prev) * x_next.data + std::sqrt(beta_prev) * eps.data;
        ++resamples_done;
      } else {
        x = std::move(x_next);
        --t;
      }
    }
    if (restart) continue;
    return {clamp(x, -1.0, 1.0), std::move(record)};
  }
}

}  // namespace sit
