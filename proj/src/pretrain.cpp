#include "timemae/pretrain.hpp"

#include <cmath>

#include "json.hpp"

#include "timemae/errors.hpp"
#include "timemae/ops.hpp"

TIMEMAE_BEGIN_NAMESPACE

ModelState ModelState::init(const PretrainConfig& config, std::size_t channels, std::size_t max_slices) {
  config.validate();
  Rng root = Rng(config.seed).derive("init");
  ModelState s;
  s.config = config;
  Rng feat_rng = root.derive("featurizer");
  s.featurizer = FeaturizerParams::init({config.sigma, config.d_model}, channels, max_slices, feat_rng);
  Rng mask_rng = root.derive("z_mask");
  s.z_mask = init_normal({config.d_model}, 0.02, mask_rng);
  Rng vis_rng = root.derive("visible");
  s.visible = EncoderParams::init(config.visible_config(), vis_rng);
  Rng dec_rng = root.derive("decoupled");
  s.decoupled = EncoderParams::init(config.decoupled_config(), dec_rng);
  s.target = deep_copy(s.visible);
  Rng code_rng = root.derive("codebook");
  s.codebook = Codebook::init(config.codebook_size, config.d_model, code_rng);
  return s;
}

ParamList ModelState::trainable() const {
  ParamList out;
  for (auto& [name, t] : all_params()) {
    if (name.rfind("target.", 0) != 0) out.emplace_back(name, t);
  }
  return out;
}

Tensor mcc_loss(const Tensor& predicted, const Tensor& codes, const Tensor& targets) {
  if (predicted.rank() < 2 || codes.rank() != 2 || targets.rank() != 2) {
    throw DimensionError("mcc_loss: bad ranks " + shape_str(predicted.shape()) + ", " +
                         shape_str(codes.shape()) + ", " + shape_str(targets.shape()));
  }
  std::size_t d = predicted.dim(-1);
  std::size_t n = predicted.numel() / d;
  if (codes.dim(1) != d || targets.dim(0) != n || targets.dim(1) != codes.dim(0)) {
    throw DimensionError("mcc_loss: predictions " + shape_str(predicted.shape()) + ", codebook " +
                         shape_str(codes.shape()) + " and targets " + shape_str(targets.shape()) +
                         " do not line up");
  }
  Tensor rows = reshape(predicted, {n, d});
  return cross_entropy(matmul(rows, transpose_last(codes)), targets);
}

Tensor mrr_loss(const Tensor& predicted, const Tensor& target_reps) {
  if (predicted.shape() != target_reps.shape()) {
    throw DimensionError("mrr_loss: predictions " + shape_str(predicted.shape()) + " vs targets " +
                         shape_str(target_reps.shape()));
  }
  return mse(predicted, target_reps);
}

std::string LossReport::to_json() const {
  nlohmann::json j = {{"type", "step"},     {"epoch", epoch},           {"step", step},
                      {"l_cls", l_cls},     {"l_align", l_align},       {"l_total", l_total},
                      {"perplexity", perplexity}, {"tau", tau}};
  return j.dump();
}

std::string EpochSummary::to_json() const {
  nlohmann::json j = {{"type", "epoch"}, {"epoch", epoch},     {"steps", steps},          {"l_cls", l_cls},
                      {"l_align", l_align}, {"l_total", l_total}, {"perplexity", perplexity}};
  return j.dump();
}

PretrainForward pretrain_forward(const TimeSeriesBatch& batch, std::span<const std::size_t> example_ids,
                                 const ModelState& state, const StepContext& ctx, bool run_decoupled) {
  const PretrainConfig& cfg = state.config;
  if (example_ids.size() != batch.n_examples) {
    throw ContractError("pretrain_forward: " + std::to_string(example_ids.size()) + " ids for " +
                        std::to_string(batch.n_examples) + " examples");
  }
  Rng root(cfg.seed);
  Rng step_rng = root.derive("step", ctx.epoch, ctx.step);

  PretrainForward f;
  EmbeddedSequence seq = featurize(batch, state.featurizer);
  const std::size_t s_len = seq.z.dim(1);
  f.plan = sample_mask_plan(example_ids, s_len, cfg.mask_ratio, root.derive("mask", ctx.epoch).seed());
  f.split = split(seq, f.plan, state.featurizer.positions);

  Rng visible_rng = step_rng.derive("visible");
  f.visible_out = visible_encode(f.split.z_visible + f.split.pos_visible, state.visible, ctx.training, visible_rng);
  if (!run_decoupled) return f;

  Tensor queries = masked_queries(f.plan, state.z_mask, state.featurizer.positions);
  Rng decoupled_rng = step_rng.derive("decoupled");
  f.predicted = decoupled_encode(queries, f.visible_out, state.decoupled, ctx.training, decoupled_rng);

  // Codeword targets come from the uncorrupted content rows, before positions.
  const std::size_t b = f.plan.batch();
  const std::size_t n_m = f.plan.n_masked();
  const std::size_t d = cfg.d_model;
  Tensor content_rows = reshape(f.split.z_masked, {b * n_m, d});
  QuantizeOptions qopts{static_cast<Real>(ctx.tau), ctx.training, cfg.hard_from_noisy};
  Rng gumbel_rng = step_rng.derive("gumbel");
  f.tokens = quantize(content_rows, state.codebook, qopts, gumbel_rng);

  if (cfg.target_input == TargetInput::FullSequence) {
    EmbeddedSequence full = add_positions(seq, state.featurizer.positions);
    f.target_reps = gather_rows(target_encode(full.z, state.target, state.visible), f.plan.masked);
  } else {
    f.target_reps = target_encode(f.split.z_masked + f.split.pos_masked, state.target, state.visible);
  }

  f.l_cls = mcc_loss(f.predicted, state.codebook.codes, f.tokens.q_hat);
  f.l_align = mrr_loss(f.predicted, f.target_reps);
  f.l_total = f.l_cls * static_cast<Real>(cfg.alpha) + f.l_align * static_cast<Real>(cfg.beta);
  return f;
}

PretrainSession::PretrainSession(ModelState state)
    : state_(std::move(state)), optimizer_(state_.trainable(), AdamConfig{state_.config.lr}) {}

LossReport PretrainSession::step(const TimeSeriesBatch& batch, std::span<const std::size_t> example_ids,
                                 std::size_t epoch, double tau) {
  const PretrainConfig& cfg = state_.config;
  optimizer_.zero_grad();
  for (auto& [name, t] : collect_params(state_.target, "target")) t.zero_grad();

  PretrainForward f = pretrain_forward(batch, example_ids, state_, {epoch, step_, tau, true});

  LossReport r;
  r.epoch = epoch;
  r.step = step_;
  r.l_cls = f.l_cls.item();
  r.l_align = f.l_align.item();
  r.l_total = f.l_total.item();
  r.tau = tau;
  r.usage_counts = f.tokens.usage_counts;
  r.perplexity = usage_perplexity(r.usage_counts);
  if (!std::isfinite(r.l_total) || !std::isfinite(r.l_cls) || !std::isfinite(r.l_align)) {
    throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch) + " step " +
                          std::to_string(step_) + " (l_cls=" + std::to_string(r.l_cls) +
                          ", l_align=" + std::to_string(r.l_align) + ")");
  }

  backward(f.l_total);
  if (cfg.check_target_grads) {
    for (auto& [name, t] : collect_params(state_.target, "target")) {
      for (Real g : t.grad()) {
        if (g != 0) throw ContractError("target encoder received gradient at " + name);
      }
    }
  }
  if (cfg.grad_clip > 0) optimizer_.clip_grad_norm(cfg.grad_clip);
  optimizer_.step();
  ema_update(state_.target, state_.visible, cfg.eta);
  ++step_;
  return r;
}

LossReport pretrain_step(PretrainSession& session, const TimeSeriesBatch& batch,
                         std::span<const std::size_t> example_ids, std::size_t epoch) {
  return session.step(batch, example_ids, epoch, session.state().config.tau);
}

double tau_at(const PretrainConfig& cfg, std::size_t step, std::size_t total_steps) {
  if (cfg.tau_final <= 0 || total_steps < 2) return cfg.tau;
  double progress = std::min(1.0, static_cast<double>(step) / static_cast<double>(total_steps - 1));
  return cfg.tau + (cfg.tau_final - cfg.tau) * progress;
}

std::vector<EpochSummary> pretrain_loop(const TimeSeriesBatch& data, PretrainSession& session,
                                        const PretrainHooks& hooks) {
  if (data.n_examples == 0) throw DataError("pre-training needs a nonempty dataset");
  const PretrainConfig& cfg = session.state().config;
  const std::size_t per_epoch = (data.n_examples + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total = per_epoch * cfg.epochs;
  const std::size_t first_step = session.global_step();
  Rng root(cfg.seed);

  std::vector<EpochSummary> summaries;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    BatchIterator it(data, cfg.batch_size, root.derive("shuffle", epoch).seed());
    EpochSummary sum;
    sum.epoch = epoch;
    std::vector<std::size_t> usage(cfg.codebook_size, 0);
    std::vector<std::size_t> ids;
    while (!it.done()) {
      TimeSeriesBatch mb = it.next(&ids);
      double tau = tau_at(cfg, session.global_step() - first_step, total);
      LossReport r = session.step(mb, ids, epoch, tau);
      if (hooks.on_step) hooks.on_step(r);
      sum.l_cls += r.l_cls;
      sum.l_align += r.l_align;
      sum.l_total += r.l_total;
      for (std::size_t k = 0; k < usage.size(); ++k) usage[k] += r.usage_counts[k];
      ++sum.steps;
    }
    sum.l_cls /= static_cast<double>(sum.steps);
    sum.l_align /= static_cast<double>(sum.steps);
    sum.l_total /= static_cast<double>(sum.steps);
    sum.perplexity = usage_perplexity(usage);
    if (hooks.on_epoch) hooks.on_epoch(sum);
    summaries.push_back(sum);
  }
  return summaries;
}

TIMEMAE_END_NAMESPACE
