#include "pwtp/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "pwtp/ops.hpp"

namespace pwtp {

void TrainConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw Error("train: lr must be non-negative");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw Error("train: momentum must lie in [0, 1)");
  if (batch < 1) throw Error("train: batch must be positive");
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) throw Error("train: weight_decay must be non-negative");
  if (!(grad_clip >= 0.0)) throw Error("train: grad_clip must be non-negative");
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) throw Error("train: label_smoothing must lie in [0, 1)");
}

double learning_rate(const TrainConfig& cfg, std::size_t step, std::size_t steps) {
  if (step < cfg.warmup_steps) {
    return cfg.lr * static_cast<double>(step + 1) / static_cast<double>(cfg.warmup_steps);
  }
  if (steps == 0) return cfg.lr;
  return cfg.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(steps)));
}

double clip_global_norm(ParamSet& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, g] : grads)
    for (double v : g.data()) sq += v * v;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& [name, g] : grads)
      for (auto& v : g.data()) v *= s;
  }
  return norm;
}

namespace {

bool decays(const std::string& name) { return name.size() >= 2 && name.compare(name.size() - 2, 2, "/w") == 0; }

}  // namespace

void SgdMomentum::step(ParamSet& params, const ParamSet& grads, double lr) {
  for (const auto& [name, g] : grads) {
    Tensor& p = params.get(name);
    require_same_shape(p, g, "sgd step");
    if (!velocity_.contains(name)) velocity_.insert(name, Tensor(p.shape(), 0.0));
    Tensor& v = velocity_.get(name);
    const double wd = decays(name) ? weight_decay_ : 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      v[i] = momentum_ * v[i] + (g[i] + wd * p[i]);
      p[i] -= lr * v[i];
    }
  }
}

BatchSampler::BatchSampler(std::size_t count, std::size_t batch, std::uint64_t seed)
    : count_(count), batch_(std::min(batch, count)), rng_(seed), order_(count) {
  if (count == 0) throw Error("batch sampler: empty dataset");
  reshuffle();
}

void BatchSampler::reshuffle() {
  for (std::size_t i = 0; i < count_; ++i) order_[i] = i;
  for (std::size_t i = count_; i > 1; --i) std::swap(order_[i - 1], order_[rng_.below(i)]);
  cursor_ = 0;
}

std::vector<std::size_t> BatchSampler::next() {
  if (cursor_ + batch_ > count_) reshuffle();
  std::vector<std::size_t> out(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                               order_.begin() + static_cast<std::ptrdiff_t>(cursor_ + batch_));
  cursor_ += batch_;
  return out;
}

Tensor gather(const Tensor& stack, std::span<const std::size_t> indices) {
  if (stack.rank() < 1) throw Error("gather: scalar input");
  const std::size_t n = stack.dim(0), row = stack.size() / std::max<std::size_t>(n, 1);
  Shape shape = stack.shape();
  shape[0] = indices.size();
  std::vector<double> data;
  data.reserve(row * indices.size());
  for (auto i : indices) {
    if (i >= n) throw Error("gather: index out of range");
    data.insert(data.end(), stack.ptr() + i * row, stack.ptr() + (i + 1) * row);
  }
  return Tensor(std::move(shape), std::move(data));
}

namespace {

constexpr std::uint64_t kInitStream = 0x1417;
constexpr std::uint64_t kHeadStream = 0x4EAD;
constexpr std::uint64_t kBatchStream = 0xBA7C;

void require_clip_stack(const Tensor& clips, const PwtpConfig& cfg) {
  if (clips.rank() != 6) throw Error("training: expected N x S x T x H x W x C clips");
  if (clips.dim(2) != cfg.frames) throw Error("training: clip T does not match the projector config");
}

/// N x S x T x H x W x C -> (N*S) x T x H x W x C.
Tensor as_segments(const Tensor& clips) {
  const Shape& s = clips.shape();
  return clips.reshaped(Shape{s[0] * s[1], s[2], s[3], s[4], s[5]});
}


ParamSet from_flat(const ParamSet& like, const std::vector<double>& flat) {
  ParamSet out = like.zeros_like();
  out.assign_flat(flat);
  return out;
}

}  // namespace

UnsupResult train_unsupervised(const Tensor& clips, const PwtpConfig& pwtp_cfg, const TrainConfig& cfg) {
  require_clip_stack(clips, pwtp_cfg);
  Rng rng(mix_seed(cfg.seed, kInitStream));
  return train_unsupervised(clips, pwtp_cfg, cfg, init_pwtp_params(pwtp_cfg, clips.dim(5), rng));
}

UnsupResult train_unsupervised(const Tensor& clips, const PwtpConfig& pwtp_cfg, const TrainConfig& cfg,
                               PwtpParams init) {
  pwtp_cfg.validate();
  cfg.validate();
  require_clip_stack(clips, pwtp_cfg);
  UnsupResult out;
  out.params = std::move(init);
  SgdMomentum opt(cfg.momentum, cfg.weight_decay);
  BatchSampler sampler(clips.dim(0), cfg.batch, mix_seed(cfg.seed, kBatchStream));
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const auto idx = sampler.next();
    ad::Tape tape;
    const VarMap theta1 = bind(tape, out.params.weights);
    const PwtpGraph g =
        pwtp_graph(tape.constant(as_segments(gather(clips, idx))), theta1, out.params.running, pwtp_cfg,
                   NormMode::batch);
    const ad::Var loss = enopr(g.residual);
    tape.backward(loss);
    ParamSet grads = gradients(theta1);
    clip_global_norm(grads, cfg.grad_clip);
    const double lr = learning_rate(cfg, step, cfg.steps);
    opt.step(out.params.weights, grads, lr);
    update_running_stats(out.params, g);
    out.log.push_back({step, loss.value().item(), lr});
  }
  return out;
}

JointResult train_joint(const Tensor& clips, std::span<const std::size_t> labels, std::size_t classes,
                        const PwtpConfig& pwtp_cfg, const TrainConfig& cfg, const JointConfig& joint) {
  pwtp_cfg.validate();
  cfg.validate();
  joint.mode.validate();
  require_clip_stack(clips, pwtp_cfg);
  if (labels.size() != clips.dim(0)) throw Error("train_joint: one label per clip required");
  for (auto l : labels)
    if (l >= classes) throw Error("train_joint: label out of range");
  const bool separate = joint.mode.kind == JointMode::Kind::separate;
  if (separate && joint.pretrain_steps > cfg.steps) throw Error("train_joint: pretrain_steps exceeds steps");

  const std::size_t channels = clips.dim(5);
  JointResult out;
  {
    Rng rng(mix_seed(cfg.seed, kInitStream));
    out.theta1 = init_pwtp_params(pwtp_cfg, channels, rng);
    Rng head_rng(mix_seed(cfg.seed, kHeadStream));
    out.theta2 = init_head_params(channels, classes, head_rng);
  }
  SgdMomentum opt1(cfg.momentum, cfg.weight_decay), opt2(cfg.momentum, cfg.weight_decay);
  BatchSampler sampler(clips.dim(0), cfg.batch, mix_seed(cfg.seed, kBatchStream));
  const double nan = std::numeric_limits<double>::quiet_NaN();

  // Separate mode restarts the schedule for the head phase.
  const auto lr_at = [&](std::size_t step) {
    if (!separate) return learning_rate(cfg, step, cfg.steps);
    if (step < joint.pretrain_steps) return learning_rate(cfg, step, joint.pretrain_steps);
    return learning_rate(cfg, step - joint.pretrain_steps, cfg.steps - joint.pretrain_steps);
  };

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const auto idx = sampler.next();
    const Tensor batch = gather(clips, idx);
    std::vector<std::size_t> batch_labels;
    for (auto i : idx) batch_labels.push_back(labels[i]);
    const std::size_t n = idx.size(), segs = batch.dim(1);
    const double lr = lr_at(step);
    ad::Tape tape;
    const VarMap theta2 = bind(tape, out.theta2.weights);

    if (joint.input == InputMode::rgb_baseline) {
      ad::Var logits = head_graph(tape.constant(segment_mean_frames(batch)), theta2);
      ad::Var loss2 = ad::softmax_cross_entropy(logits, batch_labels, cfg.label_smoothing);
      tape.backward(loss2);
      ParamSet h2 = gradients(theta2);
      clip_global_norm(h2, cfg.grad_clip);
      opt2.step(out.theta2.weights, h2, lr);
      out.log.push_back({step, nan, loss2.value().item(), nan});
      continue;
    }

    const bool pretraining = separate && step < joint.pretrain_steps;
    const bool theta1_frozen = separate && !pretraining;
    const VarMap theta1 = bind(tape, out.theta1.weights, !theta1_frozen);
    const PwtpGraph g = pwtp_graph(tape.constant(as_segments(batch)), theta1, out.theta1.running, pwtp_cfg,
                                   theta1_frozen ? NormMode::running : NormMode::batch);
    const ad::Var loss1 = enopr(g.residual);
    const Shape& ds = g.da.shape();
    ad::Var logits = head_graph(ad::reshape(g.da, Shape{n, segs, ds[1], ds[2], ds[3]}), theta2);
    ad::Var loss2 = ad::softmax_cross_entropy(logits, batch_labels, cfg.label_smoothing);

    double alpha = 0.0;
    if (pretraining) {
      tape.backward(loss1);
      ParamSet g1 = gradients(theta1);
      clip_global_norm(g1, cfg.grad_clip);
      opt1.step(out.theta1.weights, g1, lr);
      update_running_stats(out.theta1, g);
      alpha = 1.0;
    } else if (theta1_frozen) {
      tape.backward(loss2);
      ParamSet h2 = gradients(theta2);
      clip_global_norm(h2, cfg.grad_clip);
      opt2.step(out.theta2.weights, h2, lr);
      alpha = 0.0;
    } else {
      tape.backward(loss1);
      const ParamSet g1 = gradients(theta1);
      tape.backward(loss2);
      const ParamSet g2 = gradients(theta1);
      TaskGradients tg{g1.flatten(), g2.flatten(), {}};
      alpha = resolve_alpha(joint.mode, tg, step + 1, cfg.steps);
      // One clip over the whole update so the two parameter groups keep their relative scale.
      ParamSet update = from_flat(g1, combine(tg.g1, tg.g2, alpha));
      update.merge(gradients(theta2));
      clip_global_norm(update, cfg.grad_clip);
      opt1.step(out.theta1.weights, update.with_prefix("theta1/"), lr);
      opt2.step(out.theta2.weights, update.with_prefix("theta2/"), lr);
      update_running_stats(out.theta1, g);
    }
    out.log.push_back({step, loss1.value().item(), loss2.value().item(), alpha});
  }
  return out;
}

Tensor head_inputs(const Tensor& clips, const PwtpParams& theta1, const PwtpConfig& cfg, InputMode mode) {
  if (clips.rank() != 6) throw Error("head_inputs: expected N x S x T x H x W x C clips");
  if (mode == InputMode::rgb_baseline) return segment_mean_frames(clips);
  require_clip_stack(clips, cfg);
  const Shape& s = clips.shape();
  ad::Tape tape;
  const VarMap theta1_vars = bind(tape, theta1.weights, false);
  const PwtpGraph g = pwtp_graph(tape.constant(as_segments(clips)), theta1_vars, theta1.running, cfg,
                                 NormMode::running);
  return g.da.value().reshaped(Shape{s[0], s[1], s[3], s[4], s[5]});
}

double evaluate(const Tensor& clips, std::span<const std::size_t> labels, const PwtpParams& theta1,
                const HeadParams& theta2, const PwtpConfig& cfg, InputMode mode) {
  if (clips.rank() != 6 || labels.size() != clips.dim(0)) throw Error("evaluate: one label per clip required");
  if (labels.empty()) throw Error("evaluate: empty test set");
  constexpr std::size_t kChunk = 16;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < labels.size(); start += kChunk) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(labels.size(), start + kChunk); ++i) idx.push_back(i);
    const Tensor inputs = head_inputs(gather(clips, idx), theta1, cfg, mode);
    ad::Tape tape;
    const VarMap theta2_vars = bind(tape, theta2.weights, false);
    const Tensor logits = head_graph(tape.constant(inputs), theta2_vars).value();
    const std::size_t k = logits.dim(1);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      if (predict(std::span<const double>(logits.ptr() + r * k, k)) == labels[idx[r]]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

double dataset_enopr(const Tensor& clips, const PwtpParams& params, const PwtpConfig& cfg, NormMode mode) {
  require_clip_stack(clips, cfg);
  constexpr std::size_t kChunk = 16;
  const std::size_t n = clips.dim(0);
  double total = 0.0;
  for (std::size_t start = 0; start < n; start += kChunk) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(n, start + kChunk); ++i) idx.push_back(i);
    ad::Tape tape;
    const VarMap theta1 = bind(tape, params.weights, false);
    const PwtpGraph g =
        pwtp_graph(tape.constant(as_segments(gather(clips, idx))), theta1, params.running, cfg, mode);
    total += enopr(g.residual).value().item() * static_cast<double>(g.residual.shape()[0]);
  }
  return total / static_cast<double>(n * clips.dim(1));
}

ParamSet checkpoint_params(const PwtpParams& theta1, const HeadParams* theta2) {
  ParamSet out = theta1.all();
  if (theta2) out.merge(theta2->weights);
  return out;
}

namespace {

void take_expected(const ParamSet& checkpoint, const ParamSet& expected, ParamSet& dst, const char* what) {
  for (const auto& [name, like] : expected) {
    if (!checkpoint.contains(name)) throw Error(std::string(what) + ": checkpoint lacks tensor '" + name + "'");
    const Tensor& t = checkpoint.get(name);
    if (t.shape() != like.shape()) {
      throw Error(std::string(what) + ": tensor '" + name + "' has shape " + shape_string(t.shape()) + ", expected " +
                  shape_string(like.shape()));
    }
    dst.set(name, t);
  }
}

}  // namespace

PwtpParams load_theta1(const ParamSet& checkpoint, const PwtpConfig& cfg, std::size_t channels) {
  PwtpParams p;
  take_expected(checkpoint, pwtp_param_shapes(cfg, channels), p.weights, "theta1");
  ParamSet running;
  const std::size_t f = cfg.hidden_width();
  for (std::size_t j = 0; j < cfg.mlp.blocks; ++j) {
    const std::string b = "theta1/mlp/block" + std::to_string(j) + "/norm/";
    running.insert(b + "running_mean", Tensor(Shape{f}));
    running.insert(b + "running_var", Tensor(Shape{f}));
  }
  take_expected(checkpoint, running, p.running, "theta1");
  return p;
}

HeadParams load_theta2(const ParamSet& checkpoint, std::size_t channels, std::size_t classes) {
  HeadParams h;
  take_expected(checkpoint, head_param_shapes(channels, classes), h.weights, "theta2");
  return h;
}

namespace {

double finish(const ad::Var& loss, ad::Tape& tape, const VarMap& vars, ParamSet* grad) {
  if (grad) {
    tape.backward(loss);
    *grad = gradients(vars);
  }
  return loss.value().item();
}

}  // namespace

Objective enopr_objective(Tensor segments, PwtpConfig cfg, ParamSet running) {
  return [segments = std::move(segments), cfg, running = std::move(running)](const ParamSet& params, ParamSet* grad) {
    ad::Tape tape;
    const VarMap theta1 = bind(tape, params);
    const PwtpGraph g = pwtp_graph(tape.constant(segments), theta1, running, cfg, NormMode::batch);
    return finish(enopr(g.residual), tape, theta1, grad);
  };
}

Objective recognition_objective(Tensor clips, std::vector<std::size_t> labels, PwtpConfig cfg, ParamSet running,
                                double smoothing) {
  require_clip_stack(clips, cfg);
  return [clips = std::move(clips), labels = std::move(labels), cfg, running = std::move(running), smoothing](
             const ParamSet& params, ParamSet* grad) {
    const Shape& s = clips.shape();
    ad::Tape tape;
    const VarMap vars = bind(tape, params);
    const PwtpGraph g = pwtp_graph(tape.constant(as_segments(clips)), vars, running, cfg, NormMode::batch);
    ad::Var logits = head_graph(ad::reshape(g.da, Shape{s[0], s[1], s[3], s[4], s[5]}), vars);
    return finish(ad::softmax_cross_entropy(logits, labels, smoothing), tape, vars, grad);
  };
}

}  // namespace pwtp
