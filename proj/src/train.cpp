// Copyright (c) 2026 the freqmoe authors
// SPDX-License-Identifier: Apache-2.0

#include "freqmoe/train.hpp"

#include <cmath>
#include <ostream>

#include <nlohmann/json.hpp>

#include "freqmoe/errors.hpp"

namespace freqmoe {

namespace {
constexpr double kPi = 3.14159265358979323846264338328;
constexpr double kAdamEps = 1e-8;
}  // namespace

void TrainConfig::validate() const {
  if (batch < 1) throw ConfigError("train: batch must be positive");
  if (!(lr > 0.0)) throw ConfigError("train: lr must be positive");
  if (!(min_lr_ratio > 0.0 && min_lr_ratio <= 1.0))
    throw ConfigError("train: min_lr_ratio must lie in (0, 1]");
  if (sparsity_weight < 0.0) throw ConfigError("train: sparsity weight must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0))
    throw ConfigError("train: betas must lie in [0, 1)");
  if (warmup_steps < 0 || cosine_epochs < 0 || steady_epochs < 0 || burn_in_masked < 0)
    throw ConfigError("train: negative schedule parameter");
  if (!(clip_norm > 0.0)) throw ConfigError("train: clip_norm must be positive");
}

double lr_at(long long step, long long steps_per_epoch, const TrainConfig& cfg) {
  if (steps_per_epoch < 1) throw ConfigError("lr_at: steps_per_epoch must be positive");
  if (step < 0) throw ConfigError("lr_at: negative step");
  if (step < cfg.warmup_steps)
    return cfg.lr * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  const long long cosine_end = static_cast<long long>(cfg.cosine_epochs) * steps_per_epoch;
  if (step >= cosine_end || cosine_end <= cfg.warmup_steps) return cfg.lr * cfg.min_lr_ratio;
  const double t = static_cast<double>(step - cfg.warmup_steps) /
                   static_cast<double>(cosine_end - cfg.warmup_steps);
  return cfg.lr * (cfg.min_lr_ratio + (1.0 - cfg.min_lr_ratio) * 0.5 * (1.0 + std::cos(kPi * t)));
}

OptimizerState make_adam_state(const std::vector<ParamView>& views) {
  Eigen::Index total = 0;
  for (const auto& v : views) total += v.size;
  OptimizerState st;
  st.m = Eigen::VectorXd::Zero(total);
  st.v = Eigen::VectorXd::Zero(total);
  return st;
}

void adam_step(const std::vector<ParamView>& params, const std::vector<ParamView>& grads,
               OptimizerState& state, double lr, const TrainConfig& cfg,
               const std::vector<char>* frozen) {
  if (params.size() != grads.size()) throw ConfigError("adam_step: view list mismatch");
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  Eigen::Index off = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Eigen::Index n = params[i].size;
    if (grads[i].size != n) throw ConfigError("adam_step: gradient size mismatch");
    if (frozen && (*frozen)[i]) {
      off += n;
      continue;
    }
    Eigen::Map<Eigen::ArrayXd> p(params[i].data, n);
    Eigen::Map<const Eigen::ArrayXd> g(grads[i].data, n);
    if (!g.isFinite().all())
      throw RuntimeError("adam_step: non-finite gradient in " + params[i].name + " at step " +
                         std::to_string(state.step));
    auto m = state.m.segment(off, n).array();
    auto v = state.v.segment(off, n).array();
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.square();
    p -= lr * (m / bc1) / ((v / bc2).sqrt() + kAdamEps);
    off += n;
  }
}

double l2_relative_error(const Field& pred, const Field& target) {
  if (pred.data.rows() != target.data.rows() || pred.data.cols() != target.data.cols())
    throw ConfigError("l2_relative_error: shape mismatch");
  const double tn = target.data.norm();
  if (tn == 0.0) throw DataError("l2_relative_error: zero-norm target");
  return (pred.data - target.data).norm() / tn;
}

double total_loss(double task, double sparsity, double lambda) {
  return task + lambda * sparsity;
}

namespace {

struct Split {
  std::vector<int> train;
  std::vector<int> val;
};

// 90/10 by whole trajectories, first trajectories to train; a one-trajectory
// dataset validates on its training samples.
Split split_dataset(const Dataset& d) {
  const int n_traj = d.num_trajectories();
  const int tl = d.meta.traj_len;
  const int n_val = (n_traj >= 2) ? std::max(1, n_traj / 10) : 0;
  Split s;
  for (int t = 0; t < n_traj; ++t)
    for (int i = 0; i < tl; ++i)
      ((t < n_traj - n_val) ? s.train : s.val).push_back(t * tl + i);
  if (s.val.empty()) s.val = s.train;
  return s;
}

void zero_views(const std::vector<ParamView>& views) {
  for (const auto& v : views) Eigen::Map<Eigen::ArrayXd>(v.data, v.size).setZero();
}

double grad_norm(const std::vector<ParamView>& views, const std::vector<char>* frozen) {
  double sq = 0.0;
  for (std::size_t i = 0; i < views.size(); ++i) {
    if (frozen && (*frozen)[i]) continue;
    sq += Eigen::Map<const Eigen::ArrayXd>(views[i].data, views[i].size).square().sum();
  }
  return std::sqrt(sq);
}

void scale_views(const std::vector<ParamView>& views, double s, const std::vector<char>* frozen) {
  for (std::size_t i = 0; i < views.size(); ++i) {
    if (frozen && (*frozen)[i]) continue;
    Eigen::Map<Eigen::ArrayXd>(views[i].data, views[i].size) *= s;
  }
}

// Per-sample relative-L2 task term and its gradient scaled for a
// batch-mean reduction.
double task_and_grad(const Field& pred, const Field& target, double inv_batch, Field& dy) {
  const double tn = target.data.norm();
  if (tn == 0.0) throw DataError("training: zero-norm target sample");
  Eigen::MatrixXd diff = pred.data - target.data;
  const double dn = diff.norm();
  dy.data = (dn == 0.0) ? Eigen::MatrixXd::Zero(diff.rows(), diff.cols()).eval()
                        : ((inv_batch / (dn * tn)) * diff).eval();
  return dn / tn;
}

void check_data_compat(const Dataset& data, int grid, int in_ch, int out_ch) {
  if (data.inputs.empty()) throw DataError("training: empty dataset");
  if (data.meta.grid != grid) throw ConfigError("training: dataset grid does not match model");
  if (data.inputs[0].channels() != in_ch || data.targets[0].channels() != out_ch)
    throw ConfigError("training: dataset channels do not match model");
}

void emit_metrics(std::ostream* metrics, const EpochMetrics& em,
                  const std::vector<int>* expert_bands) {
  if (!metrics) return;
  nlohmann::json j;
  j["epoch"] = em.epoch;
  j["train_loss"] = em.train_loss;
  j["train_task"] = em.train_task;
  j["train_sparsity"] = em.train_sparsity;
  j["val_l2re"] = em.val_l2re;
  j["lr"] = em.lr_last;
  j["clip_events"] = em.clip_events;
  if (expert_bands) {
    j["val_l2re_topk"] = em.val_l2re_topk;
    j["mean_gate"] = em.mean_gate;
    j["expert_bands"] = *expert_bands;
  }
  (*metrics) << j.dump() << "\n";
}

}  // namespace

FitResult fit_dense(DenseFno& model, const Dataset& data, const TrainConfig& cfg, int epochs,
                    std::ostream* metrics) {
  cfg.validate();
  model.config.validate();
  check_data_compat(data, model.config.grid, model.config.in_channels,
                    model.config.out_channels);
  const Split sp = split_dataset(data);
  auto views = param_views(model);
  DenseFno grads = zeros_like(model);
  auto gviews = param_views(grads);
  OptimizerState st = make_adam_state(views);
  Rng shuffle_rng = Rng::stream(cfg.seed, "shuffle");
  const int n_train = static_cast<int>(sp.train.size());
  const long long spe = (n_train + cfg.batch - 1) / cfg.batch;
  long long gstep = 0;
  FitResult res;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    const std::vector<int> perm = shuffle_rng.permutation(n_train);
    EpochMetrics em;
    em.epoch = epoch;
    double task_sum = 0.0;
    for (int b0 = 0; b0 < n_train; b0 += cfg.batch) {
      const int bsz = std::min(cfg.batch, n_train - b0);
      zero_views(gviews);
      double batch_task = 0.0;
      for (int i = 0; i < bsz; ++i) {
        const int idx = sp.train[static_cast<std::size_t>(perm[static_cast<std::size_t>(b0 + i)])];
        FnoTape tape;
        const Field pred = fno_forward(model, data.inputs[static_cast<std::size_t>(idx)], &tape);
        Field dy(model.config.out_channels, model.config.grid);
        batch_task += task_and_grad(pred, data.targets[static_cast<std::size_t>(idx)],
                                    1.0 / bsz, dy);
        fno_backward(model, tape, dy, grads);
      }
      const double batch_loss = batch_task / bsz;
      if (!std::isfinite(batch_loss))
        throw RuntimeError("fit: non-finite loss at step " + std::to_string(gstep + 1));
      task_sum += batch_task;
      const double gn = grad_norm(gviews, nullptr);
      if (gn > cfg.clip_norm) {
        scale_views(gviews, cfg.clip_norm / gn, nullptr);
        ++em.clip_events;
      }
      ++gstep;
      em.lr_last = lr_at(gstep, spe, cfg);
      adam_step(views, gviews, st, em.lr_last, cfg, nullptr);
    }
    em.train_task = task_sum / n_train;
    em.train_loss = em.train_task;
    double val_sum = 0.0;
    for (int idx : sp.val)
      val_sum += l2_relative_error(fno_forward(model, data.inputs[static_cast<std::size_t>(idx)]),
                                   data.targets[static_cast<std::size_t>(idx)]);
    em.val_l2re = val_sum / static_cast<double>(sp.val.size());
    em.val_l2re_topk = em.val_l2re;
    emit_metrics(metrics, em, nullptr);
    res.epochs.push_back(std::move(em));
  }
  res.final_val_l2re = res.epochs.empty() ? 0.0 : res.epochs.back().val_l2re;
  res.steps = gstep;
  return res;
}

FitResult fit_moe(FreqMoe& model, const Dataset& data, const TrainConfig& cfg, int epochs,
                  std::ostream* metrics) {
  cfg.validate();
  model.validate();
  check_data_compat(data, model.config.grid, model.config.in_channels,
                    model.config.out_channels);
  const Split sp = split_dataset(data);
  auto views = param_views(model);
  FreqMoe grads = zeros_like(model);
  auto gviews = param_views(grads);
  OptimizerState st = make_adam_state(views);
  std::vector<char> frozen(views.size(), 0);
  if (cfg.freeze_base)
    for (std::size_t i = 0; i < views.size(); ++i)
      if (views[i].name.find(".base.") != std::string::npos) frozen[i] = 1;
  const std::vector<char>* frozen_ptr = cfg.freeze_base ? &frozen : nullptr;

  Rng shuffle_rng = Rng::stream(cfg.seed, "shuffle");
  const int n_train = static_cast<int>(sp.train.size());
  const long long spe = (n_train + cfg.batch - 1) / cfg.batch;
  const int n_layers = model.config.layers;
  const int n_experts = model.num_experts();
  long long gstep = 0;
  FitResult res;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    const std::vector<int> perm = shuffle_rng.permutation(n_train);
    EpochMetrics em;
    em.epoch = epoch;
    double task_sum = 0.0, sparsity_sum = 0.0;
    long long sparsity_samples = 0;
    for (int b0 = 0; b0 < n_train; b0 += cfg.batch) {
      const int bsz = std::min(cfg.batch, n_train - b0);
      const bool masked = gstep < cfg.burn_in_masked;
      zero_views(gviews);
      double batch_task = 0.0;
      std::vector<Eigen::MatrixXd> batch_gates;
      const Eigen::MatrixXd gate_extra =
          masked ? Eigen::MatrixXd::Zero(n_layers, n_experts)
                 : Eigen::MatrixXd::Constant(
                       n_layers, n_experts,
                       cfg.sparsity_weight / (static_cast<double>(n_layers) * bsz));
      for (int i = 0; i < bsz; ++i) {
        const int idx = sp.train[static_cast<std::size_t>(perm[static_cast<std::size_t>(b0 + i)])];
        MoeTape tape;
        const Field pred =
            moe_forward_train(model, data.inputs[static_cast<std::size_t>(idx)], &tape, masked);
        Field dy(model.config.out_channels, model.config.grid);
        batch_task += task_and_grad(pred, data.targets[static_cast<std::size_t>(idx)],
                                    1.0 / bsz, dy);
        moe_backward(model, tape, dy, gate_extra, grads);
        if (!masked && n_experts > 0) batch_gates.push_back(tape.gates);
      }
      double batch_sparsity = 0.0;
      if (!batch_gates.empty()) {
        batch_sparsity = sparsity_loss(batch_gates);
        sparsity_sum += batch_sparsity * bsz;
        sparsity_samples += bsz;
      }
      const double batch_loss =
          total_loss(batch_task / bsz, batch_sparsity, masked ? 0.0 : cfg.sparsity_weight);
      if (!std::isfinite(batch_loss))
        throw RuntimeError("fit: non-finite loss at step " + std::to_string(gstep + 1));
      task_sum += batch_task;
      const double gn = grad_norm(gviews, frozen_ptr);
      if (gn > cfg.clip_norm) {
        scale_views(gviews, cfg.clip_norm / gn, frozen_ptr);
        ++em.clip_events;
      }
      ++gstep;
      em.lr_last = lr_at(gstep, spe, cfg);
      adam_step(views, gviews, st, em.lr_last, cfg, frozen_ptr);
    }
    em.train_task = task_sum / n_train;
    em.train_sparsity = sparsity_samples > 0 ? sparsity_sum / sparsity_samples : 0.0;
    em.train_loss = total_loss(em.train_task, em.train_sparsity,
                               sparsity_samples > 0 ? cfg.sparsity_weight : 0.0);
    double val_sum = 0.0, val_topk_sum = 0.0;
    Eigen::VectorXd gate_acc = Eigen::VectorXd::Zero(n_experts);
    for (int idx : sp.val) {
      MoeTape tape;
      const Field pred =
          moe_forward_train(model, data.inputs[static_cast<std::size_t>(idx)], &tape, false);
      val_sum += l2_relative_error(pred, data.targets[static_cast<std::size_t>(idx)]);
      if (n_experts > 0) gate_acc += tape.gates.colwise().mean().transpose();
      const Field pred_topk =
          moe_forward_infer(model, data.inputs[static_cast<std::size_t>(idx)], model.top_k);
      val_topk_sum += l2_relative_error(pred_topk, data.targets[static_cast<std::size_t>(idx)]);
    }
    em.val_l2re = val_sum / static_cast<double>(sp.val.size());
    em.val_l2re_topk = val_topk_sum / static_cast<double>(sp.val.size());
    if (n_experts > 0) {
      gate_acc /= static_cast<double>(sp.val.size());
      em.mean_gate.assign(gate_acc.data(), gate_acc.data() + gate_acc.size());
    }
    emit_metrics(metrics, em, &model.expert_bands);
    res.epochs.push_back(std::move(em));
  }
  res.final_val_l2re = res.epochs.empty() ? 0.0 : res.epochs.back().val_l2re;
  res.steps = gstep;
  return res;
}

}  // namespace freqmoe
