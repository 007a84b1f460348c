#include "amsrc/trainer.hpp"

#include <cmath>
#include <numeric>

#include "amsrc/rng.hpp"

namespace amsrc {

double learning_rate_at(const TrainConfig& config, int epoch) {
  return config.learning_rate * std::pow(config.decay_factor, epoch / config.decay_every_epochs);
}

template <class T>
LossReport batch_objective(const ModelParameters<T>& params, const Tensor<T>& frames, const Tensor<T>& flows,
                           const Tensor<T>& targets, const LossWeights& weights, const Ablation& ablation,
                           bool use_consistency, Mode mode, Gradients<T>* grads, ForwardTrace<T>* trace) {
  ForwardTrace<T> local;
  ForwardTrace<T>* tr = trace ? trace : (grads ? &local : nullptr);
  const BatchOutput<T> out = forward_batch(params, frames, flows, ablation, mode, tr);

  Tensor<T> g_int, g_gd, g_frame, g_flow;
  const T l_int = intensity_loss(out.xhat, targets, grads ? &g_int : nullptr);
  const T l_gd = gradient_loss(out.xhat, targets, grads ? &g_gd : nullptr);
  T l_sim{0};
  if (ablation.use_flow)
    l_sim = batch_consistency_loss(out.fea_frame, out.fea_flow, grads ? &g_frame : nullptr, grads ? &g_flow : nullptr);
  LossWeights effective = weights;
  if (!use_consistency || !ablation.use_flow) effective.lambda_sim = 0.0;
  const T l_reg = regularization_loss(params, grads, static_cast<T>(effective.lambda_model));
  const LossReport report = total_loss(l_int, l_gd, l_sim, l_reg, effective);

  if (grads) {
    Tensor<T> dxhat(out.xhat.shape());
    for (std::size_t i = 0; i < dxhat.size(); ++i)
      dxhat[i] = static_cast<T>(effective.lambda_int) * g_int[i] + static_cast<T>(effective.lambda_gd) * g_gd[i];
    Tensor<T> dframe, dflow;
    if (effective.lambda_sim != 0.0) {
      const T s = static_cast<T>(effective.lambda_sim);
      for (auto& v : g_frame.values()) v *= s;
      for (auto& v : g_flow.values()) v *= s;
      dframe = std::move(g_frame);
      dflow = std::move(g_flow);
    }
    backward_batch(params, *tr, dxhat, dframe, dflow, *grads);
  }
  return report;
}

template LossReport batch_objective<float>(const ModelParameters<float>&, const Tensor<float>&, const Tensor<float>&,
                                           const Tensor<float>&, const LossWeights&, const Ablation&, bool, Mode,
                                           Gradients<float>*, ForwardTrace<float>*);
template LossReport batch_objective<double>(const ModelParameters<double>&, const Tensor<double>&,
                                            const Tensor<double>&, const Tensor<double>&, const LossWeights&,
                                            const Ablation&, bool, Mode, Gradients<double>*, ForwardTrace<double>*);

void AdamOptimizer::step(ModelParameters<float>& params, const Gradients<float>& grads, double lr) {
  ++step_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
  for (auto& [name, p] : params.tensors) {
    const Tensorf& g = grads.at(name);
    auto& m = m_[name];
    auto& v = v_[name];
    if (m.empty()) {
      m.assign(p.size(), 0.0f);
      v.assign(p.size(), 0.0f);
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = static_cast<float>(beta1_ * m[i] + (1.0 - beta1_) * g[i]);
      v[i] = static_cast<float>(beta2_ * v[i] + (1.0 - beta2_) * static_cast<double>(g[i]) * g[i]);
      const double mhat = m[i] / c1, vhat = v[i] / c2;
      p[i] = static_cast<float>(p[i] - lr * mhat / (std::sqrt(vhat) + eps_));
    }
  }
}

TrainResult train(const TrainConfig& config, std::span<const StClip> clips, const EpochCallback& on_epoch) {
  config.validate();
  if (clips.empty()) fail(ErrorKind::data, "train: no training clips");
  const Ablation ablation = config.model.ablation;
  TrainResult result;
  result.params = init_parameters<float>(config.model, config.seed);
  AdamOptimizer adam(config.adam_beta1, config.adam_beta2, config.adam_eps);
  Rng shuffle_rng(derive_seed(config.seed, "shuffle"));
  std::vector<std::size_t> order(clips.size());
  std::iota(order.begin(), order.end(), 0);
  long step = 0;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = learning_rate_at(config, epoch);
    shuffle_rng.shuffle(order.begin(), order.end());
    EpochRecord rec;
    rec.epoch = epoch;
    rec.learning_rate = lr;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      const ClipBatch b = make_batch(clips, std::span<const std::size_t>(order).subspan(start, end - start), ablation.use_flow);
      Gradients<float> grads = zero_gradients(result.params);
      ForwardTrace<float> trace;
      LossReport r;
      try {
        r = batch_objective(result.params, b.frames, b.flows, b.targets, config.loss, ablation, config.use_consistency,
                            Mode::train, &grads, &trace);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::numerical) throw;
        fail(ErrorKind::numerical, "training diverged at step " + std::to_string(step) + " (epoch " +
                                       std::to_string(epoch) + "): " + e.what());
      }
      if (!std::isfinite(r.total))
        fail(ErrorKind::numerical, "training diverged at step " + std::to_string(step) + ": total loss is not finite");
      adam.step(result.params, grads, lr);
      update_running_stats(result.params, trace, static_cast<float>(config.bn_momentum));
      rec.mean_loss.l_int += r.l_int;
      rec.mean_loss.l_gd += r.l_gd;
      rec.mean_loss.l_sim += r.l_sim;
      rec.mean_loss.l_reg += r.l_reg;
      rec.mean_loss.total += r.total;
      ++batches;
      ++step;
    }
    for (double* v : {&rec.mean_loss.l_int, &rec.mean_loss.l_gd, &rec.mean_loss.l_sim, &rec.mean_loss.l_reg,
                      &rec.mean_loss.total})
      *v /= batches;
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  if (!result.params.all_finite()) fail(ErrorKind::numerical, "training produced non-finite parameters");

  result.train_scores = object_scores(clips, result.params, ablation);
  result.stats = fit_norm_stats(result.train_scores);
  return result;
}

}  // namespace amsrc
