#pragma once

#include <functional>
#include <span>
#include <vector>

#include "amsrc/config.hpp"
#include "amsrc/model.hpp"
#include "amsrc/objectives.hpp"
#include "amsrc/scoring.hpp"
#include "amsrc/stc.hpp"

namespace amsrc {

// lr * decay^floor(epoch / decay_every).
double learning_rate_at(const TrainConfig& config, int epoch);

// Loss on one batch (mean over clips) and, when grads is non-null, its
// gradient w.r.t. every parameter. use_consistency=false zeroes the
// consistency weight; l_sim is still reported.
template <class T>
LossReport batch_objective(const ModelParameters<T>& params, const Tensor<T>& frames, const Tensor<T>& flows,
                           const Tensor<T>& targets, const LossWeights& weights, const Ablation& ablation,
                           bool use_consistency, Mode mode, Gradients<T>* grads, ForwardTrace<T>* trace = nullptr);

class AdamOptimizer {
 public:
  AdamOptimizer(double beta1, double beta2, double eps) : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ModelParameters<float>& params, const Gradients<float>& grads, double lr);
  long steps() const noexcept { return step_; }

 private:
  double beta1_, beta2_, eps_;
  long step_ = 0;
  std::map<std::string, std::vector<float>> m_, v_;
};

struct EpochRecord {
  int epoch = 0;
  double learning_rate = 0.0;
  LossReport mean_loss;  // averaged over the epoch's batches
};

struct TrainResult {
  ModelParameters<float> params;
  NormStats stats;
  std::vector<EpochRecord> history;
  std::vector<ObjectScore> train_scores;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Adam on shuffled batches with the step schedule, then NormStats fitted on
// every training clip under the final parameters. Throws ErrorKind::numerical
// with the step index if the loss stops being finite.
TrainResult train(const TrainConfig& config, std::span<const StClip> train_clips, const EpochCallback& on_epoch = {});

}  // namespace amsrc
