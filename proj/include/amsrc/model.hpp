#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "amsrc/nn.hpp"
#include "amsrc/stc.hpp"
#include "amsrc/tensor.hpp"

namespace amsrc {

struct Ablation {
  bool use_flow = true;
  bool use_fgfm = true;  // false: fea_frame + fea_flow
};

// Architecture hyperparameters. Each of the `levels` encoder levels is a
// stride-1 conv block followed by a stride-2 conv block; the stride-1 output is
// the skip for that resolution.
struct ModelConfig {
  int t = 4;
  int levels = 3;
  std::vector<int> widths{32, 64, 128};
  Ablation ablation;

  void validate() const;
  int latent_channels() const { return widths.back(); }
  int latent_size() const { return kClipSize >> levels; }
  Shape latent_shape() const { return {latent_channels(), latent_size(), latent_size()}; }
};

enum class Mode { train, eval };

using TensorMap = std::map<std::string, Tensor<float>>;

// Learnable tensors keyed by layer name plus batch-norm running statistics.
template <class T>
struct ModelParameters {
  ModelConfig config;
  std::map<std::string, Tensor<T>> tensors;
  std::map<std::string, Tensor<T>> buffers;

  template <class U>
  ModelParameters<U> cast() const {
    ModelParameters<U> out;
    out.config = config;
    for (const auto& [k, v] : tensors) out.tensors.emplace(k, v.template cast<U>());
    for (const auto& [k, v] : buffers) out.buffers.emplace(k, v.template cast<U>());
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [k, v] : tensors) n += v.size();
    return n;
  }

  bool all_finite() const;
};

// Weights whose name ends in ".weight" are multiplicative and enter the
// regularizer; biases and batch-norm affine terms do not.
bool is_decayed_weight(const std::string& name);

template <class T>
using Gradients = std::map<std::string, Tensor<T>>;

template <class T>
Gradients<T> zero_gradients(const ModelParameters<T>& params) {
  Gradients<T> g;
  for (const auto& [k, v] : params.tensors) g.emplace(k, Tensor<T>(v.shape()));
  return g;
}

template <class T>
ModelParameters<T> init_parameters(const ModelConfig& config, std::uint64_t seed);

template <class T>
struct BlockTrace {
  Tensor<T> input;
  nn::BatchNormCache<T> bn;
  Tensor<T> output;  // post-ReLU
};

template <class T>
struct EncoderTrace {
  std::vector<BlockTrace<T>> blocks;  // 2 per level: stride-1 then stride-2
};

template <class T>
struct ForwardTrace {
  Mode mode = Mode::train;
  Ablation ablation;
  EncoderTrace<T> frame_enc;
  EncoderTrace<T> flow_enc;
  std::vector<int> dec_upsampled_channels;
  std::vector<BlockTrace<T>> dec_blocks;
  Tensor<T> head_input;
  Tensor<T> xhat;
};

// Batched outputs. fea_flow is empty when the flow stream is disabled.
template <class T>
struct BatchOutput {
  Tensor<T> xhat;       // [N,1,32,32]
  Tensor<T> fea_frame;  // [N,C,h,w]
  Tensor<T> fea_flow;   // [N,C,h,w] or empty
  Tensor<T> fused;      // [N,C,h,w]
};

// frames [N,t,32,32]; flows [N,2t,32,32] (may be empty when use_flow=false).
template <class T>
BatchOutput<T> forward_batch(const ModelParameters<T>& params, const Tensor<T>& frames, const Tensor<T>& flows,
                             const Ablation& ablation, Mode mode, ForwardTrace<T>* trace = nullptr);

// Back-propagates dL/dxhat and dL/dfea_{frame,flow} (either may be empty) and
// accumulates into grads.
template <class T>
void backward_batch(const ModelParameters<T>& params, const ForwardTrace<T>& trace, const Tensor<T>& dxhat,
                    const Tensor<T>& dfea_frame, const Tensor<T>& dfea_flow, Gradients<T>& grads);

// Exponential moving average of the batch statistics recorded in trace.
template <class T>
void update_running_stats(ModelParameters<T>& params, const ForwardTrace<T>& trace, T momentum);

// ---- single-clip operations ------------------------------------------------

struct SkipStack {
  std::vector<Tensorf> levels;  // one [C_l, H_l, W_l] per resolution, finest first
};

struct LatentPair {
  Tensorf fea_frame;
  std::optional<Tensorf> fea_flow;
};

struct EncodedFrames {
  Tensorf fea_frame;
  SkipStack skips;
};

EncodedFrames encode_frames(const Tensorf& input_frames, const ModelParameters<float>& params);
Tensorf encode_flows(const Tensorf& input_flows, const ModelParameters<float>& params);
Tensorf decode(const Tensorf& fused, const SkipStack& skips, const ModelParameters<float>& params);

// fea_frame + sigmoid(fea_frame) * fea_flow, elementwise.
template <class T>
Tensor<T> fgfm_fuse(const Tensor<T>& fea_frame, const Tensor<T>& fea_flow) {
  require_same_shape(fea_frame, fea_flow, "fgfm_fuse");
  Tensor<T> out(fea_frame.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fea_frame[i] + nn::sigmoid(fea_frame[i]) * fea_flow[i];
  return out;
}

struct ForwardResult {
  Tensorf xhat;  // [1,32,32]
  LatentPair latents;
};

ForwardResult forward(const StClip& clip, const ModelParameters<float>& params, const Ablation& ablation);
inline ForwardResult forward(const StClip& clip, const ModelParameters<float>& params) {
  return forward(clip, params, params.config.ablation);
}

// Batch-of-clips helpers used by training and scoring.
struct ClipBatch {
  Tensorf frames;   // [N,t,32,32]
  Tensorf flows;    // [N,2t,32,32]
  Tensorf targets;  // [N,1,32,32]
};
ClipBatch make_batch(std::span<const StClip> clips, std::span<const std::size_t> indices, bool with_flow);

// Checkpoint archive: magic, version, config, named tensors.
void save_checkpoint(const std::filesystem::path& path, const ModelParameters<float>& params);
ModelParameters<float> load_checkpoint(const std::filesystem::path& path);

std::string config_to_string(const ModelConfig& c);

}  // namespace amsrc
