#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "amsrc/model.hpp"
#include "amsrc/stc.hpp"

namespace amsrc {

struct ObjectScore {
  std::string video_id;
  int frame_index = 0;
  std::string object_id;
  double s_f = 0.0;  // appearance/motion inconsistency, 0 when the flow stream is off
  double s_p = 0.0;  // prediction error
};

struct NormStats {
  double u_f = 0.0;
  double delta_f = 1.0;
  double u_p = 0.0;
  double delta_p = 1.0;
};

struct ScoreWeights {
  double w_f = 0.5;
  double w_p = 0.5;

  void validate() const;
};

struct FrameScore {
  std::string video_id;
  int frame_index = 0;
  double s = 0.0;
  int n_objects = 0;
  double s_f_max = 0.0;
  double s_p_max = 0.0;
};

struct FrameKey {
  std::string video_id;
  int frame_index = 0;
};

inline constexpr double kStdFloor = 1e-12;

ObjectScore object_score(const StClip& clip, const ModelParameters<float>& params, const Ablation& ablation);
// Batched evaluation; same values as object_score up to GEMM summation order.
std::vector<ObjectScore> object_scores(std::span<const StClip> clips, const ModelParameters<float>& params,
                                       const Ablation& ablation, int batch_size = 64);

// Mean and population standard deviation (floored at 1e-12).
NormStats fit_norm_stats(std::span<const ObjectScore> train_scores);

double fuse_scores(const ObjectScore& obj, const NormStats& stats, const ScoreWeights& weights);

// Max fused object score per frame. Frames without objects take the minimum
// fused score of their video (or of all objects if the video has none).
std::vector<FrameScore> frame_scores(std::span<const ObjectScore> objects, const NormStats& stats,
                                     const ScoreWeights& weights, std::span<const FrameKey> universe);

void save_stats(const std::filesystem::path& path, const NormStats& stats, const std::string& config_hash);
NormStats load_stats(const std::filesystem::path& path);

// `video_id,frame_index,score,n_objects,s_f_max,s_p_max` with a header row.
void write_frame_scores(const std::filesystem::path& path, std::span<const FrameScore> scores);
std::vector<FrameScore> read_frame_scores(const std::filesystem::path& path);

}  // namespace amsrc
