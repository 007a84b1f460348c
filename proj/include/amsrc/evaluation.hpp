#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "amsrc/scoring.hpp"
#include "amsrc/video.hpp"

namespace amsrc {

// Area under the ROC curve as the Mann-Whitney statistic
// P(pos > neg) + 0.5 P(pos == neg), via mid-ranks. Throws when a class is missing.
double auroc(std::span<const double> scores, std::span<const int> labels);

struct LabeledScores {
  std::vector<double> scores;
  std::vector<int> labels;
};

// Concatenates all frames (single global ROC). Throws when a scored video has
// no labels or the frame counts disagree.
LabeledScores align_scores(std::span<const FrameScore> frames, const FrameLabels& labels);

struct CurveRow {
  int frame_index = 0;
  double score = 0.0;
  int label = 0;
};

// Writes `<dir>/<video_id>.csv` with header `frame_index,score,label`.
void export_curves(std::span<const FrameScore> frames, const FrameLabels& labels, const std::filesystem::path& dir);
std::vector<CurveRow> read_curve(const std::filesystem::path& path);

}  // namespace amsrc
